#pragma once

#include <iosfwd>
#include <map>
#include <string>

namespace gft {

// Type-wise hit counts plus overall accuracy (OA) and the unweighted average
// of per-type accuracies (AA).
struct Metrics {
    struct TypeStat {
        std::size_t correct = 0, total = 0;
        double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
    };

    std::map<std::string, TypeStat> per_type;
    std::size_t correct = 0, total = 0;

    void add(const std::string& type, bool is_correct);
    void register_type(const std::string& type);  // empty buckets are reported, excluded from AA

    double oa() const;
    // Unweighted mean over types with at least one sample; warns per skipped bucket.
    double aa(std::ostream* warn = nullptr) const;
};

// Type-wise table in the benchmark column order, then OA / AA.
void print_metrics_table(std::ostream& os, const Metrics& m);

// CSV: type, correct, total, accuracy rows plus OA/AA footer rows.
void write_metrics_csv(const Metrics& m, const std::string& path);

}  // namespace gft
