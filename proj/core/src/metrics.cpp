#include "gft/metrics.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <vector>

#include "gft/errors.hpp"

namespace gft {

void Metrics::add(const std::string& type, bool is_correct) {
    auto& t = per_type[type];
    t.total += 1;
    total += 1;
    if (is_correct) {
        t.correct += 1;
        correct += 1;
    }
}

void Metrics::register_type(const std::string& type) { per_type[type]; }

double Metrics::oa() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }

double Metrics::aa(std::ostream* warn) const {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& [type, stat] : per_type) {
        if (stat.total == 0) {
            if (warn) *warn << "warning: question type '" << type << "' has no samples; excluded from AA\n";
            continue;
        }
        sum += stat.accuracy();
        ++n;
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

namespace {

// Benchmark table column order.
const std::vector<std::pair<std::string, std::string>>& column_order() {
    static const std::vector<std::pair<std::string, std::string>> v = {
        {"Number", "Number"}, {"Yes/No", "Y/N"},          {"Areas", "Areas"},
        {"Size", "Size"},     {"Location", "Locat."},     {"Color", "Color"},
        {"Shape", "Shape"},   {"Sports", "Sports"},       {"Transportation", "Trans."},
        {"Scene", "Scene"}};
    return v;
}

}  // namespace

void print_metrics_table(std::ostream& os, const Metrics& m) {
    os << std::left << std::setw(10) << "";
    for (const auto& [key, label] : column_order()) os << std::right << std::setw(8) << label;
    os << std::setw(8) << "OA" << std::setw(8) << "AA" << "\n";
    os << std::left << std::setw(10) << "accuracy" << std::fixed << std::setprecision(2);
    for (const auto& [key, label] : column_order()) {
        auto it = m.per_type.find(key);
        if (it == m.per_type.end() || it->second.total == 0)
            os << std::right << std::setw(8) << "-";
        else
            os << std::right << std::setw(8) << 100.0 * it->second.accuracy();
    }
    os << std::right << std::setw(8) << 100.0 * m.oa() << std::setw(8) << 100.0 * m.aa() << "\n";
    os.unsetf(std::ios::fixed);
}

void write_metrics_csv(const Metrics& m, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open metrics csv for writing: " + path);
    os << "type,correct,total,accuracy\n";
    for (const auto& [type, stat] : m.per_type) {
        if (stat.total == 0) continue;
        os << '"' << type << "\"," << stat.correct << ',' << stat.total << ',' << stat.accuracy() << "\n";
    }
    os << "\"OA\"," << m.correct << ',' << m.total << ',' << m.oa() << "\n";
    os << "\"AA\",,," << m.aa() << "\n";
}

}  // namespace gft
