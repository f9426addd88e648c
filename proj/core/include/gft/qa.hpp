#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gft/rng.hpp"
#include "gft/scene.hpp"

namespace gft {

enum class QType { Number, YesNo, Areas, Location, Color, Shape, Size, Scene, Transportation, Sports };

const std::vector<QType>& all_qtypes();
std::string to_string(QType t);
QType parse_qtype(const std::string& s);

// Optional restrictions a question may place on its concept. The size class
// uses the answer-token form ("small scale"); rendering strips the suffix.
struct AttributeFilters {
    std::optional<std::string> color;
    std::optional<std::string> shape;
    std::optional<std::string> size_class;
    std::optional<std::string> location_cell;

    bool any() const { return color || shape || size_class || location_cell; }
};

enum class Comparison { None, More, Less };

struct QuestionSpec {
    QType qtype = QType::Number;
    std::optional<std::string> concept;   // absent for Scene/Transportation/Sports
    std::optional<std::string> concept2;  // second concept of a Yes/No comparison
    Comparison comparison = Comparison::None;
    AttributeFilters filters;
    std::optional<int> ordinal;  // left-to-right rank, 1-based
    std::size_t template_id = 0;
};

struct QATriplet {
    std::string scene_id;
    std::string question;
    QType qtype = QType::Number;
    std::string answer;
    int flag = 0;
};

// One question template; placeholders are {concept}, {concepts}, {concept2},
// {concepts2}, {ordinal}, {attribute}, {location}, {cmp}.
struct QuestionTemplate {
    QType qtype = QType::Number;
    std::string text;
    std::set<std::string> placeholders;
};

class TemplateSet {
public:
    // File format: one template per line, "TYPE<TAB>text"; '#' lines are comments.
    static TemplateSet load(const std::string& path);
    static TemplateSet from_lines(const std::vector<std::string>& lines);

    const std::vector<QuestionTemplate>& all() const { return templates_; }
    const QuestionTemplate& at(std::size_t id) const;

    // Ids of the templates of one type whose placeholder set matches exactly.
    std::vector<std::size_t> matching(QType t, const std::set<std::string>& placeholders) const;

private:
    void validate() const;
    std::vector<QuestionTemplate> templates_;
};

// Closed answer vocabulary: counting integers, yes/no, the five area buckets,
// nine location cells plus "not found", palette colors, shapes, size scales,
// scene labels, transport modes, sports labels. Group order is fixed; tokens
// inside a group are sorted (integers numerically).
struct AnswerVocabulary {
    std::vector<std::string> tokens;
    std::map<std::string, std::size_t> index;

    static AnswerVocabulary build(std::size_t max_count);
    static AnswerVocabulary from_tokens(std::vector<std::string> tokens);

    bool contains(const std::string& token) const { return index.count(token) != 0; }
    std::size_t id(const std::string& token) const;
    std::size_t size() const { return tokens.size(); }
};

// Per-category area cutoffs: small below first, large above second.
struct SizeThresholds {
    std::map<std::string, std::pair<double, double>> per_category;
    std::pair<double, double> fallback = {1.0, 5.0};

    std::string size_class(const std::string& category, double area_m2) const;
};

// Cutoffs at the 1/3 and 2/3 quantiles of per-category instance areas over
// the given (training) scenes.
SizeThresholds compute_size_thresholds(const std::vector<SceneAnnotation>& scenes);

struct QGenConfig {
    std::map<QType, double> type_weights;  // empty = uniform over all 10
    double attribute_filter_prob = 0.2;
    double ordinal_prob = 0.6;
    int max_ordinal = 3;
    double comparison_prob = 0.35;
    // Probability of restricting concept/ordinal draws to ones actually
    // present in the scene (raises the relevance-flag rate).
    double present_concept_bias = 0.0;
    std::size_t max_count = 20;  // largest counting answer token
};

struct SampledQuestion {
    QuestionSpec spec;
    std::string question;
};

// Draws type, concept, attributes, ordinal and template, and renders the
// text. `scene` is only consulted for the present-concept bias.
SampledQuestion sample_question(Rng& rng, const QGenConfig& config, const TemplateSet& templates,
                                const SceneAnnotation* scene = nullptr);

// Ascending bbox-center x; ties by center y, then annotation order.
std::vector<ObjectAnnotation> order_left_to_right(std::vector<ObjectAnnotation> objects);

// Nine-cell name ("top left", "center", ...) of a point by width/height thirds.
std::string location_cell(double cx, double cy, double width, double height);

// Five-bucket area quantization; boundaries are upper-inclusive.
std::string quantize_area(double area_m2);

// Answers a question from the scene ground truth. Returns (answer token,
// relevance flag).
std::pair<std::string, int> resolve_answer(const QuestionSpec& spec, const SceneAnnotation& ann,
                                           const SizeThresholds& thresholds,
                                           const QGenConfig& config = QGenConfig());

struct TripletWithSpec {
    QATriplet triplet;
    QuestionSpec spec;
};

std::vector<TripletWithSpec> generate_triplets_with_specs(const SceneAnnotation& ann, std::uint64_t base_seed,
                                                          std::size_t n, const QGenConfig& config,
                                                          const TemplateSet& templates,
                                                          const SizeThresholds& thresholds);

std::vector<QATriplet> generate_triplets(const SceneAnnotation& ann, std::uint64_t base_seed, std::size_t n,
                                         const QGenConfig& config, const TemplateSet& templates,
                                         const SizeThresholds& thresholds);

struct FilterOptions {
    std::size_t keep = 20;
    double min_flag_fraction = 0.7;
    std::size_t max_regen_rounds = 16;
};

struct FilterOutcome {
    std::vector<QATriplet> before_replacement;  // the balanced selection
    std::vector<QATriplet> selected;            // after type replacement
};

using RegenerateFn = std::function<std::vector<QATriplet>()>;

// Picks `keep` triplets with at least min_flag_fraction active flags (calling
// `regenerate` for more candidates when the pool is short), then replaces
// half (rounded down) of the selected Transportation+Scene questions with
// fresh questions of other types.
FilterOutcome filter_triplets_detailed(const std::vector<QATriplet>& candidates, Rng& rng,
                                       const RegenerateFn& regenerate, const FilterOptions& options = {});

std::vector<QATriplet> filter_triplets(const std::vector<QATriplet>& candidates, Rng& rng,
                                       const RegenerateFn& regenerate, const FilterOptions& options = {});

struct DatasetStats {
    std::size_t total = 0;
    double avg_question_length = 0;
    std::map<std::string, std::size_t> type_counts;
    std::map<std::size_t, std::size_t> length_counts;                        // tokens -> questions
    std::map<std::string, std::map<std::string, std::size_t>> answers_per_type;
};

DatasetStats dataset_stats(const std::vector<QATriplet>& triplets);
void write_stats_text(std::ostream& os, const DatasetStats& stats);
// Writes question_types.csv, question_lengths.csv, answers_per_type.csv.
void write_stats_csv(const DatasetStats& stats, const std::string& dir);

// Triplet file: JSON lines with fields scene_id, question, type, answer, flag.
void save_triplets(const std::string& path, const std::vector<QATriplet>& triplets);
std::vector<QATriplet> load_triplets(const std::string& path);

struct DatasetManifest {
    std::uint64_t seed = 0;
    QGenConfig gen;
    SizeThresholds thresholds;
    std::vector<std::string> vocabulary;
    SplitFractions fractions;
    std::size_t per_scene_candidates = 200;
    std::size_t per_scene_kept = 20;
};

void save_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& path);

}  // namespace gft
