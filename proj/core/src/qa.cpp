#include "gft/qa.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace gft {

using json = nlohmann::json;

const std::vector<QType>& all_qtypes() {
    static const std::vector<QType> v = {QType::Number,   QType::YesNo, QType::Areas,
                                         QType::Location, QType::Color, QType::Shape,
                                         QType::Size,     QType::Scene, QType::Transportation,
                                         QType::Sports};
    return v;
}

std::string to_string(QType t) {
    switch (t) {
        case QType::Number: return "Number";
        case QType::YesNo: return "Yes/No";
        case QType::Areas: return "Areas";
        case QType::Location: return "Location";
        case QType::Color: return "Color";
        case QType::Shape: return "Shape";
        case QType::Size: return "Size";
        case QType::Scene: return "Scene";
        case QType::Transportation: return "Transportation";
        case QType::Sports: return "Sports";
    }
    throw ContractError("invalid QType");
}

QType parse_qtype(const std::string& s) {
    for (QType t : all_qtypes())
        if (to_string(t) == s) return t;
    throw ParseError("unknown question type: '" + s + "'");
}

// ---------------------------------------------------------------------------
// templates
// ---------------------------------------------------------------------------

namespace {

const std::set<std::string>& known_placeholders() {
    static const std::set<std::string> v = {"concept", "concepts", "concept2", "concepts2",
                                            "ordinal", "attribute", "location", "cmp"};
    return v;
}

std::set<std::string> extract_placeholders(const std::string& text, long line_no) {
    std::set<std::string> out;
    std::size_t pos = 0;
    while ((pos = text.find('{', pos)) != std::string::npos) {
        std::size_t end = text.find('}', pos);
        if (end == std::string::npos) throw ParseError(line_no, "unterminated placeholder in template");
        std::string name = text.substr(pos + 1, end - pos - 1);
        if (!known_placeholders().count(name))
            throw ParseError(line_no, "unknown placeholder '{" + name + "}' in template");
        out.insert(name);
        pos = end + 1;
    }
    return out;
}

std::string ordinal_word(int n) {
    static const char* words[] = {"first", "second", "third", "fourth", "fifth",
                                  "sixth", "seventh", "eighth", "ninth"};
    if (n >= 1 && n <= 9) return words[n - 1];
    return std::to_string(n) + "th";
}

std::string plural(const std::string& concept) { return concept + "s"; }

std::string size_adjective(const std::string& size_class) {
    // "small scale" -> "small"
    auto pos = size_class.find(' ');
    return pos == std::string::npos ? size_class : size_class.substr(0, pos);
}

std::string render_template(const QuestionTemplate& t, const QuestionSpec& spec) {
    std::string out = t.text;
    auto substitute = [&out](const std::string& key, const std::string& value) {
        std::string pat = "{" + key + "}";
        std::size_t pos = 0;
        while ((pos = out.find(pat, pos)) != std::string::npos) {
            out.replace(pos, pat.size(), value);
            pos += value.size();
        }
    };
    if (spec.concept) {
        substitute("concept", *spec.concept);
        substitute("concepts", plural(*spec.concept));
    }
    if (spec.concept2) {
        substitute("concept2", *spec.concept2);
        substitute("concepts2", plural(*spec.concept2));
    }
    if (spec.ordinal) substitute("ordinal", ordinal_word(*spec.ordinal));
    if (spec.comparison != Comparison::None)
        substitute("cmp", spec.comparison == Comparison::More ? "more" : "less");
    if (spec.filters.color) substitute("attribute", *spec.filters.color);
    if (spec.filters.shape) substitute("attribute", *spec.filters.shape);
    if (spec.filters.size_class) substitute("attribute", size_adjective(*spec.filters.size_class));
    if (spec.filters.location_cell) substitute("location", *spec.filters.location_cell);
    if (out.find('{') != std::string::npos)
        throw ContractError("template left unexpanded placeholders: " + out);
    return out;
}

}  // namespace

TemplateSet TemplateSet::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open template file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
    return from_lines(lines);
}

TemplateSet TemplateSet::from_lines(const std::vector<std::string>& lines) {
    TemplateSet set;
    long line_no = 0;
    for (const auto& raw : lines) {
        ++line_no;
        if (raw.empty() || raw[0] == '#') continue;
        auto tab = raw.find('\t');
        if (tab == std::string::npos) throw ParseError(line_no, "expected TYPE<TAB>template");
        QuestionTemplate t;
        try {
            t.qtype = parse_qtype(raw.substr(0, tab));
        } catch (const ParseError& e) {
            throw ParseError(line_no, e.what());
        }
        t.text = raw.substr(tab + 1);
        if (t.text.empty()) throw ParseError(line_no, "empty template text");
        t.placeholders = extract_placeholders(t.text, line_no);
        set.templates_.push_back(std::move(t));
    }
    set.validate();
    return set;
}

void TemplateSet::validate() const {
    for (QType t : all_qtypes()) {
        std::size_t n = 0;
        for (const auto& tpl : templates_)
            if (tpl.qtype == t) ++n;
        if (n < 2)
            throw ConfigError("template set needs at least 2 templates for type " + to_string(t) + ", found " +
                              std::to_string(n));
    }
}

const QuestionTemplate& TemplateSet::at(std::size_t id) const {
    if (id >= templates_.size()) throw IndexError("template id out of range: " + std::to_string(id));
    return templates_[id];
}

std::vector<std::size_t> TemplateSet::matching(QType t, const std::set<std::string>& placeholders) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < templates_.size(); ++i)
        if (templates_[i].qtype == t && templates_[i].placeholders == placeholders) out.push_back(i);
    return out;
}

// ---------------------------------------------------------------------------
// answer vocabulary
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> location_cells() {
    std::vector<std::string> out;
    const char* rows[] = {"top", "center", "bottom"};
    const char* cols[] = {"left", "center", "right"};
    for (const char* r : rows)
        for (const char* c : cols) {
            if (std::string(r) == "center" && std::string(c) == "center")
                out.push_back("center");
            else
                out.push_back(std::string(r) + " " + c);
        }
    return out;
}

std::vector<std::string> sorted(std::vector<std::string> v) {
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

AnswerVocabulary AnswerVocabulary::build(std::size_t max_count) {
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i <= max_count; ++i) tokens.push_back(std::to_string(i));
    for (const auto& t : sorted({"yes", "no"})) tokens.push_back(t);
    for (const auto& t : sorted({"0m2", "between 0 and 10m2", "between 10 and 100m2",
                                 "between 100 and 1000m2", "more than 1000m2"}))
        tokens.push_back(t);
    {
        auto cells = location_cells();
        cells.push_back("not found");
        for (const auto& t : sorted(cells)) tokens.push_back(t);
    }
    for (const auto& t : sorted(concepts::palette())) tokens.push_back(t);
    for (const auto& t : sorted(concepts::shapes())) tokens.push_back(t);
    for (const auto& t : sorted({"small scale", "medium scale", "large scale"})) tokens.push_back(t);
    for (const auto& t : sorted(concepts::scene_labels())) tokens.push_back(t);
    for (const auto& t : sorted({"by car", "by ship", "on foot"})) tokens.push_back(t);
    for (const auto& t : sorted({"playing soccer", "playing tennis", "swimming", "outdoor fitness",
                                 "other exercise"}))
        tokens.push_back(t);
    return from_tokens(std::move(tokens));
}

AnswerVocabulary AnswerVocabulary::from_tokens(std::vector<std::string> tokens) {
    AnswerVocabulary v;
    v.tokens = std::move(tokens);
    for (std::size_t i = 0; i < v.tokens.size(); ++i) {
        if (v.index.count(v.tokens[i])) throw ContractError("duplicate vocabulary token: " + v.tokens[i]);
        v.index[v.tokens[i]] = i;
    }
    return v;
}

std::size_t AnswerVocabulary::id(const std::string& token) const {
    auto it = index.find(token);
    if (it == index.end()) throw IndexError("token not in answer vocabulary: '" + token + "'");
    return it->second;
}

// ---------------------------------------------------------------------------
// size thresholds
// ---------------------------------------------------------------------------

namespace {

double quantile_sorted(const std::vector<double>& v, double p) {
    if (v.empty()) throw ContractError("quantile of empty sample");
    if (v.size() == 1) return v[0];
    double idx = p * static_cast<double>(v.size() - 1);
    std::size_t lo = static_cast<std::size_t>(idx);
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    double frac = idx - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

std::string SizeThresholds::size_class(const std::string& category, double area_m2) const {
    auto it = per_category.find(category);
    const auto& cut = it == per_category.end() ? fallback : it->second;
    if (area_m2 < cut.first) return "small scale";
    if (area_m2 > cut.second) return "large scale";
    return "medium scale";
}

SizeThresholds compute_size_thresholds(const std::vector<SceneAnnotation>& scenes) {
    std::map<std::string, std::vector<double>> areas;
    std::vector<double> global;
    for (const auto& s : scenes)
        for (const auto& o : s.objects) {
            areas[o.category].push_back(o.area_m2);
            global.push_back(o.area_m2);
        }
    SizeThresholds t;
    if (!global.empty()) {
        std::sort(global.begin(), global.end());
        t.fallback = {quantile_sorted(global, 1.0 / 3.0), quantile_sorted(global, 2.0 / 3.0)};
    }
    for (auto& [cat, v] : areas) {
        std::sort(v.begin(), v.end());
        t.per_category[cat] = {quantile_sorted(v, 1.0 / 3.0), quantile_sorted(v, 2.0 / 3.0)};
    }
    return t;
}

// ---------------------------------------------------------------------------
// ordering / quantization / resolution
// ---------------------------------------------------------------------------

std::vector<ObjectAnnotation> order_left_to_right(std::vector<ObjectAnnotation> objects) {
    std::stable_sort(objects.begin(), objects.end(), [](const ObjectAnnotation& a, const ObjectAnnotation& b) {
        if (a.center_x() != b.center_x()) return a.center_x() < b.center_x();
        return a.center_y() < b.center_y();
    });
    return objects;
}

std::string location_cell(double cx, double cy, double width, double height) {
    auto third = [](double v, double extent) { return v < extent / 3.0 ? 0 : (v < 2.0 * extent / 3.0 ? 1 : 2); };
    int col = third(cx, width), row = third(cy, height);
    static const char* rows[] = {"top", "center", "bottom"};
    static const char* cols[] = {"left", "center", "right"};
    if (row == 1 && col == 1) return "center";
    return std::string(rows[row]) + " " + cols[col];
}

std::string quantize_area(double area_m2) {
    if (area_m2 < 0) throw ContractError("quantize_area: negative area " + std::to_string(area_m2));
    if (area_m2 == 0) return "0m2";
    if (area_m2 <= 10) return "between 0 and 10m2";
    if (area_m2 <= 100) return "between 10 and 100m2";
    if (area_m2 <= 1000) return "between 100 and 1000m2";
    return "more than 1000m2";
}

namespace {

std::vector<ObjectAnnotation> matching_instances(const SceneAnnotation& ann, const std::string& category,
                                                 const AttributeFilters& filters,
                                                 const SizeThresholds& thresholds) {
    std::vector<ObjectAnnotation> out;
    for (const auto& o : ann.objects) {
        if (o.category != category) continue;
        if (filters.color && (!o.color || *o.color != *filters.color)) continue;
        if (filters.shape && (!o.shape || *o.shape != *filters.shape)) continue;
        if (filters.size_class && thresholds.size_class(o.category, o.area_m2) != *filters.size_class) continue;
        if (filters.location_cell &&
            location_cell(o.center_x(), o.center_y(), static_cast<double>(ann.width_px),
                          static_cast<double>(ann.height_px)) != *filters.location_cell)
            continue;
        out.push_back(o);
    }
    return order_left_to_right(std::move(out));
}

std::size_t count_category(const SceneAnnotation& ann, const std::string& category) {
    std::size_t n = 0;
    for (const auto& o : ann.objects)
        if (o.category == category) ++n;
    return n;
}

// The ordinal-selected object, or nullopt when the restriction is unsatisfiable.
std::optional<ObjectAnnotation> select_instance(const QuestionSpec& spec, const SceneAnnotation& ann,
                                                const SizeThresholds& thresholds) {
    auto insts = matching_instances(ann, *spec.concept, spec.filters, thresholds);
    std::size_t ordinal = static_cast<std::size_t>(spec.ordinal.value_or(1));
    if (ordinal == 0 || ordinal > insts.size()) return std::nullopt;
    return insts[ordinal - 1];
}

}  // namespace

std::pair<std::string, int> resolve_answer(const QuestionSpec& spec, const SceneAnnotation& ann,
                                           const SizeThresholds& thresholds, const QGenConfig& config) {
    switch (spec.qtype) {
        case QType::Number: {
            if (!spec.concept) throw ContractError("Number question without concept");
            std::size_t n = matching_instances(ann, *spec.concept, spec.filters, thresholds).size();
            n = std::min(n, config.max_count);
            return {std::to_string(n), 1};
        }
        case QType::YesNo: {
            if (!spec.concept) throw ContractError("Yes/No question without concept");
            if (spec.comparison != Comparison::None) {
                if (!spec.concept2) throw ContractError("comparison question without second concept");
                std::size_t a = count_category(ann, *spec.concept);
                std::size_t b = count_category(ann, *spec.concept2);
                bool yes = spec.comparison == Comparison::More ? a > b : a < b;
                return {yes ? "yes" : "no", 1};
            }
            bool exists;
            if (spec.filters.any()) {
                exists = !matching_instances(ann, *spec.concept, spec.filters, thresholds).empty();
            } else {
                exists = count_category(ann, *spec.concept) > 0 || ann.region_area(*spec.concept) > 0;
            }
            return {exists ? "yes" : "no", 1};
        }
        case QType::Areas: {
            if (!spec.concept) throw ContractError("Areas question without concept");
            double area = ann.region_area(*spec.concept);
            bool present = area > 0 || count_category(ann, *spec.concept) > 0;
            return {quantize_area(area), present ? 1 : 0};
        }
        case QType::Location: {
            if (!spec.concept) throw ContractError("Location question without concept");
            auto obj = select_instance(spec, ann, thresholds);
            if (!obj) return {"not found", 0};
            return {location_cell(obj->center_x(), obj->center_y(), static_cast<double>(ann.width_px),
                                  static_cast<double>(ann.height_px)),
                    1};
        }
        case QType::Color: {
            if (!spec.concept) throw ContractError("Color question without concept");
            auto obj = select_instance(spec, ann, thresholds);
            if (!obj || !obj->color) return {"not found", 0};
            return {*obj->color, 1};
        }
        case QType::Shape: {
            if (!spec.concept) throw ContractError("Shape question without concept");
            auto obj = select_instance(spec, ann, thresholds);
            if (!obj || !obj->shape) return {"not found", 0};
            return {*obj->shape, 1};
        }
        case QType::Size: {
            if (!spec.concept) throw ContractError("Size question without concept");
            auto obj = select_instance(spec, ann, thresholds);
            if (!obj) return {"not found", 0};
            return {thresholds.size_class(obj->category, obj->area_m2), 1};
        }
        case QType::Scene:
            return {ann.scene_label, 1};
        case QType::Transportation: {
            std::size_t ships = count_category(ann, "ship");
            std::size_t vehicles = 0;
            for (const auto& v : concepts::vehicles()) vehicles += count_category(ann, v);
            if (ships > vehicles) return {"by ship", 1};
            if (vehicles > 0) return {"by car", 1};
            return {"on foot", 1};
        }
        case QType::Sports: {
            std::string best;
            double best_area = 0;
            for (const auto& f : concepts::sports_facilities()) {
                double a = ann.region_area(f);
                if (a > best_area) {
                    best_area = a;
                    best = f;
                }
            }
            if (best.empty()) return {"other exercise", 1};
            if (best == "soccer ball field") return {"playing soccer", 1};
            if (best == "tennis court") return {"playing tennis", 1};
            if (best == "swimming pool") return {"swimming", 1};
            if (best == "outdoor fitness field") return {"outdoor fitness", 1};
            return {"other exercise", 1};
        }
    }
    throw ContractError("invalid question type");
}

// ---------------------------------------------------------------------------
// question sampling
// ---------------------------------------------------------------------------

namespace {

bool category_present(const SceneAnnotation& ann, const std::string& category) {
    return count_category(ann, category) > 0 || ann.region_area(category) > 0;
}

std::string draw_concept(Rng& rng, const std::vector<std::string>& pool, bool biased,
                         const SceneAnnotation* scene) {
    if (biased && scene) {
        std::vector<std::string> present;
        for (const auto& c : pool)
            if (category_present(*scene, c)) present.push_back(c);
        if (!present.empty()) return present[rng.uniform_index(present.size())];
    }
    return pool[rng.uniform_index(pool.size())];
}

// Attribute-filter kinds a question type may carry (never the asked attribute).
std::vector<int> filter_kinds(QType t, bool isolated_concept) {
    // 0=color 1=shape 2=size 3=location
    if (!isolated_concept) return {};
    switch (t) {
        case QType::Number:
        case QType::YesNo: return {0, 1, 2, 3};
        case QType::Location: return {0, 1, 2};
        case QType::Color: return {1, 2};
        case QType::Shape: return {0, 2};
        case QType::Size: return {0, 1};
        default: return {};
    }
}

void apply_filter(Rng& rng, int kind, AttributeFilters& filters) {
    switch (kind) {
        case 0: filters.color = concepts::palette()[rng.uniform_index(concepts::palette().size())]; break;
        case 1: filters.shape = concepts::shapes()[rng.uniform_index(concepts::shapes().size())]; break;
        case 2: {
            static const std::vector<std::string> sizes = {"small scale", "medium scale", "large scale"};
            filters.size_class = sizes[rng.uniform_index(sizes.size())];
            break;
        }
        case 3: {
            auto cells = location_cells();
            filters.location_cell = cells[rng.uniform_index(cells.size())];
            break;
        }
    }
}

// Placeholder signatures the rendered spec can use, most specific first.
std::vector<std::set<std::string>> candidate_signatures(const QuestionSpec& spec) {
    bool attr = spec.filters.color || spec.filters.shape || spec.filters.size_class;
    bool loc = spec.filters.location_cell.has_value();
    bool ord = spec.ordinal.has_value();
    std::vector<std::set<std::string>> out;
    auto push = [&out](std::set<std::string> s) { out.push_back(std::move(s)); };
    switch (spec.qtype) {
        case QType::Scene:
        case QType::Transportation:
        case QType::Sports: push({}); break;
        case QType::Number:
            if (attr) push({"attribute", "concepts"});
            if (loc) push({"concepts", "location"});
            push({"concepts"});
            break;
        case QType::YesNo:
            if (spec.comparison != Comparison::None) {
                push({"cmp", "concepts", "concepts2"});
                break;
            }
            if (attr) {
                push({"attribute", "concept"});
                push({"attribute", "concepts"});
            }
            if (loc) {
                push({"concept", "location"});
                push({"concepts", "location"});
            }
            push({"concept"});
            push({"concepts"});
            break;
        case QType::Areas: push({"concepts"}); break;
        case QType::Location:
        case QType::Color:
        case QType::Shape:
        case QType::Size:
            if (ord && attr) push({"ordinal", "attribute", "concept"});
            if (ord) push({"ordinal", "concept"});
            if (attr) push({"attribute", "concept"});
            push({"concept"});
            break;
    }
    return out;
}

}  // namespace

SampledQuestion sample_question(Rng& rng, const QGenConfig& config, const TemplateSet& templates,
                                const SceneAnnotation* scene) {
    // type draw
    std::vector<QType> types;
    std::vector<double> weights;
    for (QType t : all_qtypes()) {
        double w = 1.0;
        if (!config.type_weights.empty()) {
            auto it = config.type_weights.find(t);
            w = it == config.type_weights.end() ? 0.0 : it->second;
        }
        if (w > 0) {
            types.push_back(t);
            weights.push_back(w);
        }
    }
    if (types.empty()) throw ConfigError("all question type weights are zero");
    double wsum = 0;
    for (double w : weights) wsum += w;
    double draw = rng.uniform() * wsum;
    std::size_t ti = 0;
    for (; ti + 1 < types.size(); ++ti) {
        if (draw < weights[ti]) break;
        draw -= weights[ti];
    }

    QuestionSpec spec;
    spec.qtype = types[ti];
    bool biased = config.present_concept_bias > 0 && scene && rng.bernoulli(config.present_concept_bias);

    switch (spec.qtype) {
        case QType::Scene:
        case QType::Transportation:
        case QType::Sports: break;
        case QType::Number:
            spec.concept = draw_concept(rng, concepts::isolated(), biased, scene);
            break;
        case QType::YesNo: {
            if (rng.bernoulli(config.comparison_prob)) {
                spec.comparison = rng.bernoulli(0.5) ? Comparison::More : Comparison::Less;
                spec.concept = draw_concept(rng, concepts::isolated(), biased, scene);
                do {
                    spec.concept2 = concepts::isolated()[rng.uniform_index(concepts::isolated().size())];
                } while (*spec.concept2 == *spec.concept);
            } else {
                spec.concept = draw_concept(rng, concepts::all(), biased, scene);
            }
            break;
        }
        case QType::Areas:
            spec.concept = draw_concept(rng, concepts::all(), biased, scene);
            break;
        case QType::Location:
        case QType::Color:
        case QType::Shape:
        case QType::Size: {
            spec.concept = draw_concept(rng, concepts::isolated(), biased, scene);
            if (rng.bernoulli(config.ordinal_prob)) {
                long hi = config.max_ordinal;
                if (biased && scene) {
                    long present = static_cast<long>(count_category(*scene, *spec.concept));
                    if (present >= 1) hi = std::min<long>(hi, present);
                }
                spec.ordinal = static_cast<int>(rng.uniform_int(1, std::max<long>(1, hi)));
            }
            break;
        }
    }

    // optional attribute restriction
    if (spec.concept && spec.comparison == Comparison::None && rng.bernoulli(config.attribute_filter_prob)) {
        auto kinds = filter_kinds(spec.qtype, concepts::is_isolated(*spec.concept));
        if (!kinds.empty()) apply_filter(rng, kinds[rng.uniform_index(kinds.size())], spec.filters);
    }

    // template selection; degrade (drop filter, then ordinal) when a custom
    // template file lacks the specific signature
    for (int attempt = 0; attempt < 3; ++attempt) {
        std::vector<std::size_t> ids;
        for (const auto& sig : candidate_signatures(spec)) {
            auto m = templates.matching(spec.qtype, sig);
            ids.insert(ids.end(), m.begin(), m.end());
        }
        if (!ids.empty()) {
            spec.template_id = ids[rng.uniform_index(ids.size())];
            const auto& tpl = templates.at(spec.template_id);
            // drop spec parts the chosen template does not express
            if (!tpl.placeholders.count("ordinal")) spec.ordinal.reset();
            if (!tpl.placeholders.count("attribute")) {
                spec.filters.color.reset();
                spec.filters.shape.reset();
                spec.filters.size_class.reset();
            }
            if (!tpl.placeholders.count("location")) spec.filters.location_cell.reset();
            return {spec, render_template(tpl, spec)};
        }
        if (spec.filters.any())
            spec.filters = AttributeFilters{};
        else if (spec.ordinal)
            spec.ordinal.reset();
        else
            break;
    }
    throw ConfigError("no template available for question type " + to_string(spec.qtype));
}

// ---------------------------------------------------------------------------
// triplet generation / filtering
// ---------------------------------------------------------------------------

std::vector<TripletWithSpec> generate_triplets_with_specs(const SceneAnnotation& ann, std::uint64_t base_seed,
                                                          std::size_t n, const QGenConfig& config,
                                                          const TemplateSet& templates,
                                                          const SizeThresholds& thresholds) {
    if (n < 1) throw ContractError("generate_triplets: n must be >= 1");
    Rng rng(Rng::mix(base_seed, Rng::hash_string(ann.scene_id)));
    std::vector<TripletWithSpec> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        SampledQuestion q = sample_question(rng, config, templates, &ann);
        auto [answer, flag] = resolve_answer(q.spec, ann, thresholds, config);
        QATriplet t;
        t.scene_id = ann.scene_id;
        t.question = q.question;
        t.qtype = q.spec.qtype;
        t.answer = answer;
        t.flag = flag;
        out.push_back({std::move(t), std::move(q.spec)});
    }
    return out;
}

std::vector<QATriplet> generate_triplets(const SceneAnnotation& ann, std::uint64_t base_seed, std::size_t n,
                                         const QGenConfig& config, const TemplateSet& templates,
                                         const SizeThresholds& thresholds) {
    std::vector<QATriplet> out;
    for (auto& ts : generate_triplets_with_specs(ann, base_seed, n, config, templates, thresholds))
        out.push_back(std::move(ts.triplet));
    return out;
}

namespace {

bool is_easy_type(QType t) { return t == QType::Transportation || t == QType::Scene; }

std::size_t count_flag1(const std::vector<QATriplet>& v) {
    std::size_t n = 0;
    for (const auto& t : v)
        if (t.flag == 1) ++n;
    return n;
}

}  // namespace

FilterOutcome filter_triplets_detailed(const std::vector<QATriplet>& candidates, Rng& rng,
                                       const RegenerateFn& regenerate, const FilterOptions& options) {
    const std::size_t keep = options.keep;
    const auto need = static_cast<std::size_t>(std::ceil(options.min_flag_fraction * static_cast<double>(keep)));
    std::vector<QATriplet> pool = candidates;
    std::size_t rounds = 0;
    auto top_up = [&](const std::string& why) {
        if (!regenerate || ++rounds > options.max_regen_rounds)
            throw FilterError("triplet filter exhausted after " + std::to_string(rounds) +
                              " regeneration rounds (" + why + ")");
        auto more = regenerate();
        if (more.empty()) throw FilterError("regeneration produced no candidates");
        pool.insert(pool.end(), more.begin(), more.end());
        rng.shuffle(pool);
    };
    while (count_flag1(pool) < need || pool.size() < keep) top_up("not enough active flags");
    rng.shuffle(pool);

    std::vector<QATriplet> selected;
    std::vector<QATriplet> rest;
    selected.reserve(keep);
    for (auto& t : pool) {
        if (t.flag == 1 && selected.size() < need)
            selected.push_back(std::move(t));
        else
            rest.push_back(std::move(t));
    }
    std::size_t fill = keep - selected.size();
    selected.insert(selected.end(), std::make_move_iterator(rest.begin()),
                    std::make_move_iterator(rest.begin() + static_cast<long>(fill)));
    std::vector<QATriplet> remaining(std::make_move_iterator(rest.begin() + static_cast<long>(fill)),
                                     std::make_move_iterator(rest.end()));

    FilterOutcome outcome;
    outcome.before_replacement = selected;

    // Replace half (rounded down) of the easy Transportation/Scene picks with
    // questions of other types, keeping the flag quota intact.
    std::vector<std::size_t> easy;
    for (std::size_t i = 0; i < selected.size(); ++i)
        if (is_easy_type(selected[i].qtype)) easy.push_back(i);
    std::size_t replace = easy.size() / 2;
    rng.shuffle(easy);
    for (std::size_t j = 0; j < replace; ++j) {
        std::size_t pos = easy[j];
        bool need_flag1 = selected[pos].flag == 1 && count_flag1(selected) - 1 < need;
        bool done = false;
        while (!done) {
            for (std::size_t q = 0; q < remaining.size(); ++q) {
                const auto& c = remaining[q];
                if (is_easy_type(c.qtype)) continue;
                if (need_flag1 && c.flag != 1) continue;
                selected[pos] = c;
                remaining.erase(remaining.begin() + static_cast<long>(q));
                done = true;
                break;
            }
            if (!done) {
                if (!regenerate || ++rounds > options.max_regen_rounds)
                    throw FilterError("triplet filter could not find replacement questions");
                auto more = regenerate();
                if (more.empty()) throw FilterError("regeneration produced no candidates");
                remaining.insert(remaining.end(), more.begin(), more.end());
                rng.shuffle(remaining);
            }
        }
    }
    outcome.selected = std::move(selected);
    return outcome;
}

std::vector<QATriplet> filter_triplets(const std::vector<QATriplet>& candidates, Rng& rng,
                                       const RegenerateFn& regenerate, const FilterOptions& options) {
    return filter_triplets_detailed(candidates, rng, regenerate, options).selected;
}

// ---------------------------------------------------------------------------
// statistics
// ---------------------------------------------------------------------------

namespace {

std::size_t token_count(const std::string& text) {
    std::istringstream is(text);
    std::string tok;
    std::size_t n = 0;
    while (is >> tok) ++n;
    return n;
}

}  // namespace

DatasetStats dataset_stats(const std::vector<QATriplet>& triplets) {
    if (triplets.empty()) throw ContractError("dataset_stats of empty triplet list");
    DatasetStats s;
    s.total = triplets.size();
    std::size_t len_sum = 0;
    for (const auto& t : triplets) {
        std::size_t len = token_count(t.question);
        len_sum += len;
        s.length_counts[len] += 1;
        s.type_counts[to_string(t.qtype)] += 1;
        s.answers_per_type[to_string(t.qtype)][t.answer] += 1;
    }
    s.avg_question_length = static_cast<double>(len_sum) / static_cast<double>(s.total);
    return s;
}

void write_stats_text(std::ostream& os, const DatasetStats& s) {
    os << "triplets: " << s.total << "\n";
    os << "average question length: " << std::fixed << std::setprecision(2) << s.avg_question_length
       << " tokens\n\n";
    os << "question types:\n";
    for (const auto& [type, count] : s.type_counts)
        os << "  " << std::left << std::setw(16) << type << std::right << std::setw(8) << count << "  "
           << std::setprecision(3) << (static_cast<double>(count) / static_cast<double>(s.total)) << "\n";
    os << "\nquestion lengths:\n";
    for (const auto& [len, count] : s.length_counts)
        os << "  " << std::setw(3) << len << " tokens" << std::setw(8) << count << "\n";
    os << "\nanswers per type:\n";
    for (const auto& [type, answers] : s.answers_per_type) {
        os << "  " << type << ":\n";
        for (const auto& [answer, count] : answers)
            os << "    " << std::left << std::setw(28) << answer << std::right << std::setw(8) << count << "\n";
    }
    os.unsetf(std::ios::fixed);
}

void write_stats_csv(const DatasetStats& s, const std::string& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir + "/question_types.csv");
        os << "type,count,share\n";
        for (const auto& [type, count] : s.type_counts)
            os << '"' << type << "\"," << count << ','
               << (static_cast<double>(count) / static_cast<double>(s.total)) << "\n";
    }
    {
        std::ofstream os(dir + "/question_lengths.csv");
        os << "tokens,count\n";
        for (const auto& [len, count] : s.length_counts) os << len << ',' << count << "\n";
    }
    {
        std::ofstream os(dir + "/answers_per_type.csv");
        os << "type,answer,count\n";
        for (const auto& [type, answers] : s.answers_per_type)
            for (const auto& [answer, count] : answers)
                os << '"' << type << "\",\"" << answer << "\"," << count << "\n";
    }
}

// ---------------------------------------------------------------------------
// file formats
// ---------------------------------------------------------------------------

void save_triplets(const std::string& path, const std::vector<QATriplet>& triplets) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open triplet file for writing: " + path);
    for (const auto& t : triplets) {
        json j;
        j["scene_id"] = t.scene_id;
        j["question"] = t.question;
        j["type"] = to_string(t.qtype);
        j["answer"] = t.answer;
        j["flag"] = t.flag;
        os << j.dump() << '\n';
    }
    if (!os) throw ParseError("triplet write failed: " + path);
}

std::vector<QATriplet> load_triplets(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open triplet file: " + path);
    std::vector<QATriplet> out;
    std::string line;
    long line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
        }
        QATriplet t;
        for (const char* field : {"scene_id", "question", "type", "answer"})
            if (!j.contains(field) || !j[field].is_string())
                throw ParseError(line_no, std::string(field) + ": missing or not a string");
        t.scene_id = j["scene_id"].get<std::string>();
        t.question = j["question"].get<std::string>();
        try {
            t.qtype = parse_qtype(j["type"].get<std::string>());
        } catch (const ParseError& e) {
            throw ParseError(line_no, e.what());
        }
        t.answer = j["answer"].get<std::string>();
        if (!j.contains("flag") || !j["flag"].is_number_integer())
            throw ParseError(line_no, "flag: missing or not an integer");
        t.flag = j["flag"].get<int>();
        if (t.flag != 0 && t.flag != 1) throw ParseError(line_no, "flag: must be 0 or 1");
        out.push_back(std::move(t));
    }
    return out;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
    json j;
    j["seed"] = m.seed;
    j["max_count"] = m.gen.max_count;
    json tw = json::object();
    for (QType t : all_qtypes()) {
        double w = 1.0;
        if (!m.gen.type_weights.empty()) {
            auto it = m.gen.type_weights.find(t);
            w = it == m.gen.type_weights.end() ? 0.0 : it->second;
        }
        tw[to_string(t)] = w;
    }
    j["type_weights"] = std::move(tw);
    j["attribute_filter_prob"] = m.gen.attribute_filter_prob;
    j["ordinal_prob"] = m.gen.ordinal_prob;
    j["max_ordinal"] = m.gen.max_ordinal;
    j["comparison_prob"] = m.gen.comparison_prob;
    j["present_concept_bias"] = m.gen.present_concept_bias;
    json th = json::object();
    for (const auto& [cat, cut] : m.thresholds.per_category) th[cat] = {cut.first, cut.second};
    j["thresholds"] = {{"per_category", std::move(th)},
                       {"fallback", {m.thresholds.fallback.first, m.thresholds.fallback.second}}};
    j["vocabulary"] = m.vocabulary;
    j["fractions"] = {m.fractions.train, m.fractions.val, m.fractions.test};
    j["per_scene_candidates"] = m.per_scene_candidates;
    j["per_scene_kept"] = m.per_scene_kept;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open manifest for writing: " + path);
    os << j.dump(2) << '\n';
    if (!os) throw ParseError("manifest write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open manifest: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ParseError(std::string("invalid manifest JSON: ") + e.what());
    }
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.gen.max_count = j.at("max_count").get<std::size_t>();
    for (auto it = j.at("type_weights").begin(); it != j.at("type_weights").end(); ++it)
        m.gen.type_weights[parse_qtype(it.key())] = it.value().get<double>();
    m.gen.attribute_filter_prob = j.at("attribute_filter_prob").get<double>();
    m.gen.ordinal_prob = j.at("ordinal_prob").get<double>();
    m.gen.max_ordinal = j.at("max_ordinal").get<int>();
    m.gen.comparison_prob = j.at("comparison_prob").get<double>();
    m.gen.present_concept_bias = j.at("present_concept_bias").get<double>();
    for (auto it = j.at("thresholds").at("per_category").begin();
         it != j.at("thresholds").at("per_category").end(); ++it)
        m.thresholds.per_category[it.key()] = {it.value()[0].get<double>(), it.value()[1].get<double>()};
    m.thresholds.fallback = {j.at("thresholds").at("fallback")[0].get<double>(),
                             j.at("thresholds").at("fallback")[1].get<double>()};
    m.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    m.fractions.train = j.at("fractions")[0].get<double>();
    m.fractions.val = j.at("fractions")[1].get<double>();
    m.fractions.test = j.at("fractions")[2].get<double>();
    m.per_scene_candidates = j.at("per_scene_candidates").get<std::size_t>();
    m.per_scene_kept = j.at("per_scene_kept").get<std::size_t>();
    return m;
}

}  // namespace gft
