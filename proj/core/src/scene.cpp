#include "gft/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace gft {

using json = nlohmann::json;

namespace concepts {

const std::vector<std::string>& isolated() {
    static const std::vector<std::string> v = {
        "small vehicle", "large vehicle", "ship",           "plane",
        "storage tank",  "baseball diamond", "tennis court", "basketball court",
        "bridge",        "helipad",        "helicopter",    "soccer ball field",
        "swimming pool", "roundabout",     "ground track field", "outdoor fitness field",
        "track",         "building"};
    return v;
}

const std::vector<std::string>& region() {
    static const std::vector<std::string> v = {
        "high density urban area", "low density urban area", "rural area",
        "industrial area",         "station",                "sports area",
        "water section",           "harbor",                 "airport"};
    return v;
}

const std::vector<std::string>& all() {
    static const std::vector<std::string> v = [] {
        std::vector<std::string> out = isolated();
        out.insert(out.end(), region().begin(), region().end());
        return out;
    }();
    return v;
}

bool is_isolated(const std::string& category) {
    const auto& iso = isolated();
    return std::find(iso.begin(), iso.end(), category) != iso.end();
}

bool is_known(const std::string& category) {
    const auto& a = all();
    return std::find(a.begin(), a.end(), category) != a.end();
}

const std::vector<std::string>& palette() {
    static const std::vector<std::string> v = {"red", "blue", "green", "grey", "white", "black", "yellow"};
    return v;
}

const std::vector<std::string>& shapes() {
    static const std::vector<std::string> v = {"round", "square", "rectangular", "linear"};
    return v;
}

const std::vector<std::string>& scene_labels() { return region(); }

const std::vector<std::string>& sports_facilities() {
    static const std::vector<std::string> v = {"soccer ball field",  "tennis court",
                                               "swimming pool",      "outdoor fitness field",
                                               "baseball diamond",   "basketball court",
                                               "ground track field"};
    return v;
}

const std::vector<std::string>& vehicles() {
    static const std::vector<std::string> v = {"small vehicle", "large vehicle"};
    return v;
}

}  // namespace concepts

namespace {

struct Rgb {
    std::uint8_t r, g, b;
};

Rgb palette_rgb(const std::string& name) {
    if (name == "red") return {220, 48, 48};
    if (name == "blue") return {48, 88, 220};
    if (name == "green") return {48, 180, 80};
    if (name == "grey") return {128, 128, 128};
    if (name == "white") return {245, 245, 245};
    if (name == "black") return {16, 16, 16};
    if (name == "yellow") return {232, 216, 56};
    throw ConfigError("unknown palette color: " + name);
}

// Background base tone per scene label; kept away from the object palette so
// scenes stay visually separable from the shapes drawn on top.
Rgb scene_base_rgb(const std::string& label) {
    if (label == "high density urban area") return {104, 98, 96};
    if (label == "low density urban area") return {150, 140, 124};
    if (label == "rural area") return {96, 128, 72};
    if (label == "industrial area") return {130, 120, 140};
    if (label == "station") return {88, 76, 68};
    if (label == "sports area") return {70, 140, 110};
    if (label == "water section") return {56, 96, 150};
    if (label == "harbor") return {70, 86, 120};
    if (label == "airport") return {160, 158, 150};
    throw ConfigError("unknown scene label: " + label);
}

// Shapes a category may take in generated scenes.
const std::vector<std::string>& allowed_shapes(const std::string& category) {
    static const std::map<std::string, std::vector<std::string>> table = {
        {"small vehicle", {"rectangular"}},
        {"large vehicle", {"rectangular"}},
        {"ship", {"rectangular", "linear"}},
        {"plane", {"square"}},
        {"storage tank", {"round"}},
        {"baseball diamond", {"square", "round"}},
        {"tennis court", {"rectangular"}},
        {"basketball court", {"rectangular"}},
        {"bridge", {"linear"}},
        {"helipad", {"round", "square"}},
        {"helicopter", {"square"}},
        {"soccer ball field", {"rectangular"}},
        {"swimming pool", {"square", "rectangular", "round"}},
        {"roundabout", {"round"}},
        {"ground track field", {"rectangular", "round"}},
        {"outdoor fitness field", {"square", "rectangular"}},
        {"track", {"linear"}},
        {"building", {"square", "rectangular"}},
    };
    auto it = table.find(category);
    if (it == table.end()) throw ConfigError("no shape rule for category: " + category);
    return it->second;
}

struct Box {
    long x0, y0, x1, y1;  // half-open pixel bounds
    bool overlaps(const Box& o) const {
        return x0 - 1 < o.x1 && o.x0 - 1 < x1 && y0 - 1 < o.y1 && o.y0 - 1 < y1;
    }
};

void fill_shape(SceneRaster& raster, const Box& b, const std::string& shape, Rgb color) {
    double cx = (b.x0 + b.x1) / 2.0, cy = (b.y0 + b.y1) / 2.0;
    double rx = (b.x1 - b.x0) / 2.0, ry = (b.y1 - b.y0) / 2.0;
    for (long y = b.y0; y < b.y1; ++y)
        for (long x = b.x0; x < b.x1; ++x) {
            if (shape == "round") {
                double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
                if (dx * dx + dy * dy > 1.0) continue;
            }
            auto* p = raster.pixel(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
            p[0] = color.r;
            p[1] = color.g;
            p[2] = color.b;
        }
}

std::string hex_id(std::uint64_t seed) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[seed & 0xf];
        seed >>= 4;
    }
    return s;
}

void write_u32_le_bytes(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le_bytes(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw ParseError("truncated raster header in " + path);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

}  // namespace

std::pair<SceneRaster, SceneAnnotation> generate_scene(std::uint64_t seed, const GenConfig& config) {
    if (config.width < 8 || config.height < 8) throw ConfigError("scene raster must be at least 8x8");
    if (config.min_objects > config.max_objects) throw ConfigError("min_objects > max_objects");
    if (config.meters_per_pixel <= 0) throw ConfigError("meters_per_pixel must be positive");
    Rng rng(seed);

    SceneAnnotation ann;
    ann.scene_id = "scene-" + hex_id(seed);
    ann.width_px = config.width;
    ann.height_px = config.height;
    ann.meters_per_pixel = config.meters_per_pixel;
    const auto& labels = concepts::scene_labels();
    ann.scene_label = labels[rng.uniform_index(labels.size())];

    SceneRaster raster;
    raster.width = config.width;
    raster.height = config.height;
    raster.rgb.resize(config.width * config.height * 3);
    Rgb base = scene_base_rgb(ann.scene_label);
    for (std::size_t y = 0; y < config.height; ++y)
        for (std::size_t x = 0; x < config.width; ++x) {
            long jitter = rng.uniform_int(-7, 7);
            auto clampc = [&](int c) {
                return static_cast<std::uint8_t>(std::clamp(c + static_cast<int>(jitter), 0, 255));
            };
            auto* p = raster.pixel(x, y);
            p[0] = clampc(base.r);
            p[1] = clampc(base.g);
            p[2] = clampc(base.b);
        }

    // category pool
    std::vector<std::string> pool;
    if (config.allowed_categories.empty()) {
        pool = concepts::isolated();
    } else {
        for (const auto& c : config.allowed_categories) {
            if (!concepts::is_isolated(c)) throw ConfigError("allowed_categories must be isolated concepts: " + c);
            pool.push_back(c);
        }
    }
    std::vector<double> weights = config.category_weights;
    if (weights.empty()) weights.assign(pool.size(), 1.0);
    if (weights.size() != pool.size()) throw ConfigError("category_weights size mismatch with category pool");
    double wsum = 0;
    for (double w : weights) {
        if (w < 0) throw ConfigError("category weights must be nonnegative");
        wsum += w;
    }
    if (wsum <= 0) throw ConfigError("category weights sum to zero");

    std::size_t n_objects =
        static_cast<std::size_t>(rng.uniform_int(static_cast<long>(config.min_objects),
                                                 static_cast<long>(config.max_objects)));
    std::vector<Box> placed;
    const auto& palette = concepts::palette();
    double mpp2 = config.meters_per_pixel * config.meters_per_pixel;

    for (std::size_t i = 0; i < n_objects; ++i) {
        double draw = rng.uniform() * wsum;
        std::size_t ci = 0;
        for (; ci + 1 < pool.size(); ++ci) {
            if (draw < weights[ci]) break;
            draw -= weights[ci];
        }
        const std::string& category = pool[ci];
        const auto& shapes = allowed_shapes(category);
        std::string shape = shapes[rng.uniform_index(shapes.size())];
        std::string color = palette[rng.uniform_index(palette.size())];

        bool ok = false;
        Box box{0, 0, 0, 0};
        for (std::size_t attempt = 0; attempt < config.max_retries && !ok; ++attempt) {
            long s = rng.uniform_int(static_cast<long>(config.min_object_px),
                                     static_cast<long>(config.max_object_px));
            long w = s, h = s;
            if (shape == "rectangular") {
                h = std::max<long>(2, static_cast<long>(std::lround(s * rng.uniform(0.45, 0.8))));
                if (rng.bernoulli(0.5)) std::swap(w, h);
            } else if (shape == "linear") {
                w = std::min<long>(static_cast<long>(config.width) - 2, s * 3);
                h = std::max<long>(2, s / 4);
                if (rng.bernoulli(0.5)) std::swap(w, h);
            }
            if (w + 2 >= static_cast<long>(config.width) || h + 2 >= static_cast<long>(config.height)) continue;
            long x0 = rng.uniform_int(1, static_cast<long>(config.width) - w - 1);
            long y0 = rng.uniform_int(1, static_cast<long>(config.height) - h - 1);
            Box cand{x0, y0, x0 + w, y0 + h};
            bool clash = false;
            for (const auto& other : placed)
                if (cand.overlaps(other)) {
                    clash = true;
                    break;
                }
            if (!clash) {
                box = cand;
                ok = true;
            }
        }
        if (!ok)
            throw GenerationError("scene " + ann.scene_id + ": could not place object " +
                                  std::to_string(i + 1) + " of " + std::to_string(n_objects) + " after " +
                                  std::to_string(config.max_retries) + " retries");
        placed.push_back(box);
        fill_shape(raster, box, shape, palette_rgb(color));

        ObjectAnnotation obj;
        obj.category = category;
        obj.x_min = static_cast<double>(box.x0);
        obj.y_min = static_cast<double>(box.y0);
        obj.x_max = static_cast<double>(box.x1);
        obj.y_max = static_cast<double>(box.y1);
        obj.color = color;
        obj.shape = shape;
        obj.area_m2 = static_cast<double>((box.x1 - box.x0) * (box.y1 - box.y0)) * mpp2;
        ann.region_areas[category] += obj.area_m2;
        ann.objects.push_back(std::move(obj));
    }

    // region stuff areas: the scene label always covers a large share, plus a
    // few other region categories with smaller footprints
    double scene_area = static_cast<double>(config.width * config.height) * mpp2;
    ann.region_areas[ann.scene_label] += rng.uniform(0.3, 0.7) * scene_area;
    std::size_t extra = config.max_extra_regions == 0
                            ? 0
                            : static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(config.max_extra_regions)));
    const auto& regions = concepts::region();
    for (std::size_t e = 0; e < extra; ++e) {
        const std::string& cat = regions[rng.uniform_index(regions.size())];
        if (cat == ann.scene_label) continue;
        ann.region_areas[cat] += rng.uniform(0.02, 0.25) * scene_area;
    }
    return {std::move(raster), std::move(ann)};
}

void save_raster(const std::string& path, const SceneRaster& raster) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open raster for writing: " + path);
    os.write("GFR1", 4);
    write_u32_le_bytes(os, static_cast<std::uint32_t>(raster.width));
    write_u32_le_bytes(os, static_cast<std::uint32_t>(raster.height));
    os.write(reinterpret_cast<const char*>(raster.rgb.data()),
             static_cast<std::streamsize>(raster.rgb.size()));
    if (!os) throw ParseError("raster write failed: " + path);
}

SceneRaster load_raster(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open raster: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "GFR1") throw ParseError("bad raster magic in " + path);
    SceneRaster r;
    r.width = read_u32_le_bytes(is, path);
    r.height = read_u32_le_bytes(is, path);
    r.rgb.resize(r.width * r.height * 3);
    if (!is.read(reinterpret_cast<char*>(r.rgb.data()), static_cast<std::streamsize>(r.rgb.size())))
        throw ParseError("truncated raster data in " + path);
    return r;
}

namespace {

json object_to_json(const ObjectAnnotation& o) {
    json j;
    j["category"] = o.category;
    j["bbox"] = {o.x_min, o.y_min, o.x_max, o.y_max};
    j["color"] = o.color ? json(*o.color) : json(nullptr);
    j["shape"] = o.shape ? json(*o.shape) : json(nullptr);
    j["area_m2"] = o.area_m2;
    return j;
}

[[noreturn]] void reject(long line, const std::string& field, const std::string& why) {
    throw ParseError(line, field + ": " + why);
}

double require_number(const json& j, long line, const std::string& field) {
    if (!j.contains(field) || !j[field].is_number()) reject(line, field, "missing or not a number");
    return j[field].get<double>();
}

std::string require_string(const json& j, long line, const std::string& field) {
    if (!j.contains(field) || !j[field].is_string()) reject(line, field, "missing or not a string");
    return j[field].get<std::string>();
}

ObjectAnnotation object_from_json(const json& j, long line, const SceneAnnotation& scene) {
    ObjectAnnotation o;
    o.category = require_string(j, line, "category");
    if (!concepts::is_known(o.category)) reject(line, "category", "unknown concept '" + o.category + "'");
    if (!j.contains("bbox") || !j["bbox"].is_array() || j["bbox"].size() != 4)
        reject(line, "bbox", "must be an array [x_min, y_min, x_max, y_max]");
    for (const auto& v : j["bbox"])
        if (!v.is_number()) reject(line, "bbox", "entries must be numbers");
    o.x_min = j["bbox"][0].get<double>();
    o.y_min = j["bbox"][1].get<double>();
    o.x_max = j["bbox"][2].get<double>();
    o.y_max = j["bbox"][3].get<double>();
    if (!(o.x_min >= 0 && o.x_min < o.x_max && o.x_max <= static_cast<double>(scene.width_px)))
        reject(line, "bbox", "requires 0 <= x_min < x_max <= width_px");
    if (!(o.y_min >= 0 && o.y_min < o.y_max && o.y_max <= static_cast<double>(scene.height_px)))
        reject(line, "bbox", "requires 0 <= y_min < y_max <= height_px");
    bool isolated = concepts::is_isolated(o.category);
    if (!j.contains("color") || !j.contains("shape")) reject(line, "color", "color/shape fields required (null for region stuff)");
    if (j["color"].is_null() != j["shape"].is_null())
        reject(line, "color", "color and shape must both be set or both be null");
    if (isolated && j["color"].is_null()) reject(line, "color", "required for isolated object '" + o.category + "'");
    if (!isolated && !j["color"].is_null()) reject(line, "color", "must be null for region stuff '" + o.category + "'");
    if (!j["color"].is_null()) {
        std::string c = j["color"].get<std::string>();
        const auto& pal = concepts::palette();
        if (std::find(pal.begin(), pal.end(), c) == pal.end()) reject(line, "color", "unknown palette color '" + c + "'");
        o.color = c;
        std::string s = j["shape"].get<std::string>();
        const auto& sh = concepts::shapes();
        if (std::find(sh.begin(), sh.end(), s) == sh.end()) reject(line, "shape", "unknown shape '" + s + "'");
        o.shape = s;
    }
    o.area_m2 = require_number(j, line, "area_m2");
    if (o.area_m2 < 0) reject(line, "area_m2", "must be nonnegative");
    return o;
}

}  // namespace

void save_annotations(const std::string& path, const std::vector<SceneAnnotation>& annotations) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open annotations for writing: " + path);
    for (const auto& a : annotations) {
        json j;
        j["scene_id"] = a.scene_id;
        j["width_px"] = a.width_px;
        j["height_px"] = a.height_px;
        j["meters_per_pixel"] = a.meters_per_pixel;
        j["scene_label"] = a.scene_label;
        json objs = json::array();
        for (const auto& o : a.objects) objs.push_back(object_to_json(o));
        j["objects"] = std::move(objs);
        j["region_areas"] = a.region_areas;
        os << j.dump() << '\n';
    }
    if (!os) throw ParseError("annotation write failed: " + path);
}

std::vector<SceneAnnotation> ingest_annotations(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open annotations: " + path);
    std::vector<SceneAnnotation> out;
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
        if (!j.is_object()) reject(line_no, "line", "must be a JSON object");
        SceneAnnotation a;
        a.scene_id = require_string(j, line_no, "scene_id");
        double w = require_number(j, line_no, "width_px");
        double h = require_number(j, line_no, "height_px");
        if (w <= 0 || h <= 0) reject(line_no, "width_px", "dimensions must be positive");
        a.width_px = static_cast<std::size_t>(w);
        a.height_px = static_cast<std::size_t>(h);
        a.meters_per_pixel = require_number(j, line_no, "meters_per_pixel");
        if (a.meters_per_pixel <= 0) reject(line_no, "meters_per_pixel", "must be positive");
        a.scene_label = require_string(j, line_no, "scene_label");
        const auto& labels = concepts::scene_labels();
        if (std::find(labels.begin(), labels.end(), a.scene_label) == labels.end())
            reject(line_no, "scene_label", "unknown scene label '" + a.scene_label + "'");
        if (!j.contains("objects") || !j["objects"].is_array()) reject(line_no, "objects", "missing or not an array");
        for (const auto& oj : j["objects"]) a.objects.push_back(object_from_json(oj, line_no, a));
        if (!j.contains("region_areas") || !j["region_areas"].is_object())
            reject(line_no, "region_areas", "missing or not an object");
        for (auto it = j["region_areas"].begin(); it != j["region_areas"].end(); ++it) {
            if (!concepts::is_known(it.key())) reject(line_no, "region_areas", "unknown concept '" + it.key() + "'");
            if (!it.value().is_number()) reject(line_no, "region_areas", "value for '" + it.key() + "' not a number");
            double v = it.value().get<double>();
            if (v < 0) reject(line_no, "region_areas", "area for '" + it.key() + "' must be nonnegative");
            a.region_areas[it.key()] = v;
        }
        out.push_back(std::move(a));
    }
    return out;
}

DatasetSplit split_dataset(const std::vector<std::string>& scene_ids, const SplitFractions& fractions) {
    if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0)
        throw ConfigError("split fractions must be nonnegative");
    double sum = fractions.train + fractions.val + fractions.test;
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1, got " + std::to_string(sum));
    std::vector<std::pair<std::uint64_t, std::string>> keyed;
    keyed.reserve(scene_ids.size());
    for (const auto& id : scene_ids) keyed.emplace_back(Rng::hash_string(id), id);
    std::sort(keyed.begin(), keyed.end());
    std::size_t n = keyed.size();
    auto b1 = static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(n)));
    auto b2 = static_cast<std::size_t>(std::llround((fractions.train + fractions.val) * static_cast<double>(n)));
    b1 = std::min(b1, n);
    b2 = std::min(std::max(b2, b1), n);
    DatasetSplit split;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < b1)
            split.train.push_back(keyed[i].second);
        else if (i < b2)
            split.val.push_back(keyed[i].second);
        else
            split.test.push_back(keyed[i].second);
    }
    return split;
}

}  // namespace gft
