#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gft/errors.hpp"
#include "gft/rng.hpp"

namespace gft {

// The 27 category concepts, split into isolated objects (drawn as shapes,
// carry color/shape attributes) and region stuff (area + scene semantics).
namespace concepts {
const std::vector<std::string>& all();       // 27 names
const std::vector<std::string>& isolated();  // 18
const std::vector<std::string>& region();    // 9
bool is_isolated(const std::string& category);
bool is_known(const std::string& category);
const std::vector<std::string>& palette();            // 7 color names
const std::vector<std::string>& shapes();             // round, square, rectangular, linear
const std::vector<std::string>& scene_labels();       // region categories usable as scene label
const std::vector<std::string>& sports_facilities();  // categories feeding the Sports rule
const std::vector<std::string>& vehicles();           // small/large vehicle
}  // namespace concepts

struct ObjectAnnotation {
    std::string category;
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;  // pixels
    std::optional<std::string> color;                   // palette name, isolated objects only
    std::optional<std::string> shape;                   // round/square/rectangular/linear
    double area_m2 = 0;

    double center_x() const { return (x_min + x_max) / 2.0; }
    double center_y() const { return (y_min + y_max) / 2.0; }

    bool operator==(const ObjectAnnotation&) const = default;
};

struct SceneAnnotation {
    std::string scene_id;
    std::size_t width_px = 0, height_px = 0;
    double meters_per_pixel = 0.08;
    std::string scene_label;
    std::vector<ObjectAnnotation> objects;
    std::map<std::string, double> region_areas;  // category -> total m^2

    double region_area(const std::string& category) const {
        auto it = region_areas.find(category);
        return it == region_areas.end() ? 0.0 : it->second;
    }

    bool operator==(const SceneAnnotation&) const = default;
};

struct SceneRaster {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

    std::uint8_t* pixel(std::size_t x, std::size_t y) { return rgb.data() + (y * width + x) * 3; }
    const std::uint8_t* pixel(std::size_t x, std::size_t y) const { return rgb.data() + (y * width + x) * 3; }

    bool operator==(const SceneRaster&) const = default;
};

struct GenConfig {
    std::size_t width = 64, height = 64;
    double meters_per_pixel = 0.08;
    std::size_t min_objects = 2, max_objects = 8;
    std::size_t min_object_px = 5, max_object_px = 14;
    std::size_t max_retries = 100;
    // Weight per isolated category, parallel to concepts::isolated().
    // Empty means uniform.
    std::vector<double> category_weights;
    // Restrict placement to these isolated categories (empty = all).
    std::vector<std::string> allowed_categories;
    std::size_t max_extra_regions = 2;  // region categories beyond the scene label
};

// Deterministic synthetic scene: background styled by the scene label with
// non-overlapping palette-colored shapes on top. The annotation lists every
// drawn object exhaustively. (seed, config) fully determine all output bytes.
std::pair<SceneRaster, SceneAnnotation> generate_scene(std::uint64_t seed, const GenConfig& config);

// Raster file: "GFR1" magic, u32 LE width, u32 LE height, row-major RGB bytes.
void save_raster(const std::string& path, const SceneRaster& raster);
SceneRaster load_raster(const std::string& path);

// Annotation file: UTF-8 JSON lines, one SceneAnnotation per line.
void save_annotations(const std::string& path, const std::vector<SceneAnnotation>& annotations);
std::vector<SceneAnnotation> ingest_annotations(const std::string& path);

struct SplitFractions {
    double train = 0.505, val = 0.126, test = 0.369;
};

struct DatasetSplit {
    std::vector<std::string> train, val, test;
};

// Disjoint, exhaustive partition of scene ids, ordered by id hash. The same
// ids and fractions always give the same split.
DatasetSplit split_dataset(const std::vector<std::string>& scene_ids, const SplitFractions& fractions);

}  // namespace gft
