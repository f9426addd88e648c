#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "gft/scene.hpp"

using namespace gft;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

struct Rgb {
    std::uint8_t r, g, b;
};

Rgb palette_color(const std::string& name) {
    if (name == "red") return {220, 48, 48};
    if (name == "blue") return {48, 88, 220};
    if (name == "green") return {48, 180, 80};
    if (name == "grey") return {128, 128, 128};
    if (name == "white") return {245, 245, 245};
    if (name == "black") return {16, 16, 16};
    return {232, 216, 56};  // yellow
}

}  // namespace

TEST_SUITE_BEGIN("scene");

TEST_CASE("concept pools partition the 27 categories") {
    CHECK(concepts::all().size() == 27);
    CHECK(concepts::isolated().size() == 18);
    CHECK(concepts::region().size() == 9);
    std::set<std::string> seen(concepts::all().begin(), concepts::all().end());
    CHECK(seen.size() == 27);
    CHECK(concepts::is_isolated("ship"));
    CHECK(!concepts::is_isolated("water section"));
    CHECK(concepts::palette().size() == 7);
    CHECK(concepts::shapes().size() == 4);
}

TEST_CASE("same seed gives byte-identical raster and annotation") {
    GenConfig cfg;
    auto [r1, a1] = generate_scene(0xabcdef12, cfg);
    auto [r2, a2] = generate_scene(0xabcdef12, cfg);
    CHECK(r1 == r2);
    CHECK(a1 == a2);
    auto [r3, a3] = generate_scene(0xabcdef13, cfg);
    CHECK(r3.rgb != r1.rgb);

    save_raster("det_a.gfr", r1);
    save_raster("det_b.gfr", r2);
    CHECK(read_file("det_a.gfr") == read_file("det_b.gfr"));
    std::remove("det_a.gfr");
    std::remove("det_b.gfr");
}

TEST_CASE("object count range (0,0) gives a pure background") {
    GenConfig cfg;
    cfg.min_objects = 0;
    cfg.max_objects = 0;
    auto [raster, ann] = generate_scene(99, cfg);
    CHECK(ann.objects.empty());
    // every pixel stays within the background jitter band, so nothing was drawn
    std::uint8_t base_r = raster.pixel(0, 0)[0];
    (void)base_r;
    int max_spread = 0;
    for (std::size_t y = 0; y < raster.height; ++y)
        for (std::size_t x = 1; x < raster.width; ++x)
            for (int c = 0; c < 3; ++c)
                max_spread = std::max(max_spread,
                                      std::abs(int(raster.pixel(x, y)[c]) - int(raster.pixel(0, 0)[c])));
    CHECK(max_spread <= 14);  // two jitter half-ranges
}

TEST_CASE("bbox centers carry the annotated palette color exactly") {
    GenConfig cfg;
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto [raster, ann] = generate_scene(1000 + s, cfg);
        for (const auto& o : ann.objects) {
            REQUIRE(o.color.has_value());
            auto x = static_cast<std::size_t>((o.x_min + o.x_max) / 2.0);
            auto y = static_cast<std::size_t>((o.y_min + o.y_max) / 2.0);
            Rgb want = palette_color(*o.color);
            const std::uint8_t* p = raster.pixel(x, y);
            CHECK(p[0] == want.r);
            CHECK(p[1] == want.g);
            CHECK(p[2] == want.b);
        }
    }
}

TEST_CASE("objects never overlap and stay in bounds") {
    GenConfig cfg;
    cfg.max_objects = 10;
    for (std::uint64_t s = 0; s < 50; ++s) {
        auto [raster, ann] = generate_scene(2000 + s, cfg);
        for (std::size_t i = 0; i < ann.objects.size(); ++i) {
            const auto& a = ann.objects[i];
            CHECK(a.x_min >= 0);
            CHECK(a.x_max <= double(cfg.width));
            CHECK(a.y_min >= 0);
            CHECK(a.y_max <= double(cfg.height));
            CHECK(a.x_min < a.x_max);
            CHECK(a.y_min < a.y_max);
            for (std::size_t j = i + 1; j < ann.objects.size(); ++j) {
                const auto& b = ann.objects[j];
                bool disjoint = a.x_max <= b.x_min || b.x_max <= a.x_min || a.y_max <= b.y_min ||
                                b.y_max <= a.y_min;
                CHECK(disjoint);
            }
        }
    }
}

TEST_CASE("per-category frequencies match configured weights within 3 sigma") {
    GenConfig cfg;
    cfg.allowed_categories = {"ship", "small vehicle", "building", "swimming pool"};
    cfg.category_weights = {4.0, 2.0, 1.0, 1.0};
    cfg.min_objects = 3;
    cfg.max_objects = 6;
    std::map<std::string, std::size_t> counts;
    std::size_t total = 0;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        auto [raster, ann] = generate_scene(31337 + s, cfg);
        for (const auto& o : ann.objects) {
            counts[o.category] += 1;
            ++total;
        }
    }
    double wsum = 8.0;
    std::vector<std::pair<std::string, double>> expected = {
        {"ship", 4.0 / wsum}, {"small vehicle", 2.0 / wsum}, {"building", 1.0 / wsum},
        {"swimming pool", 1.0 / wsum}};
    for (const auto& [cat, p] : expected) {
        double mean = p * static_cast<double>(total);
        double sigma = std::sqrt(static_cast<double>(total) * p * (1 - p));
        CHECK(std::abs(static_cast<double>(counts[cat]) - mean) <= 3.0 * sigma);
    }
}

TEST_CASE("unsatisfiable placement raises a generation error") {
    GenConfig cfg;
    cfg.width = cfg.height = 16;
    cfg.min_objects = 30;
    cfg.max_objects = 30;
    cfg.min_object_px = 10;
    cfg.max_object_px = 12;
    cfg.max_retries = 20;
    CHECK_THROWS_AS(generate_scene(5, cfg), GenerationError);
}

TEST_CASE("raster file round-trip and bad magic") {
    GenConfig cfg;
    auto [raster, ann] = generate_scene(77, cfg);
    save_raster("rt.gfr", raster);
    auto loaded = load_raster("rt.gfr");
    CHECK(loaded == raster);
    {
        std::string bytes = read_file("rt.gfr");
        CHECK(bytes.substr(0, 4) == "GFR1");
        std::ofstream os("rt_bad.gfr", std::ios::binary);
        os << "GFRX" << bytes.substr(4);
    }
    CHECK_THROWS_AS(load_raster("rt_bad.gfr"), ParseError);
    std::remove("rt.gfr");
    std::remove("rt_bad.gfr");
}

TEST_CASE("annotations: export then ingest 100 scenes is the identity") {
    GenConfig cfg;
    std::vector<SceneAnnotation> scenes;
    for (std::uint64_t s = 0; s < 100; ++s) scenes.push_back(generate_scene(4000 + s, cfg).second);
    save_annotations("rt_ann.jsonl", scenes);
    auto loaded = ingest_annotations("rt_ann.jsonl");
    REQUIRE(loaded.size() == scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) CHECK(loaded[i] == scenes[i]);
    std::remove("rt_ann.jsonl");
}

TEST_CASE("ingest rejects invariant violations with line and field") {
    {
        std::ofstream os("bad1.jsonl");
        os << R"({"scene_id":"s1","width_px":64,"height_px":64,"meters_per_pixel":0.08,"scene_label":"harbor","objects":[{"category":"ship","bbox":[10,10,5,20],"color":"red","shape":"rectangular","area_m2":1.0}],"region_areas":{}})"
           << "\n";
    }
    CHECK_THROWS_WITH_AS(ingest_annotations("bad1.jsonl"), doctest::Contains("bbox"), ParseError);
    try {
        ingest_annotations("bad1.jsonl");
    } catch (const ParseError& e) {
        CHECK(e.line == 1);
    }
    std::remove("bad1.jsonl");

    {
        std::ofstream os("bad2.jsonl");
        os << R"({"scene_id":"ok","width_px":64,"height_px":64,"meters_per_pixel":0.08,"scene_label":"harbor","objects":[],"region_areas":{}})" << "\n";
        os << "not json\n";
    }
    try {
        ingest_annotations("bad2.jsonl");
        CHECK(false);
    } catch (const ParseError& e) {
        CHECK(e.line == 2);
    }
    std::remove("bad2.jsonl");

    {
        // color on region stuff violates the attribute invariant
        std::ofstream os("bad3.jsonl");
        os << R"({"scene_id":"s3","width_px":64,"height_px":64,"meters_per_pixel":0.08,"scene_label":"harbor","objects":[{"category":"water section","bbox":[1,1,5,5],"color":"blue","shape":"round","area_m2":1.0}],"region_areas":{}})"
           << "\n";
    }
    CHECK_THROWS_WITH_AS(ingest_annotations("bad3.jsonl"), doctest::Contains("color"), ParseError);
    std::remove("bad3.jsonl");

    {
        std::ofstream os("empty.jsonl");
    }
    CHECK(ingest_annotations("empty.jsonl").empty());
    std::remove("empty.jsonl");
}

TEST_CASE("split_dataset: determinism, partition, and target sizes") {
    std::vector<std::string> ids;
    for (int i = 0; i < 1000; ++i) ids.push_back("scene-" + std::to_string(i));

    auto all_train = split_dataset(ids, {1.0, 0.0, 0.0});
    CHECK(all_train.train.size() == 1000);
    CHECK(all_train.val.empty());
    CHECK(all_train.test.empty());

    SplitFractions def;
    auto s1 = split_dataset(ids, def);
    auto s2 = split_dataset(ids, def);
    CHECK(s1.train == s2.train);
    CHECK(s1.val == s2.val);
    CHECK(s1.test == s2.test);
    CHECK(std::llabs(long(s1.train.size()) - 505) <= 1);
    CHECK(std::llabs(long(s1.val.size()) - 126) <= 1);
    CHECK(std::llabs(long(s1.test.size()) - 369) <= 1);

    std::set<std::string> seen;
    for (const auto* part : {&s1.train, &s1.val, &s1.test})
        for (const auto& id : *part) CHECK(seen.insert(id).second);
    CHECK(seen.size() == ids.size());

    CHECK_THROWS_AS(split_dataset(ids, {0.5, 0.5, 0.5}), ConfigError);
    CHECK_THROWS_AS(split_dataset(ids, {1.2, -0.1, -0.1}), ConfigError);
}

TEST_SUITE_END();
