// gft: synthetic aerial-scene VQA pipeline driver.
//
// Subcommands: gen-scenes, gen-qa, stats, train, eval, gradcheck.
// Exit codes: 0 success, 1 usage error, 2 data/config error.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "gft/config.hpp"
#include "gft/gradcheck_suite.hpp"
#include "gft/metrics.hpp"
#include "gft/qa.hpp"
#include "gft/scene.hpp"
#include "gft/train.hpp"

namespace fs = std::filesystem;

namespace {

struct GenScenesArgs {
    std::uint64_t seed = 1;
    std::size_t count = 100;
    std::string out_dir;
    std::size_t size = 64;
    std::size_t min_objects = 2, max_objects = 8;
    double mpp = 0.08;
    std::vector<std::string> categories;
};

int run_gen_scenes(const GenScenesArgs& a) {
    gft::GenConfig cfg;
    cfg.width = cfg.height = a.size;
    cfg.min_objects = a.min_objects;
    cfg.max_objects = a.max_objects;
    cfg.meters_per_pixel = a.mpp;
    cfg.allowed_categories = a.categories;
    fs::create_directories(a.out_dir);
    std::vector<gft::SceneAnnotation> annotations;
    for (std::size_t i = 0; i < a.count; ++i) {
        std::uint64_t scene_seed = gft::Rng::mix(a.seed, i);
        auto [raster, ann] = gft::generate_scene(scene_seed, cfg);
        gft::save_raster(a.out_dir + "/" + ann.scene_id + ".gfr", raster);
        annotations.push_back(std::move(ann));
    }
    gft::save_annotations(a.out_dir + "/annotations.jsonl", annotations);
    std::cout << "wrote " << a.count << " scenes to " << a.out_dir << "\n";
    return 0;
}

struct GenQaArgs {
    std::string annotations;
    std::string templates;
    std::uint64_t seed = 1;
    std::string out_dir;
    std::size_t per_scene = 200;
    std::size_t keep = 20;
    bool no_filter = false;
    std::vector<double> fractions = {0.505, 0.126, 0.369};
    std::vector<std::string> types;
    double present_bias = 0.0;
    int max_ordinal = 3;
    std::size_t max_count = 20;
    double filter_prob = 0.2, ordinal_prob = 0.6, comparison_prob = 0.35;
};

int run_gen_qa(const GenQaArgs& a) {
    auto scenes = gft::ingest_annotations(a.annotations);
    auto templates = gft::TemplateSet::load(a.templates);
    if (a.fractions.size() != 3) throw gft::ConfigError("--fractions needs exactly three values");

    gft::QGenConfig gen;
    gen.max_count = a.max_count;
    gen.present_concept_bias = a.present_bias;
    gen.max_ordinal = a.max_ordinal;
    gen.attribute_filter_prob = a.filter_prob;
    gen.ordinal_prob = a.ordinal_prob;
    gen.comparison_prob = a.comparison_prob;
    if (!a.types.empty())
        for (const auto& t : a.types) gen.type_weights[gft::parse_qtype(t)] = 1.0;

    gft::SplitFractions fr{a.fractions[0], a.fractions[1], a.fractions[2]};
    std::vector<std::string> ids;
    std::map<std::string, const gft::SceneAnnotation*> by_id;
    for (const auto& s : scenes) {
        ids.push_back(s.scene_id);
        by_id[s.scene_id] = &s;
    }
    auto split = gft::split_dataset(ids, fr);

    std::vector<gft::SceneAnnotation> train_scenes;
    for (const auto& id : split.train) train_scenes.push_back(*by_id.at(id));
    auto thresholds = gft::compute_size_thresholds(train_scenes);
    auto vocab = gft::AnswerVocabulary::build(gen.max_count);

    fs::create_directories(a.out_dir);
    auto emit = [&](const std::vector<std::string>& part_ids, const std::string& name) {
        std::vector<gft::QATriplet> out;
        for (const auto& id : part_ids) {
            const auto& ann = *by_id.at(id);
            auto candidates = gft::generate_triplets(ann, a.seed, a.per_scene, gen, templates, thresholds);
            if (a.no_filter) {
                out.insert(out.end(), candidates.begin(), candidates.end());
                continue;
            }
            gft::Rng filter_rng(gft::Rng::mix(a.seed ^ 0xf117e5ull, gft::Rng::hash_string(id)));
            std::size_t round = 0;
            auto regen = [&]() {
                ++round;
                return gft::generate_triplets(ann, gft::Rng::mix(a.seed, 0xbeef00 + round), a.per_scene, gen,
                                              templates, thresholds);
            };
            gft::FilterOptions opts;
            opts.keep = a.keep;
            auto kept = gft::filter_triplets(candidates, filter_rng, regen, opts);
            out.insert(out.end(), kept.begin(), kept.end());
        }
        gft::save_triplets(a.out_dir + "/triplets_" + name + ".jsonl", out);
        std::cout << name << ": " << out.size() << " triplets from " << part_ids.size() << " scenes\n";
    };
    emit(split.train, "train");
    emit(split.val, "val");
    emit(split.test, "test");

    gft::DatasetManifest manifest;
    manifest.seed = a.seed;
    manifest.gen = gen;
    manifest.thresholds = thresholds;
    manifest.vocabulary = vocab.tokens;
    manifest.fractions = fr;
    manifest.per_scene_candidates = a.per_scene;
    manifest.per_scene_kept = a.keep;
    gft::save_manifest(a.out_dir + "/manifest.json", manifest);
    return 0;
}

int run_stats(const std::string& triplets_path, const std::string& out_dir) {
    auto triplets = gft::load_triplets(triplets_path);
    auto stats = gft::dataset_stats(triplets);
    gft::write_stats_text(std::cout, stats);
    if (!out_dir.empty()) {
        gft::write_stats_csv(stats, out_dir);
        std::cout << "\ncsv written to " << out_dir << "\n";
    }
    return 0;
}

int run_train(const std::string& config_path, const std::string& scenes_dir, const std::string& train_path,
              const std::string& val_path, const std::string& manifest_path, const std::string& out_dir) {
    gft::RunConfig rc = config_path.empty() ? gft::RunConfig{} : gft::load_run_config(config_path);
    auto train_set = gft::load_vqa_dataset(train_path, scenes_dir);
    auto val_set = val_path.empty() ? gft::VqaDataset{} : gft::load_vqa_dataset(val_path, scenes_dir);

    std::vector<std::string> questions;
    for (const auto& e : train_set.examples) questions.push_back(e.question);
    auto words = gft::WordVocab::build(questions);
    gft::AnswerVocabulary answers;
    if (!manifest_path.empty())
        answers = gft::AnswerVocabulary::from_tokens(gft::load_manifest(manifest_path).vocabulary);
    else
        answers = gft::AnswerVocabulary::build(20);

    gft::VqaModel<float> model(rc.model, words.size(), answers.size(), rc.train.seed);
    std::cout << "model: " << model.params().count() << " tensors, " << model.params().total_values()
              << " parameters\n";

    fs::create_directories(out_dir);
    std::ofstream log(out_dir + "/train_log.txt");
    auto result = gft::train_model(model, words, answers, train_set, val_set, rc.train,
                                   out_dir + "/checkpoint.gft", &log);
    std::cout << "best epoch " << result.best_epoch << " val OA " << std::fixed << std::setprecision(4)
              << result.best_val_oa << "\n";
    std::cout << "checkpoint: " << out_dir << "/checkpoint.gft\n";
    return 0;
}

int run_eval(const std::string& checkpoint, const std::string& scenes_dir, const std::string& triplets_path,
             const std::string& csv_path) {
    auto lm = gft::load_model(checkpoint);
    auto test_set = gft::load_vqa_dataset(triplets_path, scenes_dir);
    auto metrics = gft::evaluate_model(*lm.model, lm.words, lm.answers, test_set);
    metrics.aa(&std::cerr);  // surface empty-bucket warnings
    gft::print_metrics_table(std::cout, metrics);
    if (!csv_path.empty()) gft::write_metrics_csv(metrics, csv_path);
    return 0;
}

int run_gradcheck(const std::string& selector) {
    auto result = gft::run_gradcheck_suite(selector);
    for (const auto& c : result.cases)
        std::cout << (c.pass ? "[pass] " : "[FAIL] ") << std::left << std::setw(38) << c.name
                  << " max rel err " << std::scientific << std::setprecision(3) << c.max_rel_err
                  << "  (tol " << c.tolerance << ")\n" << std::defaultfloat;
    std::cout << result.cases.size() << " checks in " << std::fixed << std::setprecision(1)
              << result.seconds << "s\n";
    return result.all_pass() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic aerial-scene VQA: data generation, training, evaluation"};
    app.require_subcommand(1);

    GenScenesArgs gs;
    auto* gen_scenes = app.add_subcommand("gen-scenes", "generate synthetic scenes and annotations");
    gen_scenes->add_option("--seed", gs.seed, "base seed");
    gen_scenes->add_option("--count", gs.count, "number of scenes");
    gen_scenes->add_option("--out", gs.out_dir, "output directory")->required();
    gen_scenes->add_option("--size", gs.size, "raster edge in pixels");
    gen_scenes->add_option("--min-objects", gs.min_objects);
    gen_scenes->add_option("--max-objects", gs.max_objects);
    gen_scenes->add_option("--mpp", gs.mpp, "meters per pixel");
    gen_scenes->add_option("--categories", gs.categories, "restrict object categories")->delimiter(',');

    GenQaArgs gq;
    auto* gen_qa = app.add_subcommand("gen-qa", "generate and filter QA triplets");
    gen_qa->add_option("--annotations", gq.annotations, "annotations jsonl")->required();
    gen_qa->add_option("--templates", gq.templates, "template tsv")->required();
    gen_qa->add_option("--seed", gq.seed);
    gen_qa->add_option("--out-dir", gq.out_dir, "output directory")->required();
    gen_qa->add_option("--per-scene", gq.per_scene, "candidate questions per scene");
    gen_qa->add_option("--keep", gq.keep, "kept triplets per scene");
    gen_qa->add_flag("--no-filter", gq.no_filter, "emit raw candidates");
    gen_qa->add_option("--fractions", gq.fractions, "train,val,test fractions")->delimiter(',');
    gen_qa->add_option("--types", gq.types, "restrict question types")->delimiter(',');
    gen_qa->add_option("--present-bias", gq.present_bias, "bias concept draws toward present ones");
    gen_qa->add_option("--max-ordinal", gq.max_ordinal);
    gen_qa->add_option("--max-count", gq.max_count, "largest counting answer");
    gen_qa->add_option("--filter-prob", gq.filter_prob, "attribute filter probability");
    gen_qa->add_option("--ordinal-prob", gq.ordinal_prob);
    gen_qa->add_option("--comparison-prob", gq.comparison_prob);

    std::string stats_triplets, stats_out;
    auto* stats = app.add_subcommand("stats", "dataset statistics tables");
    stats->add_option("--triplets", stats_triplets)->required();
    stats->add_option("--out", stats_out, "directory for csv output");

    std::string tr_config, tr_scenes, tr_train, tr_val, tr_manifest, tr_out;
    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", tr_config, "key = value config file");
    train->add_option("--scenes", tr_scenes, "directory with .gfr rasters")->required();
    train->add_option("--train", tr_train, "training triplets")->required();
    train->add_option("--val", tr_val, "validation triplets");
    train->add_option("--manifest", tr_manifest, "dataset manifest (answer vocabulary)");
    train->add_option("--out", tr_out, "output directory")->required();

    std::string ev_checkpoint, ev_scenes, ev_triplets, ev_csv;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", ev_checkpoint)->required();
    eval->add_option("--scenes", ev_scenes)->required();
    eval->add_option("--triplets", ev_triplets)->required();
    eval->add_option("--csv", ev_csv, "write metrics csv here");

    std::string gc_module = "all";
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck->add_option("--module", gc_module, "tensor|attention|fusion|model|all");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (*gen_scenes) return run_gen_scenes(gs);
        if (*gen_qa) return run_gen_qa(gq);
        if (*stats) return run_stats(stats_triplets, stats_out);
        if (*train) return run_train(tr_config, tr_scenes, tr_train, tr_val, tr_manifest, tr_out);
        if (*eval) return run_eval(ev_checkpoint, ev_scenes, ev_triplets, ev_csv);
        if (*gradcheck) return run_gradcheck(gc_module);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
