#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gft/metrics.hpp"
#include "gft/model.hpp"
#include "gft/qa.hpp"
#include "gft/scene.hpp"

namespace gft {

struct TrainConfig {
    std::size_t epochs = 13;
    std::size_t batch_size = 32;
    double beta1 = 0.9, beta2 = 0.98, adam_eps = 1e-9;
    // Warmup lr(e) = min(lr_base * e, lr_cap), then *decay_factor at each
    // decay epoch.
    double lr_base = 2.5e-5, lr_cap = 1e-4;
    std::vector<std::size_t> decay_epochs = {10, 12};
    double decay_factor = 0.2;
    std::uint64_t seed = 1;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (decay_factor <= 0 || decay_factor >= 1) throw ConfigError("decay_factor must be in (0,1)");
        for (std::size_t e : decay_epochs)
            if (e >= epochs) throw ConfigError("decay epochs must be < epochs");
        if (lr_base <= 0 || lr_cap <= 0) throw ConfigError("learning rates must be positive");
    }
};

// Learning rate for a 1-based epoch.
double lr_at(std::size_t epoch, const TrainConfig& config);

template <typename Real>
struct AdamState {
    std::map<std::string, std::pair<std::vector<Real>, std::vector<Real>>> moments;  // m, v
    std::size_t step = 0;
};

// Bias-corrected Adam update over every parameter's accumulated gradient.
template <typename Real>
void adam_step(ParamSet<Real>& params, AdamState<Real>& state, double lr, double beta1, double beta2,
               double eps = 1e-9) {
    state.step += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (auto& [path, p] : params) {
        auto& [m, v] = state.moments[path];
        if (m.size() != p.size()) {
            m.assign(p.size(), Real(0));
            v.assign(p.size(), Real(0));
        }
        const auto& g = p.grad();
        Real* value = p.data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = static_cast<Real>(beta1 * m[i] + (1.0 - beta1) * g[i]);
            v[i] = static_cast<Real>(beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]);
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            value[i] -= static_cast<Real>(lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

// Question tokenizer vocabulary; id 0 is <pad>, id 1 is <unk>.
struct WordVocab {
    std::vector<std::string> words;  // includes the two specials
    std::map<std::string, long> index;

    static std::vector<std::string> tokenize(const std::string& question);
    static WordVocab build(const std::vector<std::string>& questions);
    static WordVocab from_words(std::vector<std::string> words);

    std::vector<long> encode(const std::string& question, std::size_t max_len) const;
    std::size_t size() const { return words.size(); }
};

struct VqaExample {
    std::string scene_id;
    std::string question;
    QType qtype = QType::Number;
    std::string answer;
};

struct VqaDataset {
    std::vector<VqaExample> examples;
    // Scene rasters shared across the examples that reference them.
    std::map<std::string, std::shared_ptr<SceneRaster>> rasters;
};

// Loads a triplet file plus the referenced "<scene_id>.gfr" rasters.
VqaDataset load_vqa_dataset(const std::string& triplets_path, const std::string& scenes_dir);

struct TrainResult {
    std::vector<double> epoch_loss;
    std::vector<double> val_oa, val_aa;
    std::size_t best_epoch = 0;  // 1-based
    double best_val_oa = 0.0;
};

// Full training loop: shuffled minibatches, BCE on sigmoid outputs, Adam with
// the warmup/decay schedule, per-epoch validation, best-OA checkpointing.
// Writes one log line per epoch to `log` when given.
TrainResult train_model(VqaModel<float>& model, const WordVocab& words, const AnswerVocabulary& answers,
                        const VqaDataset& train_set, const VqaDataset& val_set, const TrainConfig& config,
                        const std::string& checkpoint_path = "", std::ostream* log = nullptr);

Metrics evaluate_model(const VqaModel<float>& model, const WordVocab& words, const AnswerVocabulary& answers,
                       const VqaDataset& test_set, std::size_t batch_size = 32);

// Checkpoint sidecar ("<checkpoint>.json"): model config plus both
// vocabularies, so eval can rebuild the network without the training setup.
void save_model_sidecar(const std::string& checkpoint_path, const ModelConfig& config, const WordVocab& words,
                        const AnswerVocabulary& answers);

struct LoadedModel {
    ModelConfig config;
    WordVocab words;
    AnswerVocabulary answers;
    std::unique_ptr<VqaModel<float>> model;
};

LoadedModel load_model(const std::string& checkpoint_path);

}  // namespace gft
