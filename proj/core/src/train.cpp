#include "gft/train.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace gft {

using json = nlohmann::json;

double lr_at(std::size_t epoch, const TrainConfig& config) {
    config.validate();
    if (epoch < 1 || epoch > config.epochs)
        throw ContractError("epoch " + std::to_string(epoch) + " out of range [1," +
                            std::to_string(config.epochs) + "]");
    double lr = std::min(config.lr_base * static_cast<double>(epoch), config.lr_cap);
    for (std::size_t d : config.decay_epochs)
        if (epoch >= d) lr *= config.decay_factor;
    return lr;
}

// ---------------------------------------------------------------------------
// tokenization
// ---------------------------------------------------------------------------

std::vector<std::string> WordVocab::tokenize(const std::string& question) {
    std::string cleaned;
    cleaned.reserve(question.size());
    for (char c : question) {
        if (c == '?' || c == '.' || c == ',' || c == '!') continue;
        cleaned.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    std::istringstream is(cleaned);
    std::vector<std::string> tokens;
    std::string tok;
    while (is >> tok) tokens.push_back(tok);
    return tokens;
}

WordVocab WordVocab::build(const std::vector<std::string>& questions) {
    std::set<std::string> seen;
    for (const auto& q : questions)
        for (const auto& t : tokenize(q)) seen.insert(t);
    std::vector<std::string> words = {"<pad>", "<unk>"};
    words.insert(words.end(), seen.begin(), seen.end());
    return from_words(std::move(words));
}

WordVocab WordVocab::from_words(std::vector<std::string> words) {
    WordVocab v;
    v.words = std::move(words);
    for (std::size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = static_cast<long>(i);
    return v;
}

std::vector<long> WordVocab::encode(const std::string& question, std::size_t max_len) const {
    std::vector<long> ids(max_len, 0);  // <pad>
    auto tokens = tokenize(question);
    for (std::size_t i = 0; i < tokens.size() && i < max_len; ++i) {
        auto it = index.find(tokens[i]);
        ids[i] = it == index.end() ? 1 : it->second;  // <unk>
    }
    return ids;
}

// ---------------------------------------------------------------------------
// dataset loading
// ---------------------------------------------------------------------------

VqaDataset load_vqa_dataset(const std::string& triplets_path, const std::string& scenes_dir) {
    VqaDataset ds;
    for (auto& t : load_triplets(triplets_path)) {
        VqaExample e;
        e.scene_id = t.scene_id;
        e.question = t.question;
        e.qtype = t.qtype;
        e.answer = t.answer;
        if (!ds.rasters.count(e.scene_id)) {
            std::string path = scenes_dir + "/" + e.scene_id + ".gfr";
            ds.rasters[e.scene_id] = std::make_shared<SceneRaster>(load_raster(path));
        }
        ds.examples.push_back(std::move(e));
    }
    return ds;
}

namespace {

// Stacks examples into [B,3,H,W] pixels in [0,1] plus flat token ids.
struct Batch {
    Tensor<float> images;
    std::vector<long> ids;
    std::vector<std::size_t> answer_idx;
};

Batch make_batch(const VqaDataset& ds, const std::vector<std::size_t>& indices, std::size_t begin,
                 std::size_t end, const WordVocab& words, const AnswerVocabulary& answers,
                 const ModelConfig& cfg) {
    std::size_t b = end - begin;
    std::size_t hw = cfg.image_size;
    std::vector<float> pixels(b * 3 * hw * hw);
    Batch batch;
    batch.ids.reserve(b * cfg.max_q_len);
    for (std::size_t i = 0; i < b; ++i) {
        const VqaExample& e = ds.examples[indices[begin + i]];
        auto it = ds.rasters.find(e.scene_id);
        if (it == ds.rasters.end()) throw ContractError("missing raster for scene " + e.scene_id);
        const SceneRaster& r = *it->second;
        if (r.width != hw || r.height != hw)
            throw DimensionError("raster " + e.scene_id + " is " + std::to_string(r.width) + "x" +
                                 std::to_string(r.height) + " but the model expects " + std::to_string(hw));
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < hw * hw; ++p)
                pixels[(i * 3 + c) * hw * hw + p] = static_cast<float>(r.rgb[p * 3 + c]) / 255.0f;
        auto ids = words.encode(e.question, cfg.max_q_len);
        batch.ids.insert(batch.ids.end(), ids.begin(), ids.end());
        batch.answer_idx.push_back(answers.id(e.answer));
    }
    batch.images = Tensor<float>::from_data({b, 3, hw, hw}, std::move(pixels));
    return batch;
}

Tensor<float> one_hot_targets(const std::vector<std::size_t>& answer_idx, std::size_t n_answers) {
    std::vector<float> v(answer_idx.size() * n_answers, 0.0f);
    for (std::size_t i = 0; i < answer_idx.size(); ++i) v[i * n_answers + answer_idx[i]] = 1.0f;
    return Tensor<float>::from_data({answer_idx.size(), n_answers}, std::move(v));
}

}  // namespace

TrainResult train_model(VqaModel<float>& model, const WordVocab& words, const AnswerVocabulary& answers,
                        const VqaDataset& train_set, const VqaDataset& val_set, const TrainConfig& config,
                        const std::string& checkpoint_path, std::ostream* log) {
    config.validate();
    if (train_set.examples.empty()) throw ContractError("empty training set");
    const ModelConfig& cfg = model.config();
    AdamState<float> adam;
    Rng dropout_rng(Rng::mix(config.seed, 0xd709));

    TrainResult result;
    std::vector<std::size_t> indices(train_set.examples.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng shuffle_rng(Rng::mix(config.seed, epoch));
        shuffle_rng.shuffle(indices);
        double lr = lr_at(epoch, config);
        double loss_sum = 0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < indices.size(); begin += config.batch_size) {
            std::size_t end = std::min(indices.size(), begin + config.batch_size);
            Batch batch = make_batch(train_set, indices, begin, end, words, answers, cfg);
            Tensor<float> targets = one_hot_targets(batch.answer_idx, model.n_answers());
            model.params().zero_grads();
            double loss_value;
            try {
                Tensor<float> probs = model.forward(batch.images, batch.ids, true, dropout_rng);
                Tensor<float> loss = bce_loss(probs, targets);
                loss_value = loss.item();
                backward(loss);
            } catch (const NumericError& e) {
                throw NumericError("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches + 1) + ": " + e.what());
            }
            if (!std::isfinite(loss_value))
                throw NumericError("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches + 1) + ": non-finite loss");
            adam_step(model.params(), adam, lr, config.beta1, config.beta2, config.adam_eps);
            loss_sum += loss_value;
            ++batches;
        }
        double epoch_loss = loss_sum / static_cast<double>(batches);
        result.epoch_loss.push_back(epoch_loss);

        double val_oa = 0, val_aa = 0;
        if (!val_set.examples.empty()) {
            Metrics m = evaluate_model(model, words, answers, val_set, config.batch_size);
            val_oa = m.oa();
            val_aa = m.aa();
        }
        result.val_oa.push_back(val_oa);
        result.val_aa.push_back(val_aa);
        if (result.best_epoch == 0 || val_oa > result.best_val_oa) {
            result.best_epoch = epoch;
            result.best_val_oa = val_oa;
            if (!checkpoint_path.empty()) {
                model.params().save(checkpoint_path);
                save_model_sidecar(checkpoint_path, cfg, words, answers);
            }
        }
        if (log) {
            std::ostringstream line;
            line << "epoch " << epoch << " lr " << std::setprecision(10) << lr << " loss "
                 << std::setprecision(10) << epoch_loss << " val_oa " << val_oa << " val_aa " << val_aa;
            *log << line.str() << "\n";
        }
    }
    return result;
}

Metrics evaluate_model(const VqaModel<float>& model, const WordVocab& words, const AnswerVocabulary& answers,
                       const VqaDataset& test_set, std::size_t batch_size) {
    NoGradGuard no_grad;
    Metrics metrics;
    for (QType t : all_qtypes()) metrics.register_type(to_string(t));
    const ModelConfig& cfg = model.config();
    Rng eval_rng(0);  // dropout is identity in eval mode
    std::vector<std::size_t> indices(test_set.examples.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    for (std::size_t begin = 0; begin < indices.size(); begin += batch_size) {
        std::size_t end = std::min(indices.size(), begin + batch_size);
        Batch batch = make_batch(test_set, indices, begin, end, words, answers, cfg);
        Tensor<float> probs = model.forward(batch.images, batch.ids, false, eval_rng);
        std::size_t a = model.n_answers();
        for (std::size_t i = 0; i < end - begin; ++i) {
            std::size_t pred = argmax_row(probs.data() + i * a, a);
            const VqaExample& e = test_set.examples[indices[begin + i]];
            metrics.add(to_string(e.qtype), answers.tokens[pred] == e.answer);
        }
    }
    return metrics;
}

void save_model_sidecar(const std::string& checkpoint_path, const ModelConfig& config, const WordVocab& words,
                        const AnswerVocabulary& answers) {
    json j;
    j["d_model"] = config.d_model;
    j["n_heads"] = config.n_heads;
    j["d_head"] = config.d_head;
    j["ffn_hidden"] = config.ffn_hidden;
    j["n_layers"] = config.n_layers;
    j["assembly"] = to_string(config.assembly);
    j["gated_attention"] = config.gated_attention;
    j["mutual_fusion"] = config.mutual_fusion;
    j["d_pos"] = config.d_pos;
    j["dropout"] = config.dropout;
    j["grid"] = config.grid;
    j["image_size"] = config.image_size;
    j["embed_dim"] = config.embed_dim;
    j["lstm_hidden"] = config.lstm_hidden;
    j["max_q_len"] = config.max_q_len;
    j["words"] = words.words;
    j["answers"] = answers.tokens;
    std::ofstream os(checkpoint_path + ".json", std::ios::binary);
    if (!os) throw ParseError("cannot open sidecar for writing: " + checkpoint_path + ".json");
    os << j.dump(2) << '\n';
}

LoadedModel load_model(const std::string& checkpoint_path) {
    std::ifstream is(checkpoint_path + ".json", std::ios::binary);
    if (!is) throw ParseError("cannot open checkpoint sidecar: " + checkpoint_path + ".json");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ParseError(std::string("invalid sidecar JSON: ") + e.what());
    }
    LoadedModel lm;
    lm.config.d_model = j.at("d_model").get<std::size_t>();
    lm.config.n_heads = j.at("n_heads").get<std::size_t>();
    lm.config.d_head = j.at("d_head").get<std::size_t>();
    lm.config.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
    lm.config.n_layers = j.at("n_layers").get<std::size_t>();
    lm.config.assembly = j.at("assembly").get<std::string>() == "stacked" ? Assembly::Stacked
                                                                          : Assembly::EncoderDecoder;
    lm.config.gated_attention = j.at("gated_attention").get<bool>();
    lm.config.mutual_fusion = j.at("mutual_fusion").get<bool>();
    lm.config.d_pos = j.at("d_pos").get<std::size_t>();
    lm.config.dropout = j.at("dropout").get<double>();
    lm.config.grid = j.at("grid").get<std::size_t>();
    lm.config.image_size = j.at("image_size").get<std::size_t>();
    lm.config.embed_dim = j.at("embed_dim").get<std::size_t>();
    lm.config.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
    lm.config.max_q_len = j.at("max_q_len").get<std::size_t>();
    lm.words = WordVocab::from_words(j.at("words").get<std::vector<std::string>>());
    lm.answers = AnswerVocabulary::from_tokens(j.at("answers").get<std::vector<std::string>>());
    lm.model = std::make_unique<VqaModel<float>>(lm.config, lm.words.size(), lm.answers.size(), 0);
    lm.model->params().load(checkpoint_path);
    return lm;
}

}  // namespace gft
