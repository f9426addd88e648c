#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gft/attention.hpp"
#include "gft/fusion.hpp"
#include "gft/ops.hpp"

namespace gft {

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_head = 16;
    std::size_t ffn_hidden = 0;  // 0 selects 4*d_model
    std::size_t n_layers = 2;
    Assembly assembly = Assembly::EncoderDecoder;
    bool gated_attention = true;
    bool mutual_fusion = true;
    std::size_t d_pos = 16;
    double dropout = 0.1;
    std::size_t grid = 8;        // G: grid features are G x G
    std::size_t image_size = 64; // square raster edge
    std::size_t embed_dim = 32;
    std::size_t lstm_hidden = 48;
    std::size_t max_q_len = 16;

    MhaConfig mha() const {
        MhaConfig m;
        m.d_model = d_model;
        m.n_heads = n_heads;
        m.d_head = d_head;
        m.ffn_hidden = ffn_hidden;
        m.dropout_rate = dropout;
        m.n_layers = n_layers;
        m.assembly = assembly;
        m.d_pos = d_pos;
        m.gated = gated_attention;
        return m;
    }

    // Number of stride-2 stages needed to reach the grid resolution.
    std::size_t conv_stages() const {
        if (grid == 0 || image_size % grid != 0) throw ConfigError("image_size must be a multiple of grid");
        std::size_t ratio = image_size / grid;
        std::size_t stages = 0;
        while (ratio > 1) {
            if (ratio % 2 != 0) throw ConfigError("image_size / grid must be a power of two");
            ratio /= 2;
            ++stages;
        }
        if (stages == 0) throw ConfigError("image_size must exceed grid");
        return stages;
    }

    void validate() const {
        mha().validate();
        conv_stages();
        if (max_q_len < 1) throw ConfigError("max_q_len must be >= 1");
        if (embed_dim < 1 || lstm_hidden < 1) throw ConfigError("text encoder dims must be positive");
    }
};

// Small trainable stack of stride-2 3x3 convolutions mapping the raster to
// G x G x d_model grid features.
template <typename Real>
struct FeaturizerParams {
    struct Conv {
        Tensor<Real> w;  // [out, in, 3, 3]
        Tensor<Real> b;  // [out]
    };
    std::vector<Conv> convs;

    static FeaturizerParams init(const ModelConfig& cfg, Rng& rng) {
        FeaturizerParams f;
        std::size_t stages = cfg.conv_stages();
        std::size_t in_ch = 3;
        for (std::size_t s = 0; s < stages; ++s) {
            std::size_t out_ch = s + 1 == stages ? cfg.d_model
                                                 : std::max<std::size_t>(8, cfg.d_model >> (stages - 1 - s));
            Conv c;
            double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * 9));
            std::vector<Real> wv(out_ch * in_ch * 9);
            for (auto& x : wv) x = static_cast<Real>(rng.uniform(-bound, bound));
            c.w = Tensor<Real>::from_data({out_ch, in_ch, 3, 3}, std::move(wv));
            c.b = Tensor<Real>::zeros({out_ch});
            f.convs.push_back(std::move(c));
            in_ch = out_ch;
        }
        return f;
    }

    void register_into(ParamSet<Real>& ps, const std::string& prefix) {
        for (std::size_t i = 0; i < convs.size(); ++i) {
            ps.add(prefix + ".conv" + std::to_string(i) + ".w", convs[i].w);
            ps.add(prefix + ".conv" + std::to_string(i) + ".b", convs[i].b);
        }
    }

    // [B, 3, H, W] -> [B, G*G, d_model], grid cells in row-major order.
    Tensor<Real> operator()(const Tensor<Real>& images) const {
        Tensor<Real> x = images;
        for (const auto& c : convs) x = relu(conv2d(x, c.w, c.b, 2, 1));
        std::size_t b = x.shape()[0], d = x.shape()[1], g = x.shape()[2];
        return reshape(transpose(x, {0, 2, 3, 1}), {b, g * g, d});
    }
};

// Word embeddings fed through an LSTM, all step outputs projected to d_model.
template <typename Real>
struct TextEncoderParams {
    Tensor<Real> embed;  // [vocab, embed_dim]
    LstmWeights<Real> lstm;
    LinearParams<Real> proj;  // lstm_hidden -> d_model

    static TextEncoderParams init(std::size_t vocab, const ModelConfig& cfg, Rng& rng) {
        TextEncoderParams t;
        double bound = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
        std::vector<Real> ev(vocab * cfg.embed_dim);
        for (auto& x : ev) x = static_cast<Real>(rng.uniform(-bound, bound));
        t.embed = Tensor<Real>::from_data({vocab, cfg.embed_dim}, std::move(ev));
        auto init_mat = [&rng](std::size_t in, std::size_t out) {
            double b = 1.0 / std::sqrt(static_cast<double>(in));
            std::vector<Real> v(in * out);
            for (auto& x : v) x = static_cast<Real>(rng.uniform(-b, b));
            return Tensor<Real>::from_data({in, out}, std::move(v));
        };
        t.lstm.wx = init_mat(cfg.embed_dim, 4 * cfg.lstm_hidden);
        t.lstm.wh = init_mat(cfg.lstm_hidden, 4 * cfg.lstm_hidden);
        t.lstm.b = Tensor<Real>::zeros({4 * cfg.lstm_hidden});
        t.proj = LinearParams<Real>::init(cfg.lstm_hidden, cfg.d_model, rng);
        return t;
    }

    void register_into(ParamSet<Real>& ps, const std::string& prefix) {
        ps.add(prefix + ".embed", embed);
        ps.add(prefix + ".lstm.wx", lstm.wx);
        ps.add(prefix + ".lstm.wh", lstm.wh);
        ps.add(prefix + ".lstm.b", lstm.b);
        register_linear(ps, prefix + ".proj", proj);
    }

    // ids are [B * L] row-major; returns [B, L, d_model].
    Tensor<Real> operator()(const std::vector<long>& ids, std::size_t batch, std::size_t seq_len,
                            std::size_t hidden, std::size_t d_model) const {
        Tensor<Real> emb = embedding_lookup(embed, ids, {batch, seq_len});  // [B, L, e]
        Tensor<Real> h = Tensor<Real>::zeros({batch, hidden});
        Tensor<Real> c = Tensor<Real>::zeros({batch, hidden});
        std::vector<Tensor<Real>> steps;
        steps.reserve(seq_len);
        std::size_t e = embed.shape()[1];
        for (std::size_t t = 0; t < seq_len; ++t) {
            Tensor<Real> xt = reshape(narrow(emb, 1, t, 1), {batch, e});
            auto [h2, c2] = lstm_step(xt, h, c, lstm);
            h = h2;
            c = c2;
            steps.push_back(reshape(h, {batch, std::size_t(1), hidden}));
        }
        Tensor<Real> seq = concat(steps, 1);  // [B, L, hidden]
        return add(matmul(seq, proj.w), proj.b);
    }
};

// Full pipeline: featurize -> attention stack -> reduce -> fuse -> classify.
template <typename Real>
class VqaModel {
public:
    VqaModel(const ModelConfig& cfg, std::size_t word_vocab, std::size_t n_answers, std::uint64_t init_seed)
        : cfg_(cfg), mha_(cfg.mha()), n_answers_(n_answers) {
        cfg_.validate();
        Rng rng(init_seed);
        feat_ = FeaturizerParams<Real>::init(cfg_, rng);
        text_ = TextEncoderParams<Real>::init(word_vocab, cfg_, rng);
        stack_ = StackParams<Real>::init(mha_, rng);
        reduce_x_ = ReduceParams<Real>::init(cfg_.d_model, rng);
        reduce_y_ = ReduceParams<Real>::init(cfg_.d_model, rng);
        if (cfg_.mutual_fusion)
            mf_ = MutualFusionParams<Real>::init(cfg_.d_model, rng);
        else
            bf_ = BaselineFuseParams<Real>::init(cfg_.d_model, rng);
        cls_ = ClassifierParams<Real>::init(cfg_.d_model, n_answers, rng);
        tables_ = build_rel_tables<Real>(cfg_.grid, cfg_.max_q_len, cfg_.d_pos);

        feat_.register_into(params_, "feat");
        text_.register_into(params_, "text");
        stack_.register_into(params_, "stack");
        reduce_x_.register_into(params_, "reduce_x");
        reduce_y_.register_into(params_, "reduce_y");
        if (cfg_.mutual_fusion)
            mf_.register_into(params_, "mf");
        else
            bf_.register_into(params_, "bf");
        cls_.register_into(params_, "cls");
    }

    const ModelConfig& config() const { return cfg_; }
    std::size_t n_answers() const { return n_answers_; }
    ParamSet<Real>& params() { return params_; }
    const ParamSet<Real>& params() const { return params_; }

    // images: [B, 3, H, W]; ids: B * max_q_len tokens. Returns probs [B, A].
    Tensor<Real> forward(const Tensor<Real>& images, const std::vector<long>& ids, bool training, Rng& rng) const {
        std::size_t batch = images.shape()[0];
        if (ids.size() != batch * cfg_.max_q_len)
            throw DimensionError("token id count " + std::to_string(ids.size()) + " != batch " +
                                 std::to_string(batch) + " * max_q_len " + std::to_string(cfg_.max_q_len));
        Tensor<Real> x = feat_(images);
        Tensor<Real> y = text_(ids, batch, cfg_.max_q_len, cfg_.lstm_hidden, cfg_.d_model);
        auto [xa, ya] = attention_stack_forward(x, y, mha_, stack_, tables_, training, rng);
        Tensor<Real> xp = attentional_reduce(xa, reduce_x_, cfg_.dropout, training, rng);
        Tensor<Real> yp = attentional_reduce(ya, reduce_y_, cfg_.dropout, training, rng);
        Tensor<Real> fused = cfg_.mutual_fusion ? mutual_fusion(xp, yp, mf_, cfg_.dropout, training, rng)
                                                : baseline_fuse(xp, yp, bf_);
        return classify(fused, cls_);
    }

private:
    ModelConfig cfg_;
    MhaConfig mha_;
    std::size_t n_answers_;
    FeaturizerParams<Real> feat_;
    TextEncoderParams<Real> text_;
    StackParams<Real> stack_;
    ReduceParams<Real> reduce_x_, reduce_y_;
    MutualFusionParams<Real> mf_;
    BaselineFuseParams<Real> bf_;
    ClassifierParams<Real> cls_;
    RelTables<Real> tables_;
    ParamSet<Real> params_;
};

}  // namespace gft
