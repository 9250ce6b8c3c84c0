#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rolepatch/rng.hpp"

namespace rolepatch {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : ModelError {
    using ModelError::ModelError;
};

// Row-major throughout: a row is one token position's vector.
using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXf;

// Next-token logits at the final position.
using Logits = Eigen::VectorXf;

enum class NormKind { LayerNorm, RMSNorm };
enum class PosKind { Learned, Rotary };
enum class Activation { GELU, SiLU };

struct ModelConfig {
    int n_layers = 0;
    int n_heads = 0;
    int d_model = 0;
    int d_head = 0;
    int d_mlp = 0;
    int vocab_size = 0;
    int max_seq = 0;
    NormKind norm_kind = NormKind::LayerNorm;
    PosKind pos_kind = PosKind::Learned;
    Activation activation = Activation::GELU;
    float norm_eps = 1e-5f;

    void validate() const {
        auto positive = [](int v, const char* name) {
            if (v < 1)
                throw ConfigError(std::string(name) + " must be >= 1, got " +
                                  std::to_string(v));
        };
        positive(n_layers, "n_layers");
        positive(n_heads, "n_heads");
        positive(d_model, "d_model");
        positive(d_head, "d_head");
        positive(d_mlp, "d_mlp");
        positive(vocab_size, "vocab_size");
        positive(max_seq, "max_seq");
        if (d_model != n_heads * d_head)
            throw ConfigError("d_model (" + std::to_string(d_model) +
                              ") != n_heads * d_head (" +
                              std::to_string(n_heads * d_head) + ")");
        if (pos_kind == PosKind::Rotary && d_head % 2 != 0)
            throw ConfigError("rotary embeddings require an even d_head");
        if (norm_eps <= 0.0f) throw ConfigError("norm_eps must be positive");
    }

    static ModelConfig gpt2_small() {
        ModelConfig c;
        c.n_layers = 12;
        c.n_heads = 12;
        c.d_model = 768;
        c.d_head = 64;
        c.d_mlp = 3072;
        c.vocab_size = 50257;
        c.max_seq = 1024;
        return c;
    }
};

inline const char* to_string(NormKind k) {
    return k == NormKind::LayerNorm ? "LayerNorm" : "RMSNorm";
}
inline const char* to_string(PosKind k) {
    return k == PosKind::Learned ? "Learned" : "Rotary";
}
inline const char* to_string(Activation a) {
    return a == Activation::GELU ? "GELU" : "SiLU";
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"n_layers", c.n_layers},   {"n_heads", c.n_heads},
                       {"d_model", c.d_model},     {"d_head", c.d_head},
                       {"d_mlp", c.d_mlp},         {"vocab_size", c.vocab_size},
                       {"max_seq", c.max_seq},     {"norm_kind", to_string(c.norm_kind)},
                       {"pos_kind", to_string(c.pos_kind)},
                       {"activation", to_string(c.activation)},
                       {"norm_eps", c.norm_eps}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("n_layers").get_to(c.n_layers);
    j.at("n_heads").get_to(c.n_heads);
    j.at("d_model").get_to(c.d_model);
    j.at("d_head").get_to(c.d_head);
    j.at("d_mlp").get_to(c.d_mlp);
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("max_seq").get_to(c.max_seq);
    auto parse = [&](const char* key, auto& out, auto table) {
        std::string s = j.at(key).get<std::string>();
        for (const auto& [name, value] : table)
            if (s == name) {
                out = value;
                return;
            }
        throw ConfigError(std::string("unknown ") + key + ": " + s);
    };
    parse("norm_kind", c.norm_kind,
          std::vector<std::pair<std::string, NormKind>>{
              {"LayerNorm", NormKind::LayerNorm}, {"RMSNorm", NormKind::RMSNorm}});
    parse("pos_kind", c.pos_kind,
          std::vector<std::pair<std::string, PosKind>>{
              {"Learned", PosKind::Learned}, {"Rotary", PosKind::Rotary}});
    parse("activation", c.activation,
          std::vector<std::pair<std::string, Activation>>{
              {"GELU", Activation::GELU}, {"SiLU", Activation::SiLU}});
    if (j.contains("norm_eps")) j.at("norm_eps").get_to(c.norm_eps);
}

struct LayerWeights {
    Vec ln1_w, ln1_b;
    Mat w_qkv;      // d_model x 3*d_model, y = x * W + b
    Vec b_qkv;
    Mat w_attn_out; // d_model x d_model, rows sliced per head
    Vec b_attn_out;
    Vec ln2_w, ln2_b;
    Mat w_mlp_in;   // d_model x d_mlp
    Vec b_mlp_in;
    Mat w_mlp_out;  // d_mlp x d_model
    Vec b_mlp_out;
};

// Weights are immutable after construction; forward passes never mutate them.
struct Model {
    ModelConfig config;
    Mat wte; // vocab_size x d_model
    Mat wpe; // max_seq x d_model (empty when pos_kind == Rotary)
    std::vector<LayerWeights> layers;
    Vec lnf_w, lnf_b;
    std::optional<Mat> unembed; // vocab_size x d_model; wte is reused when absent

    const Mat& unembed_matrix() const { return unembed ? *unembed : wte; }
};

inline std::size_t parameter_count(const ModelConfig& c, bool tied_unembed = true) {
    const std::size_t d = static_cast<std::size_t>(c.d_model);
    const std::size_t per_layer = 2 * d               // ln1
                                  + d * 3 * d + 3 * d // qkv
                                  + d * d + d         // attn out
                                  + 2 * d             // ln2
                                  + d * static_cast<std::size_t>(c.d_mlp) +
                                  static_cast<std::size_t>(c.d_mlp) // mlp in
                                  + static_cast<std::size_t>(c.d_mlp) * d +
                                  d; // mlp out
    std::size_t total = static_cast<std::size_t>(c.vocab_size) * d; // wte
    if (c.pos_kind == PosKind::Learned)
        total += static_cast<std::size_t>(c.max_seq) * d; // wpe
    total += static_cast<std::size_t>(c.n_layers) * per_layer;
    total += 2 * d; // final norm
    if (!tied_unembed) total += static_cast<std::size_t>(c.vocab_size) * d;
    return total;
}

inline std::size_t parameter_count(const Model& m) {
    std::size_t total = static_cast<std::size_t>(m.wte.size()) +
                        static_cast<std::size_t>(m.wpe.size()) +
                        static_cast<std::size_t>(m.lnf_w.size()) +
                        static_cast<std::size_t>(m.lnf_b.size());
    for (const auto& l : m.layers)
        total += static_cast<std::size_t>(
            l.ln1_w.size() + l.ln1_b.size() + l.w_qkv.size() +
            l.b_qkv.size() + l.w_attn_out.size() + l.b_attn_out.size() +
            l.ln2_w.size() + l.ln2_b.size() + l.w_mlp_in.size() +
            l.b_mlp_in.size() + l.w_mlp_out.size() + l.b_mlp_out.size());
    if (m.unembed) total += static_cast<std::size_t>(m.unembed->size());
    return total;
}

// Deterministic toy model: same (config, seed) gives bitwise-identical
// weights. Fill order is fixed and must not change — frozen test fixtures
// depend on it.
inline Model make_toy_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    Rng rng(seed);

    auto fill_mat = [&](Mat& w, int rows, int cols, float scale) {
        w.resize(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                w(r, c) = rng.next_float_symmetric(scale);
    };
    auto fill_vec = [&](Vec& v, int n, float center, float scale) {
        v.resize(n);
        for (int i = 0; i < n; ++i)
            v(i) = center + rng.next_float_symmetric(scale);
    };

    const float w_scale =
        1.0f / std::sqrt(static_cast<float>(config.d_model));

    fill_mat(m.wte, config.vocab_size, config.d_model, 0.5f);
    if (config.pos_kind == PosKind::Learned)
        fill_mat(m.wpe, config.max_seq, config.d_model, 0.1f);

    m.layers.resize(static_cast<std::size_t>(config.n_layers));
    for (auto& layer : m.layers) {
        fill_vec(layer.ln1_w, config.d_model, 1.0f, 0.1f);
        fill_vec(layer.ln1_b, config.d_model, 0.0f, 0.02f);
        fill_mat(layer.w_qkv, config.d_model, 3 * config.d_model, w_scale);
        fill_vec(layer.b_qkv, 3 * config.d_model, 0.0f, 0.02f);
        fill_mat(layer.w_attn_out, config.d_model, config.d_model, w_scale);
        fill_vec(layer.b_attn_out, config.d_model, 0.0f, 0.02f);
        fill_vec(layer.ln2_w, config.d_model, 1.0f, 0.1f);
        fill_vec(layer.ln2_b, config.d_model, 0.0f, 0.02f);
        fill_mat(layer.w_mlp_in, config.d_model, config.d_mlp, w_scale);
        fill_vec(layer.b_mlp_in, config.d_mlp, 0.0f, 0.02f);
        fill_mat(layer.w_mlp_out, config.d_mlp, config.d_model,
                 1.0f / std::sqrt(static_cast<float>(config.d_mlp)));
        fill_vec(layer.b_mlp_out, config.d_model, 0.0f, 0.02f);
    }
    fill_vec(m.lnf_w, config.d_model, 1.0f, 0.1f);
    fill_vec(m.lnf_b, config.d_model, 0.0f, 0.02f);
    return m;
}

} // namespace rolepatch
