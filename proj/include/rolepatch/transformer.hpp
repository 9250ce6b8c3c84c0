#pragma once

#include <cmath>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "rolepatch/hooks.hpp"
#include "rolepatch/model.hpp"

namespace rolepatch {

struct SequenceTooLong : ModelError {
    using ModelError::ModelError;
};
struct TokenOutOfRange : ModelError {
    using ModelError::ModelError;
};

// Per-head replacement vectors applied at every token position, keyed by
// (layer, head). Used for zero ablation (zero vector) and mean ablation.
struct AblationMap {
    std::map<std::pair<int, int>, Vec> replacements;

    void validate(const ModelConfig& config) const {
        for (const auto& [key, vec] : replacements) {
            if (key.first < 0 || key.first >= config.n_layers ||
                key.second < 0 || key.second >= config.n_heads)
                throw InvalidSite("ablation head (" +
                                  std::to_string(key.first) + "," +
                                  std::to_string(key.second) +
                                  ") outside model");
            if (vec.size() != config.d_model)
                throw InvalidSite("ablation vector has wrong width");
        }
    }
};

namespace detail {

inline void layer_norm_rows(const Mat& in, const Vec& w, const Vec& b,
                            float eps, Mat& out) {
    const int cols = static_cast<int>(in.cols());
    out.resize(in.rows(), cols);
    for (int r = 0; r < in.rows(); ++r) {
        const float mean = in.row(r).mean();
        const float var =
            (in.row(r).array() - mean).square().sum() / static_cast<float>(cols);
        const float inv_std = 1.0f / std::sqrt(var + eps);
        out.row(r) = (((in.row(r).array() - mean) * inv_std) *
                          w.transpose().array() +
                      b.transpose().array())
                         .matrix();
    }
}

inline void rms_norm_rows(const Mat& in, const Vec& w, float eps, Mat& out) {
    const int cols = static_cast<int>(in.cols());
    out.resize(in.rows(), cols);
    for (int r = 0; r < in.rows(); ++r) {
        const float ms = in.row(r).array().square().sum() /
                         static_cast<float>(cols);
        const float inv = 1.0f / std::sqrt(ms + eps);
        out.row(r) =
            ((in.row(r).array() * inv) * w.transpose().array()).matrix();
    }
}

inline void apply_norm(const ModelConfig& config, const Mat& in, const Vec& w,
                       const Vec& b, Mat& out) {
    if (config.norm_kind == NormKind::LayerNorm)
        layer_norm_rows(in, w, b, config.norm_eps, out);
    else
        rms_norm_rows(in, w, config.norm_eps, out);
}

inline float gelu_tanh(float x) {
    // tanh approximation, as in GPT-2.
    constexpr float k = 0.7978845608028654f; // sqrt(2/pi)
    return 0.5f * x * (1.0f + std::tanh(k * (x + 0.044715f * x * x * x)));
}

inline float silu(float x) { return x / (1.0f + std::exp(-x)); }

// Half-split rotary embedding applied in place to one head's q or k rows.
inline void apply_rotary(Mat& qk, int d_head) {
    const int half = d_head / 2;
    for (int pos = 0; pos < qk.rows(); ++pos) {
        for (int i = 0; i < half; ++i) {
            const float theta =
                static_cast<float>(pos) *
                std::pow(10000.0f, -2.0f * static_cast<float>(i) /
                                       static_cast<float>(d_head));
            const float c = std::cos(theta);
            const float s = std::sin(theta);
            const float a = qk(pos, i);
            const float b = qk(pos, i + half);
            qk(pos, i) = a * c - b * s;
            qk(pos, i + half) = b * c + a * s;
        }
    }
}

inline void softmax_rows_causal(Mat& scores) {
    const int n = static_cast<int>(scores.rows());
    for (int i = 0; i < n; ++i) {
        float max_v = scores(i, 0);
        for (int j = 1; j <= i; ++j) max_v = std::max(max_v, scores(i, j));
        float sum = 0.0f;
        for (int j = 0; j <= i; ++j) {
            const float e = std::exp(scores(i, j) - max_v);
            scores(i, j) = e;
            sum += e;
        }
        const float inv = 1.0f / sum;
        for (int j = 0; j <= i; ++j) scores(i, j) *= inv;
        for (int j = i + 1; j < n; ++j) scores(i, j) = 0.0f;
    }
}

struct HookSet {
    // Patches: per site, positions to overwrite and the source entry.
    struct Patch {
        const ActivationCache::Entry* source;
        std::vector<int> positions;
    };
    std::map<SiteKey, Patch> patches;
    std::map<SiteKey, std::vector<int>> captures;
    ActivationCache* cache_out = nullptr;
    const AblationMap* ablation = nullptr;

    void apply_patch(const SiteKey& key, Mat& activ) const {
        auto it = patches.find(key);
        if (it == patches.end()) return;
        for (int p : it->second.positions) {
            const int row = ActivationCache::row_of(*it->second.source, p);
            activ.row(p) = it->second.source->values.row(row);
        }
    }

    void capture(const SiteKey& key, const Mat& activ) const {
        if (cache_out == nullptr) return;
        auto it = captures.find(key);
        if (it == captures.end()) return;
        ActivationCache::Entry entry;
        entry.positions = it->second;
        entry.values.resize(static_cast<int>(it->second.size()), activ.cols());
        for (std::size_t i = 0; i < it->second.size(); ++i)
            entry.values.row(static_cast<int>(i)) = activ.row(it->second[i]);
        cache_out->entries[key] = std::move(entry);
    }

    void hook(const SiteKey& key, Mat& activ) const {
        apply_patch(key, activ);
        capture(key, activ);
    }
};

// The single forward path. Attention is always computed head by head with a
// fixed summation order so that hooked and unhooked runs are bitwise
// identical, patching a head is a row overwrite, and the head decomposition
// identity holds by construction.
inline Logits forward_impl(const Model& model, std::span<const int> tokens,
                           const HookSet& hooks) {
    const ModelConfig& cfg = model.config;
    const int seq = static_cast<int>(tokens.size());
    if (seq == 0) throw ModelError("empty token sequence");
    if (seq > cfg.max_seq)
        throw SequenceTooLong("sequence length " + std::to_string(seq) +
                              " exceeds max_seq " + std::to_string(cfg.max_seq));
    for (int t : tokens)
        if (t < 0 || t >= cfg.vocab_size)
            throw TokenOutOfRange("token id " + std::to_string(t) +
                                  " outside vocab of size " +
                                  std::to_string(cfg.vocab_size));

    Mat resid(seq, cfg.d_model);
    for (int i = 0; i < seq; ++i) {
        resid.row(i) = model.wte.row(tokens[static_cast<std::size_t>(i)]);
        if (cfg.pos_kind == PosKind::Learned) resid.row(i) += model.wpe.row(i);
    }

    const float inv_sqrt_dh =
        1.0f / std::sqrt(static_cast<float>(cfg.d_head));
    Mat normed, qkv, scores, z, contrib, attn_out, mlp_hidden, mlp_out;

    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        const LayerWeights& w = model.layers[static_cast<std::size_t>(layer)];
        hooks.hook({SiteKind::ResidPre, layer, -1}, resid);

        apply_norm(cfg, resid, w.ln1_w, w.ln1_b, normed);
        qkv.noalias() = normed * w.w_qkv;
        qkv.rowwise() += w.b_qkv.transpose();

        attn_out = Mat::Zero(seq, cfg.d_model);
        for (int h = 0; h < cfg.n_heads; ++h) {
            Mat q = qkv.block(0, h * cfg.d_head, seq, cfg.d_head);
            Mat k = qkv.block(0, cfg.d_model + h * cfg.d_head, seq, cfg.d_head);
            const auto v =
                qkv.block(0, 2 * cfg.d_model + h * cfg.d_head, seq, cfg.d_head);
            if (cfg.pos_kind == PosKind::Rotary) {
                apply_rotary(q, cfg.d_head);
                apply_rotary(k, cfg.d_head);
            }
            scores.noalias() = q * k.transpose();
            scores *= inv_sqrt_dh;
            softmax_rows_causal(scores);
            z.noalias() = scores * v;
            contrib.noalias() =
                z * w.w_attn_out.middleRows(h * cfg.d_head, cfg.d_head);

            if (hooks.ablation != nullptr) {
                auto it = hooks.ablation->replacements.find({layer, h});
                if (it != hooks.ablation->replacements.end())
                    contrib.rowwise() = it->second.transpose();
            }
            hooks.hook({SiteKind::HeadContrib, layer, h}, contrib);
            attn_out += contrib;
        }
        attn_out.rowwise() += w.b_attn_out.transpose();
        hooks.hook({SiteKind::AttnOut, layer, -1}, attn_out);
        resid += attn_out;

        apply_norm(cfg, resid, w.ln2_w, w.ln2_b, normed);
        mlp_hidden.noalias() = normed * w.w_mlp_in;
        mlp_hidden.rowwise() += w.b_mlp_in.transpose();
        if (cfg.activation == Activation::GELU)
            mlp_hidden = mlp_hidden.unaryExpr(&gelu_tanh);
        else
            mlp_hidden = mlp_hidden.unaryExpr(&silu);
        mlp_out.noalias() = mlp_hidden * w.w_mlp_out;
        mlp_out.rowwise() += w.b_mlp_out.transpose();
        hooks.hook({SiteKind::MlpOut, layer, -1}, mlp_out);
        resid += mlp_out;
    }

    hooks.hook({SiteKind::ResidPre, cfg.n_layers, -1}, resid);

    Mat last = resid.row(seq - 1);
    Mat final_normed;
    apply_norm(cfg, last, model.lnf_w, model.lnf_b, final_normed);
    Logits logits = model.unembed_matrix() * final_normed.row(0).transpose();
    if (hooks.cache_out != nullptr) {
        hooks.cache_out->final_logits = logits;
        hooks.cache_out->seq_len = seq;
    }
    return logits;
}

inline detail::HookSet capture_hooks(const Model& model,
                                     std::span<const int> tokens,
                                     const std::vector<ActivationSite>& sites,
                                     ActivationCache& cache) {
    detail::HookSet hooks;
    hooks.cache_out = &cache;
    for (ActivationSite site : sites) {
        site.normalize();
        site.validate(model.config, static_cast<int>(tokens.size()));
        auto& positions = hooks.captures[site.key];
        positions.insert(positions.end(), site.positions.begin(),
                         site.positions.end());
        std::sort(positions.begin(), positions.end());
        positions.erase(std::unique(positions.begin(), positions.end()),
                        positions.end());
    }
    return hooks;
}

} // namespace detail

// Deterministic forward pass; identical inputs give bitwise-identical logits
// on the same build.
inline Logits forward(const Model& model, std::span<const int> tokens) {
    return detail::forward_impl(model, tokens, detail::HookSet{});
}

// forward() plus capture of the requested sites. Logits are bitwise
// identical to forward(model, tokens).
inline std::pair<Logits, ActivationCache> run_with_cache(
    const Model& model, std::span<const int> tokens,
    const std::vector<ActivationSite>& sites) {
    ActivationCache cache;
    cache.seq_len = static_cast<int>(tokens.size());
    detail::HookSet hooks = detail::capture_hooks(model, tokens, sites, cache);
    Logits logits = detail::forward_impl(model, tokens, hooks);
    return {std::move(logits), std::move(cache)};
}

// Re-runs `tokens` with activations at the plan's sites replaced by values
// from the plan's source cache.
inline Logits run_with_patch(const Model& model, std::span<const int> tokens,
                             const PatchPlan& plan) {
    plan.validate(model.config, static_cast<int>(tokens.size()));
    detail::HookSet hooks;
    for (ActivationSite site : plan.sites) {
        site.normalize();
        auto& patch = hooks.patches[site.key];
        patch.source = &plan.source->entries.at(site.key);
        patch.positions.insert(patch.positions.end(), site.positions.begin(),
                               site.positions.end());
        std::sort(patch.positions.begin(), patch.positions.end());
        patch.positions.erase(
            std::unique(patch.positions.begin(), patch.positions.end()),
            patch.positions.end());
    }
    return detail::forward_impl(model, tokens, hooks);
}

// Forward with selected heads' contributions replaced at every position.
inline Logits ablated_forward(const Model& model, std::span<const int> tokens,
                              const AblationMap& ablation) {
    ablation.validate(model.config);
    detail::HookSet hooks;
    hooks.ablation = &ablation;
    return detail::forward_impl(model, tokens, hooks);
}

} // namespace rolepatch
