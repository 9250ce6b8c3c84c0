// Straight-line reference forward pass used as the independent oracle for
// the hooked transformer. Plain nested loops over std::vector<double>, no
// Eigen, no hooks; supports ResidPre capture and overwrite so reference
// patching runs can be cross-checked. Keep this file free of any include
// from rolepatch/transformer.hpp internals beyond the weight structs.
#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "rolepatch/model.hpp"

namespace refimpl {

using rolepatch::Activation;
using rolepatch::Model;
using rolepatch::NormKind;
using rolepatch::PosKind;

using DVec = std::vector<double>;
using DMat = std::vector<DVec>; // seq x dim

inline DMat matmul(const DMat& x, const rolepatch::Mat& w) {
    const std::size_t rows = x.size();
    const std::size_t inner = x.empty() ? 0 : x[0].size();
    const std::size_t cols = static_cast<std::size_t>(w.cols());
    DMat y(rows, DVec(cols, 0.0));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (std::size_t k = 0; k < inner; ++k)
                acc += x[r][k] * static_cast<double>(
                                     w(static_cast<int>(k),
                                       static_cast<int>(c)));
            y[r][c] = acc;
        }
    return y;
}

inline void add_bias(DMat& x, const rolepatch::Vec& b) {
    for (auto& row : x)
        for (std::size_t c = 0; c < row.size(); ++c)
            row[c] += static_cast<double>(b(static_cast<int>(c)));
}

inline DVec norm_row(const DVec& x, const rolepatch::Vec& w,
                     const rolepatch::Vec& b, NormKind kind, double eps) {
    const std::size_t n = x.size();
    DVec out(n);
    if (kind == NormKind::LayerNorm) {
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < n; ++i)
            out[i] = (x[i] - mean) * inv * w(static_cast<int>(i)) +
                     b(static_cast<int>(i));
    } else {
        double ms = 0.0;
        for (double v : x) ms += v * v;
        ms /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(ms + eps);
        for (std::size_t i = 0; i < n; ++i)
            out[i] = x[i] * inv * w(static_cast<int>(i));
    }
    return out;
}

inline double gelu(double x) {
    return 0.5 * x *
           (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline void rotary(DVec& v, int pos, int d_head) {
    const int half = d_head / 2;
    for (int i = 0; i < half; ++i) {
        const double theta =
            pos * std::pow(10000.0, -2.0 * i / static_cast<double>(d_head));
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        const double a = v[static_cast<std::size_t>(i)];
        const double b = v[static_cast<std::size_t>(i + half)];
        v[static_cast<std::size_t>(i)] = a * c - b * s;
        v[static_cast<std::size_t>(i + half)] = b * c + a * s;
    }
}

struct ReferenceRun {
    std::vector<DMat> resid_pre; // n_layers + 1 entries (last = pre-lnf)
    DVec final_logits;
};

// Patches: (layer, position) -> replacement residual row, applied to the
// residual entering that layer (layer == n_layers patches the read-out).
using ResidPatches = std::map<std::pair<int, int>, DVec>;

inline ReferenceRun reference_forward(const Model& model,
                                      const std::vector<int>& tokens,
                                      const ResidPatches& patches = {}) {
    const auto& cfg = model.config;
    const int seq = static_cast<int>(tokens.size());
    DMat resid(static_cast<std::size_t>(seq), DVec(cfg.d_model, 0.0));
    for (int p = 0; p < seq; ++p)
        for (int d = 0; d < cfg.d_model; ++d) {
            double v = model.wte(tokens[static_cast<std::size_t>(p)], d);
            if (cfg.pos_kind == PosKind::Learned) v += model.wpe(p, d);
            resid[static_cast<std::size_t>(p)][static_cast<std::size_t>(d)] =
                v;
        }

    ReferenceRun run;
    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        for (int p = 0; p < seq; ++p) {
            auto it = patches.find({layer, p});
            if (it != patches.end())
                resid[static_cast<std::size_t>(p)] = it->second;
        }
        run.resid_pre.push_back(resid);
        const auto& w = model.layers[static_cast<std::size_t>(layer)];

        DMat normed(static_cast<std::size_t>(seq));
        for (int p = 0; p < seq; ++p)
            normed[static_cast<std::size_t>(p)] =
                norm_row(resid[static_cast<std::size_t>(p)], w.ln1_w, w.ln1_b,
                         cfg.norm_kind, cfg.norm_eps);
        DMat qkv = matmul(normed, w.w_qkv);
        add_bias(qkv, w.b_qkv);

        // Attention, one head at a time.
        DMat attn_out(static_cast<std::size_t>(seq), DVec(cfg.d_model, 0.0));
        for (int h = 0; h < cfg.n_heads; ++h) {
            DMat q(static_cast<std::size_t>(seq), DVec(cfg.d_head));
            DMat k(static_cast<std::size_t>(seq), DVec(cfg.d_head));
            DMat v(static_cast<std::size_t>(seq), DVec(cfg.d_head));
            for (int p = 0; p < seq; ++p)
                for (int d = 0; d < cfg.d_head; ++d) {
                    q[p][d] = qkv[p][h * cfg.d_head + d];
                    k[p][d] = qkv[p][cfg.d_model + h * cfg.d_head + d];
                    v[p][d] = qkv[p][2 * cfg.d_model + h * cfg.d_head + d];
                }
            if (cfg.pos_kind == PosKind::Rotary)
                for (int p = 0; p < seq; ++p) {
                    rotary(q[static_cast<std::size_t>(p)], p, cfg.d_head);
                    rotary(k[static_cast<std::size_t>(p)], p, cfg.d_head);
                }
            const double scale = 1.0 / std::sqrt(cfg.d_head);
            for (int p = 0; p < seq; ++p) {
                DVec scores(static_cast<std::size_t>(p) + 1);
                double max_v = -1e300;
                for (int j = 0; j <= p; ++j) {
                    double dot = 0.0;
                    for (int d = 0; d < cfg.d_head; ++d)
                        dot += q[p][d] * k[j][d];
                    scores[static_cast<std::size_t>(j)] = dot * scale;
                    max_v = std::max(max_v,
                                     scores[static_cast<std::size_t>(j)]);
                }
                double denom = 0.0;
                for (int j = 0; j <= p; ++j) {
                    scores[static_cast<std::size_t>(j)] =
                        std::exp(scores[static_cast<std::size_t>(j)] - max_v);
                    denom += scores[static_cast<std::size_t>(j)];
                }
                DVec z(static_cast<std::size_t>(cfg.d_head), 0.0);
                for (int j = 0; j <= p; ++j)
                    for (int d = 0; d < cfg.d_head; ++d)
                        z[static_cast<std::size_t>(d)] +=
                            scores[static_cast<std::size_t>(j)] / denom *
                            v[j][d];
                for (int dm = 0; dm < cfg.d_model; ++dm) {
                    double acc = 0.0;
                    for (int d = 0; d < cfg.d_head; ++d)
                        acc += z[static_cast<std::size_t>(d)] *
                               w.w_attn_out(h * cfg.d_head + d, dm);
                    attn_out[p][dm] += acc;
                }
            }
        }
        add_bias(attn_out, w.b_attn_out);
        for (int p = 0; p < seq; ++p)
            for (int d = 0; d < cfg.d_model; ++d) resid[p][d] += attn_out[p][d];

        DMat normed2(static_cast<std::size_t>(seq));
        for (int p = 0; p < seq; ++p)
            normed2[static_cast<std::size_t>(p)] =
                norm_row(resid[static_cast<std::size_t>(p)], w.ln2_w, w.ln2_b,
                         cfg.norm_kind, cfg.norm_eps);
        DMat hidden = matmul(normed2, w.w_mlp_in);
        add_bias(hidden, w.b_mlp_in);
        for (auto& row : hidden)
            for (auto& v : row)
                v = cfg.activation == Activation::GELU ? gelu(v) : silu(v);
        DMat mlp_out = matmul(hidden, w.w_mlp_out);
        add_bias(mlp_out, w.b_mlp_out);
        for (int p = 0; p < seq; ++p)
            for (int d = 0; d < cfg.d_model; ++d) resid[p][d] += mlp_out[p][d];
    }

    for (int p = 0; p < seq; ++p) {
        auto it = patches.find({cfg.n_layers, p});
        if (it != patches.end())
            resid[static_cast<std::size_t>(p)] = it->second;
    }
    run.resid_pre.push_back(resid);

    const DVec last = norm_row(resid[static_cast<std::size_t>(seq - 1)],
                               model.lnf_w, model.lnf_b, cfg.norm_kind,
                               cfg.norm_eps);
    const rolepatch::Mat& unembed = model.unembed_matrix();
    run.final_logits.assign(static_cast<std::size_t>(cfg.vocab_size), 0.0);
    for (int t = 0; t < cfg.vocab_size; ++t) {
        double acc = 0.0;
        for (int d = 0; d < cfg.d_model; ++d)
            acc += static_cast<double>(unembed(t, d)) *
                   last[static_cast<std::size_t>(d)];
        run.final_logits[static_cast<std::size_t>(t)] = acc;
    }
    return run;
}

} // namespace refimpl
