#pragma once

#include <algorithm>
#include <compare>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rolepatch/model.hpp"

namespace rolepatch {

struct HookError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InvalidSite : HookError {
    using HookError::HookError;
};
struct MissingCacheEntry : HookError {
    using HookError::HookError;
};
struct LengthMismatch : HookError {
    using HookError::HookError;
};

// Interceptable activations. ResidPre(layer) is the residual stream entering
// layer `layer` before its first normalization; layer == n_layers addresses
// the final residual read by the unembedding. HeadContrib is a head's
// post-output-projection write into the residual stream, excluding the
// attention output bias, so contributions over heads sum to AttnOut - bias.
enum class SiteKind { ResidPre, AttnOut, MlpOut, HeadContrib };

inline const char* to_string(SiteKind k) {
    switch (k) {
        case SiteKind::ResidPre: return "ResidPre";
        case SiteKind::AttnOut: return "AttnOut";
        case SiteKind::MlpOut: return "MlpOut";
        case SiteKind::HeadContrib: return "HeadContrib";
    }
    return "?";
}

struct SiteKey {
    SiteKind kind = SiteKind::ResidPre;
    int layer = 0;
    int head = -1; // >= 0 iff kind == HeadContrib

    auto operator<=>(const SiteKey&) const = default;

    std::string str() const {
        std::string s = std::string(to_string(kind)) + "(layer=" +
                        std::to_string(layer);
        if (head >= 0) s += ", head=" + std::to_string(head);
        return s + ")";
    }
};

struct ActivationSite {
    SiteKey key;
    std::vector<int> positions; // token indices, normalized to sorted unique

    static ActivationSite resid_pre(int layer, std::vector<int> positions) {
        return {{SiteKind::ResidPre, layer, -1}, std::move(positions)};
    }
    static ActivationSite attn_out(int layer, std::vector<int> positions) {
        return {{SiteKind::AttnOut, layer, -1}, std::move(positions)};
    }
    static ActivationSite mlp_out(int layer, std::vector<int> positions) {
        return {{SiteKind::MlpOut, layer, -1}, std::move(positions)};
    }
    static ActivationSite head_contrib(int layer, int head,
                                       std::vector<int> positions) {
        return {{SiteKind::HeadContrib, layer, head}, std::move(positions)};
    }

    void normalize() {
        std::sort(positions.begin(), positions.end());
        positions.erase(std::unique(positions.begin(), positions.end()),
                        positions.end());
    }

    void validate(const ModelConfig& config, int seq_len) const {
        const bool is_resid = key.kind == SiteKind::ResidPre;
        const int max_layer = config.n_layers - (is_resid ? 0 : 1);
        if (key.layer < 0 || key.layer > max_layer)
            throw InvalidSite("layer out of range for " + key.str());
        if (key.kind == SiteKind::HeadContrib) {
            if (key.head < 0 || key.head >= config.n_heads)
                throw InvalidSite("head out of range for " + key.str());
        } else if (key.head != -1) {
            throw InvalidSite("head given for non-head site " + key.str());
        }
        if (positions.empty())
            throw InvalidSite("empty position set for " + key.str());
        for (int p : positions)
            if (p < 0 || p >= seq_len)
                throw InvalidSite("position " + std::to_string(p) +
                                  " outside sequence of length " +
                                  std::to_string(seq_len));
    }
};

inline std::vector<int> all_positions(int seq_len) {
    std::vector<int> p(static_cast<std::size_t>(seq_len));
    for (int i = 0; i < seq_len; ++i) p[static_cast<std::size_t>(i)] = i;
    return p;
}

// Captured activations for one (model, token-sequence) run.
struct ActivationCache {
    struct Entry {
        std::vector<int> positions; // sorted
        Mat values;                 // positions.size() x d_model
    };
    std::map<SiteKey, Entry> entries;
    Logits final_logits;
    int seq_len = 0;

    bool contains(const SiteKey& key) const { return entries.count(key) > 0; }

    // Row of `values` holding position `pos`, or -1.
    static int row_of(const Entry& e, int pos) {
        auto it = std::lower_bound(e.positions.begin(), e.positions.end(), pos);
        if (it == e.positions.end() || *it != pos) return -1;
        return static_cast<int>(it - e.positions.begin());
    }
};

// Sites to overwrite from a previously captured cache.
struct PatchPlan {
    std::vector<ActivationSite> sites;
    const ActivationCache* source = nullptr;

    void validate(const ModelConfig& config, int seq_len) const {
        if (!sites.empty() && source == nullptr)
            throw MissingCacheEntry("patch plan has sites but no source cache");
        if (source != nullptr && source->seq_len != seq_len)
            throw LengthMismatch(
                "source cache sequence length " +
                std::to_string(source->seq_len) + " != target length " +
                std::to_string(seq_len));
        for (const auto& site : sites) {
            site.validate(config, seq_len);
            auto it = source->entries.find(site.key);
            if (it == source->entries.end())
                throw MissingCacheEntry("cache has no entry for " +
                                        site.key.str());
            for (int p : site.positions)
                if (ActivationCache::row_of(it->second, p) < 0)
                    throw MissingCacheEntry("cache entry for " +
                                            site.key.str() +
                                            " lacks position " +
                                            std::to_string(p));
        }
    }
};

} // namespace rolepatch
