#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rolepatch/dataset.hpp"
#include "rolepatch/metrics.hpp"
#include "rolepatch/parallel.hpp"
#include "rolepatch/patching.hpp"
#include "rolepatch/transformer.hpp"

namespace rolepatch {

struct AblationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct KTooLarge : AblationError {
    using AblationError::AblationError;
};
struct EmptyReference : AblationError {
    using AblationError::AblationError;
};
struct MissingMeans : AblationError {
    using AblationError::AblationError;
};

struct ScoredHead {
    int layer = 0;
    int head = 0;
    double score = 0.0;
};

// Top-k heads for one prompt segment, ranked by patching score.
struct HeadSelection {
    std::string segment;
    std::vector<ScoredHead> heads; // descending score
    int k = 0;

    nlohmann::json to_json() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& h : heads)
            arr.push_back({{"segment", segment},
                           {"layer", h.layer},
                           {"head", h.head},
                           {"score", h.score}});
        return arr;
    }
};

// Top-k cells of a layer x head grid, ties broken by lower layer then lower
// head index.
inline HeadSelection select_top_heads(const ScoreGrid& grid, int k,
                                      const std::string& segment = "") {
    if (grid.col_axis != "head")
        throw AblationError("select_top_heads needs a layer x head grid, got "
                            "column axis: " +
                            grid.col_axis);
    std::vector<ScoredHead> pool;
    for (std::size_t r = 0; r < grid.rows(); ++r)
        for (std::size_t c = 0; c < grid.cols(); ++c)
            if (grid.n_included[r][c] > 0)
                pool.push_back({static_cast<int>(r), static_cast<int>(c),
                                grid.values[r][c]});
    if (k < 0 || static_cast<std::size_t>(k) > pool.size())
        throw KTooLarge("k=" + std::to_string(k) + " but grid has " +
                        std::to_string(pool.size()) + " scored heads");
    std::sort(pool.begin(), pool.end(),
              [](const ScoredHead& a, const ScoredHead& b) {
                  if (a.score != b.score) return a.score > b.score;
                  if (a.layer != b.layer) return a.layer < b.layer;
                  return a.head < b.head;
              });
    HeadSelection sel;
    sel.segment = segment;
    sel.k = k;
    sel.heads.assign(pool.begin(), pool.begin() + k);
    return sel;
}

// Pools heads across per-segment selections into one "mix" selection:
// highest scores win, duplicates keep their best score.
inline HeadSelection pool_selections(const std::vector<HeadSelection>& parts,
                                     int k) {
    std::map<std::pair<int, int>, double> best;
    for (const auto& sel : parts)
        for (const auto& h : sel.heads) {
            auto key = std::make_pair(h.layer, h.head);
            auto it = best.find(key);
            if (it == best.end() || h.score > it->second) best[key] = h.score;
        }
    std::vector<ScoredHead> pool;
    for (const auto& [key, score] : best)
        pool.push_back({key.first, key.second, score});
    if (static_cast<std::size_t>(k) > pool.size())
        throw KTooLarge("k=" + std::to_string(k) + " but pooled set has " +
                        std::to_string(pool.size()) + " heads");
    std::sort(pool.begin(), pool.end(),
              [](const ScoredHead& a, const ScoredHead& b) {
                  if (a.score != b.score) return a.score > b.score;
                  if (a.layer != b.layer) return a.layer < b.layer;
                  return a.head < b.head;
              });
    HeadSelection sel;
    sel.segment = "mix";
    sel.k = k;
    sel.heads.assign(pool.begin(), pool.begin() + k);
    return sel;
}

// Per-head mean contribution vectors, pooled over every token position of
// every reference prompt.
struct HeadMeans {
    std::map<std::pair<int, int>, Vec> means;
};

inline HeadMeans compute_head_means(
    const Model& model, const std::vector<std::vector<int>>& reference_prompts,
    int workers = 1) {
    if (reference_prompts.empty())
        throw EmptyReference("mean ablation needs at least one reference "
                             "prompt");
    const ModelConfig& cfg = model.config;

    struct PromptSums {
        std::vector<Eigen::VectorXd> sums; // per (layer*heads + head)
        long positions = 0;
    };
    std::vector<PromptSums> partials = parallel_map<PromptSums>(
        reference_prompts.size(), workers, [&](std::size_t i) {
            const std::vector<int>& tokens = reference_prompts[i];
            std::vector<ActivationSite> sites;
            for (int l = 0; l < cfg.n_layers; ++l)
                for (int h = 0; h < cfg.n_heads; ++h)
                    sites.push_back(ActivationSite::head_contrib(
                        l, h, all_positions(static_cast<int>(tokens.size()))));
            auto [logits, cache] = run_with_cache(model, tokens, sites);
            PromptSums out;
            out.positions = static_cast<long>(tokens.size());
            out.sums.assign(
                static_cast<std::size_t>(cfg.n_layers * cfg.n_heads),
                Eigen::VectorXd::Zero(cfg.d_model));
            for (int l = 0; l < cfg.n_layers; ++l)
                for (int h = 0; h < cfg.n_heads; ++h) {
                    const auto& entry =
                        cache.entries.at({SiteKind::HeadContrib, l, h});
                    Eigen::VectorXd sum = Eigen::VectorXd::Zero(cfg.d_model);
                    for (int r = 0; r < entry.values.rows(); ++r)
                        sum += entry.values.row(r).cast<double>();
                    out.sums[static_cast<std::size_t>(l * cfg.n_heads + h)] =
                        sum;
                }
            return out;
        });

    // Ordered reduction keeps the result independent of worker count.
    long total_positions = 0;
    std::vector<Eigen::VectorXd> totals(
        static_cast<std::size_t>(cfg.n_layers * cfg.n_heads),
        Eigen::VectorXd::Zero(cfg.d_model));
    for (const auto& p : partials) {
        total_positions += p.positions;
        for (std::size_t i = 0; i < totals.size(); ++i) totals[i] += p.sums[i];
    }
    HeadMeans result;
    for (int l = 0; l < cfg.n_layers; ++l)
        for (int h = 0; h < cfg.n_heads; ++h)
            result.means[{l, h}] =
                (totals[static_cast<std::size_t>(l * cfg.n_heads + h)] /
                 static_cast<double>(total_positions))
                    .cast<float>();
    return result;
}

enum class AblationKind { Zero, Mean };

inline const char* to_string(AblationKind k) {
    return k == AblationKind::Zero ? "zero" : "mean";
}

struct AblationMode {
    AblationKind kind = AblationKind::Zero;
    const HeadMeans* reference = nullptr; // required for Mean
};

inline AblationMap build_ablation_map(const Model& model,
                                      const HeadSelection& selection,
                                      const AblationMode& mode) {
    AblationMap map;
    for (const auto& h : selection.heads) {
        if (mode.kind == AblationKind::Zero) {
            map.replacements[{h.layer, h.head}] =
                Vec::Zero(model.config.d_model);
        } else {
            if (mode.reference == nullptr)
                throw MissingMeans("mean ablation without computed means");
            auto it = mode.reference->means.find({h.layer, h.head});
            if (it == mode.reference->means.end())
                throw MissingMeans("no mean for head (" +
                                   std::to_string(h.layer) + "," +
                                   std::to_string(h.head) + ")");
            map.replacements[{h.layer, h.head}] = it->second;
        }
    }
    return map;
}

// Forward pass with every selected head's contribution replaced (zeros or
// reference mean) at all token positions.
inline Logits ablated_run(const Model& model, const RankingPrompt& prompt,
                          const HeadSelection& selection,
                          const AblationMode& mode) {
    AblationMap map = build_ablation_map(model, selection, mode);
    if (map.replacements.empty()) return forward(model, prompt.token_ids);
    return ablated_forward(model, prompt.token_ids, map);
}

// One evaluated (role, sample, selection, mode) combination.
struct AblationSampleRecord {
    int role_index = 0;
    Polarity polarity = Polarity::Positive;
    int sample_index = 0;
    bool relevant_doc = false;
    std::string segment;
    int k = 0;
    AblationKind kind = AblationKind::Zero;
    double baseline = 0.0; // unablated correct score
    double ablated = 0.0;
    double delta = 0.0;

    nlohmann::json to_json() const {
        return {{"role", role_index},
                {"polarity", to_string(polarity)},
                {"sample", sample_index},
                {"doc_type", relevant_doc ? "relevant" : "irrelevant"},
                {"segment", segment},
                {"k", k},
                {"mode", to_string(kind)},
                {"baseline", baseline},
                {"ablated", ablated},
                {"delta", delta}};
    }
};

// Mean correct-score delta per facet, recomputable from the sample records.
struct AblationCell {
    std::string segment;
    int k = 0;
    AblationKind kind = AblationKind::Zero;
    Polarity polarity = Polarity::Positive;
    bool relevant_doc = false;
    double mean_baseline = 0.0;
    double mean_ablated = 0.0;
    double mean_delta = 0.0;
    int n = 0;
};

struct AblationReport {
    std::vector<AblationCell> cells;
    std::vector<AblationSampleRecord> records;

    std::string to_csv(const std::string& config_hash = "") const {
        std::string out;
        if (!config_hash.empty())
            out += "# config_hash=" + config_hash + "\n";
        out += "segment,k,mode,polarity,doc_type,metric,baseline,ablated,"
               "delta,n\n";
        for (const auto& c : cells) {
            out += c.segment + "," + std::to_string(c.k) + "," +
                   to_string(c.kind) + "," + to_string(c.polarity) + "," +
                   (c.relevant_doc ? "relevant" : "irrelevant") +
                   ",correct_score," + ScoreGrid::format_value(c.mean_baseline) +
                   "," + ScoreGrid::format_value(c.mean_ablated) + "," +
                   ScoreGrid::format_value(c.mean_delta) + "," +
                   std::to_string(c.n) + "\n";
        }
        return out;
    }
};

// Evaluates correct-score impact of head ablation over pointwise samples,
// faceted by segment selection, k, ablation mode, role polarity and document
// type.
inline AblationReport ablation_report(
    const PatchContext& ctx, const std::vector<RankingSample>& samples,
    const std::vector<HeadSelection>& selections,
    const std::vector<AblationMode>& modes,
    const std::vector<RolePrompt>& roles) {
    if (ctx.mode != Mode::Pairwise && ctx.mode != Mode::Pointwise)
        throw AblationError("unknown mode");
    if (samples.empty()) throw DatasetError("no samples");
    if (roles.empty()) throw AblationError("no roles given");

    struct TaskOut {
        double baseline = 0.0;
        std::vector<double> ablated; // per (selection x mode)
    };
    const std::size_t n_tasks = roles.size() * samples.size();
    std::vector<TaskOut> outs = parallel_map<TaskOut>(
        n_tasks, ctx.workers, [&](std::size_t task) {
            const std::size_t role_idx = task / samples.size();
            const std::size_t sample_idx = task % samples.size();
            const RankingSample& sample = samples[sample_idx];
            PromptContent content{roles[role_idx], sample.query,
                                  sample.doc_texts(), sample.doc_labels()};
            RankingPrompt prompt = build_prompt(
                *ctx.tokenizer, ctx.mode, content, ctx.order, ctx.prompt_opts);
            TaskOut out;
            const Logits base = forward(*ctx.model, prompt.token_ids);
            out.baseline =
                correct_score(base, ctx.answers, prompt.expected_answer).value;
            for (const auto& sel : selections)
                for (const auto& mode : modes) {
                    const Logits abl =
                        ablated_run(*ctx.model, prompt, sel, mode);
                    out.ablated.push_back(
                        correct_score(abl, ctx.answers, prompt.expected_answer)
                            .value);
                }
            return out;
        });

    AblationReport report;
    std::map<std::tuple<std::string, int, int, int, bool>, AblationCell> cells;
    for (std::size_t task = 0; task < n_tasks; ++task) {
        const std::size_t role_idx = task / samples.size();
        const std::size_t sample_idx = task % samples.size();
        const RankingSample& sample = samples[sample_idx];
        const bool relevant = sample.docs[0].label > 0;
        std::size_t flat = 0;
        for (const auto& sel : selections)
            for (const auto& mode : modes) {
                AblationSampleRecord rec;
                rec.role_index = static_cast<int>(role_idx);
                rec.polarity = roles[role_idx].polarity;
                rec.sample_index = static_cast<int>(sample_idx);
                rec.relevant_doc = relevant;
                rec.segment = sel.segment;
                rec.k = sel.k;
                rec.kind = mode.kind;
                rec.baseline = outs[task].baseline;
                rec.ablated = outs[task].ablated[flat++];
                rec.delta = rec.ablated - rec.baseline;
                auto key = std::make_tuple(
                    sel.segment, sel.k, static_cast<int>(mode.kind),
                    static_cast<int>(rec.polarity), relevant);
                AblationCell& cell = cells[key];
                cell.segment = sel.segment;
                cell.k = sel.k;
                cell.kind = mode.kind;
                cell.polarity = rec.polarity;
                cell.relevant_doc = relevant;
                cell.mean_baseline += rec.baseline;
                cell.mean_ablated += rec.ablated;
                cell.mean_delta += rec.delta;
                ++cell.n;
                report.records.push_back(std::move(rec));
            }
    }
    for (auto& [key, cell] : cells) {
        cell.mean_baseline /= cell.n;
        cell.mean_ablated /= cell.n;
        cell.mean_delta /= cell.n;
        report.cells.push_back(cell);
    }
    return report;
}

} // namespace rolepatch
