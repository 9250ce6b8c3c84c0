#pragma once

#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rolepatch/dataset.hpp"
#include "rolepatch/metrics.hpp"
#include "rolepatch/parallel.hpp"
#include "rolepatch/prompt.hpp"
#include "rolepatch/transformer.hpp"

namespace rolepatch {

// Everything a patched run needs besides the pair and the sample.
struct PatchContext {
    const Model* model = nullptr;
    const Tokenizer* tokenizer = nullptr;
    Mode mode = Mode::Pointwise;
    SegmentOrder order;       // empty = default order for the mode
    PromptOptions prompt_opts;
    AnswerTokens answers;
    double eps_base = 1e-6;
    int workers = 1;
};

// A site whose positions may be named by segment instead of absolute
// indices; resolved against the built prompts.
struct SiteSpec {
    SiteKey key;
    std::optional<Segment> segment;
    std::vector<int> positions; // used when segment is empty; empty = all

    static SiteSpec resid_pre(int layer, Segment seg) {
        return {{SiteKind::ResidPre, layer, -1}, seg, {}};
    }
    static SiteSpec resid_pre_all(int layer) {
        return {{SiteKind::ResidPre, layer, -1}, std::nullopt, {}};
    }
};

// Clean / corrupted / patched logit differences for one sample, oriented so
// larger is more correct. `normalized` is empty for degenerate baselines.
struct LogitDiffRecord {
    double ld_clean = 0.0;
    double ld_corrupted = 0.0;
    double ld_patched = 0.0;
    std::optional<double> normalized;
    Answer correct = Answer::Yes;
    Answer corrupted_prediction = Answer::Yes;
};

namespace detail {

struct BuiltPair {
    RankingPrompt clean;
    RankingPrompt corrupted;
};

inline BuiltPair build_prompt_pair(const PatchContext& ctx,
                                   const PromptPair& pair,
                                   const RankingSample& sample) {
    PromptContent content;
    content.query = sample.query;
    content.docs = sample.doc_texts();
    content.labels = sample.doc_labels();
    content.role = pair.clean;
    BuiltPair built;
    built.clean = build_prompt(*ctx.tokenizer, ctx.mode, content, ctx.order,
                               ctx.prompt_opts);
    content.role = pair.corrupted;
    built.corrupted = build_prompt(*ctx.tokenizer, ctx.mode, content,
                                   ctx.order, ctx.prompt_opts);
    if (built.clean.length() != built.corrupted.length())
        throw LengthMismatch(
            "clean prompt has " + std::to_string(built.clean.length()) +
            " tokens, corrupted has " +
            std::to_string(built.corrupted.length()) +
            "; run check_token_alignment on the lexicon");
    return built;
}

inline std::vector<int> resolve_positions(const SiteSpec& spec,
                                          const BuiltPair& built) {
    if (spec.segment) {
        const SegmentRange clean_span = built.clean.span(*spec.segment);
        const SegmentRange corrupted_span =
            built.corrupted.span(*spec.segment);
        if (clean_span.begin != corrupted_span.begin ||
            clean_span.end != corrupted_span.end)
            throw LengthMismatch(std::string("segment ") +
                                 to_string(*spec.segment) +
                                 " spans differ across the prompt pair");
        return built.corrupted.positions_of(*spec.segment);
    }
    if (spec.positions.empty())
        return all_positions(built.corrupted.length());
    return spec.positions;
}

inline std::vector<ActivationSite> resolve_sites(
    const std::vector<SiteSpec>& specs, const BuiltPair& built) {
    std::vector<ActivationSite> sites;
    sites.reserve(specs.size());
    for (const auto& spec : specs) {
        ActivationSite site{spec.key, resolve_positions(spec, built)};
        site.normalize();
        sites.push_back(std::move(site));
    }
    return sites;
}

// The three stages: clean run with cache, corrupted run, patched run.
inline LogitDiffRecord patched_sample_record(
    const PatchContext& ctx, const BuiltPair& built,
    const std::vector<ActivationSite>& sites) {
    const auto [clean_logits, cache] =
        run_with_cache(*ctx.model, built.clean.token_ids, sites);
    const Logits corrupted_logits =
        forward(*ctx.model, built.corrupted.token_ids);
    Logits patched_logits;
    if (sites.empty()) {
        patched_logits = corrupted_logits;
    } else {
        PatchPlan plan{sites, &cache};
        patched_logits =
            run_with_patch(*ctx.model, built.corrupted.token_ids, plan);
    }

    LogitDiffRecord rec;
    rec.correct = built.clean.expected_answer;
    rec.ld_clean = logit_diff(clean_logits, ctx.answers, rec.correct);
    rec.ld_corrupted = logit_diff(corrupted_logits, ctx.answers, rec.correct);
    rec.ld_patched = logit_diff(patched_logits, ctx.answers, rec.correct);
    rec.corrupted_prediction = predicted_answer(corrupted_logits, ctx.answers);
    try {
        rec.normalized = normalized_ld(rec.ld_patched, rec.ld_corrupted,
                                       rec.ld_clean, ctx.eps_base);
    } catch (const DegenerateBaseline&) {
        rec.normalized = std::nullopt;
    }
    return rec;
}

} // namespace detail

// Executes the patching protocol for one pair and one sample. Throws
// DegenerateBaseline when the clean and corrupted runs are too close for the
// normalized LD to be defined; sweeps use the lower-level record path and
// count such samples as exclusions instead.
inline LogitDiffRecord run_patched_sample(const PatchContext& ctx,
                                          const PromptPair& pair,
                                          const RankingSample& sample,
                                          const std::vector<SiteSpec>& sites) {
    detail::BuiltPair built = detail::build_prompt_pair(ctx, pair, sample);
    LogitDiffRecord rec = detail::patched_sample_record(
        ctx, built, detail::resolve_sites(sites, built));
    if (!rec.normalized && !sites.empty())
        throw DegenerateBaseline("sample has |LD_clean - LD_corrupted| <= " +
                                 std::to_string(ctx.eps_base));
    if (!rec.normalized && sites.empty()) rec.normalized = 0.0;
    return rec;
}

// One per-sample observation inside a sweep, keyed by grid cell.
struct PatchRecord {
    int pair_index = 0;
    int sample_index = 0;
    int row = 0;
    int col = 0;
    LogitDiffRecord result;

    nlohmann::json to_json() const {
        nlohmann::json j{{"pair", pair_index},
                         {"sample", sample_index},
                         {"row", row},
                         {"col", col},
                         {"ld_clean", result.ld_clean},
                         {"ld_corrupted", result.ld_corrupted},
                         {"ld_patched", result.ld_patched},
                         {"correct", to_string(result.correct)},
                         {"corrupted_prediction",
                          to_string(result.corrupted_prediction)}};
        if (result.normalized)
            j["normalized"] = *result.normalized;
        else
            j["excluded"] = true;
        return j;
    }
};

// Mean normalized LD per (row, column) cell with dispersion and exclusion
// bookkeeping. Values are unclamped; min/max expose any overshoot.
struct ScoreGrid {
    std::string row_axis = "layer";
    std::string col_axis;
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    std::vector<std::vector<double>> values;  // rows x cols, mean
    std::vector<std::vector<double>> stddev;  // population sd per cell
    std::vector<std::vector<int>> n_included;
    std::vector<std::vector<int>> n_excluded;
    int n_samples = 0;
    int n_pairs = 0;
    double min_value = 0.0;
    double max_value = 0.0;

    std::size_t rows() const { return row_labels.size(); }
    std::size_t cols() const { return col_labels.size(); }

    static std::string format_value(double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        return buf;
    }

    // Deterministic CSV: header comment with the config hash, first column
    // the row label, then one column per grid column.
    std::string to_csv(const std::string& config_hash = "") const {
        std::string out;
        if (!config_hash.empty())
            out += "# config_hash=" + config_hash + "\n";
        out += row_axis;
        for (const auto& c : col_labels) out += "," + c;
        out += "\n";
        for (std::size_t r = 0; r < rows(); ++r) {
            out += row_labels[r];
            for (std::size_t c = 0; c < cols(); ++c)
                out += "," + format_value(values[r][c]);
            out += "\n";
        }
        return out;
    }

    nlohmann::json sidecar(const std::string& config_hash = "") const {
        return {{"row_axis", row_axis},
                {"col_axis", col_axis},
                {"row_labels", row_labels},
                {"col_labels", col_labels},
                {"stddev", stddev},
                {"n_included", n_included},
                {"n_excluded", n_excluded},
                {"n_samples", n_samples},
                {"n_pairs", n_pairs},
                {"min_value", min_value},
                {"max_value", max_value},
                {"config_hash", config_hash}};
    }

    int total_exclusions() const {
        // Exclusions are per (pair, sample) and identical across cells of the
        // same task; report the per-cell maximum to avoid double counting.
        int total = 0;
        for (std::size_t r = 0; r < rows(); ++r)
            for (std::size_t c = 0; c < cols(); ++c)
                total = std::max(total, n_excluded[r][c]);
        return total;
    }
};

struct SweepResult {
    ScoreGrid grid;
    std::vector<PatchRecord> records; // ordered by (pair, sample, row, col)
};

namespace detail {

// Shared scheduler: tasks are (pair, sample); each task runs the clean run
// once while caching every site the grid needs, the corrupted run once, and
// one patched run per cell. Aggregation order is fixed by task index, so
// grids are byte-identical for any worker count.
struct CellPlan {
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    // cell (r, c) -> site list resolved against a built pair
    std::function<std::vector<ActivationSite>(const BuiltPair&, int, int)>
        sites_for_cell;
};

inline SweepResult run_sweep(const PatchContext& ctx,
                             const std::vector<PromptPair>& pairs,
                             const std::vector<RankingSample>& samples,
                             const CellPlan& plan, const std::string& row_axis,
                             const std::string& col_axis) {
    if (pairs.empty()) throw PromptError("sweep needs at least one pair");
    if (samples.empty()) throw DatasetError("sweep needs at least one sample");

    const std::size_t n_rows = plan.row_labels.size();
    const std::size_t n_cols = plan.col_labels.size();
    const std::size_t n_tasks = pairs.size() * samples.size();

    struct TaskOut {
        std::vector<LogitDiffRecord> cells; // row-major
    };

    std::vector<TaskOut> outs = parallel_map<TaskOut>(
        n_tasks, ctx.workers, [&](std::size_t task) {
            const std::size_t pair_idx = task / samples.size();
            const std::size_t sample_idx = task % samples.size();
            const BuiltPair built =
                build_prompt_pair(ctx, pairs[pair_idx], samples[sample_idx]);

            // Union of sites across cells, cached once from the clean run.
            std::vector<ActivationSite> all_sites;
            std::vector<std::vector<ActivationSite>> cell_sites(n_rows *
                                                                n_cols);
            for (std::size_t r = 0; r < n_rows; ++r)
                for (std::size_t c = 0; c < n_cols; ++c) {
                    auto sites = plan.sites_for_cell(built, static_cast<int>(r),
                                                     static_cast<int>(c));
                    for (const auto& s : sites) all_sites.push_back(s);
                    cell_sites[r * n_cols + c] = std::move(sites);
                }

            const auto [clean_logits, cache] =
                run_with_cache(*ctx.model, built.clean.token_ids, all_sites);
            const Logits corrupted_logits =
                forward(*ctx.model, built.corrupted.token_ids);

            const Answer correct = built.clean.expected_answer;
            const double ld_clean =
                logit_diff(clean_logits, ctx.answers, correct);
            const double ld_corrupted =
                logit_diff(corrupted_logits, ctx.answers, correct);
            const Answer corrupted_pred =
                predicted_answer(corrupted_logits, ctx.answers);
            const bool degenerate =
                std::abs(ld_clean - ld_corrupted) <= ctx.eps_base;

            TaskOut out;
            out.cells.resize(n_rows * n_cols);
            for (std::size_t cell = 0; cell < out.cells.size(); ++cell) {
                LogitDiffRecord rec;
                rec.correct = correct;
                rec.ld_clean = ld_clean;
                rec.ld_corrupted = ld_corrupted;
                rec.corrupted_prediction = corrupted_pred;
                PatchPlan patch{cell_sites[cell], &cache};
                const Logits patched = run_with_patch(
                    *ctx.model, built.corrupted.token_ids, patch);
                rec.ld_patched = logit_diff(patched, ctx.answers, correct);
                if (!degenerate)
                    rec.normalized = normalized_ld(
                        rec.ld_patched, rec.ld_corrupted, rec.ld_clean,
                        ctx.eps_base);
                out.cells[cell] = rec;
            }
            return out;
        });

    SweepResult result;
    ScoreGrid& grid = result.grid;
    grid.row_axis = row_axis;
    grid.col_axis = col_axis;
    grid.row_labels = plan.row_labels;
    grid.col_labels = plan.col_labels;
    grid.n_samples = static_cast<int>(samples.size());
    grid.n_pairs = static_cast<int>(pairs.size());
    grid.values.assign(n_rows, std::vector<double>(n_cols, 0.0));
    grid.stddev.assign(n_rows, std::vector<double>(n_cols, 0.0));
    grid.n_included.assign(n_rows, std::vector<int>(n_cols, 0));
    grid.n_excluded.assign(n_rows, std::vector<int>(n_cols, 0));

    // Records in (pair, sample, row, col) order; means in the same order.
    for (std::size_t task = 0; task < n_tasks; ++task) {
        const int pair_idx = static_cast<int>(task / samples.size());
        const int sample_idx = static_cast<int>(task % samples.size());
        for (std::size_t r = 0; r < n_rows; ++r)
            for (std::size_t c = 0; c < n_cols; ++c) {
                PatchRecord rec;
                rec.pair_index = pair_idx;
                rec.sample_index = sample_idx;
                rec.row = static_cast<int>(r);
                rec.col = static_cast<int>(c);
                rec.result = outs[task].cells[r * n_cols + c];
                if (rec.result.normalized) {
                    grid.values[r][c] += *rec.result.normalized;
                    ++grid.n_included[r][c];
                } else {
                    ++grid.n_excluded[r][c];
                }
                result.records.push_back(std::move(rec));
            }
    }
    for (std::size_t r = 0; r < n_rows; ++r)
        for (std::size_t c = 0; c < n_cols; ++c) {
            if (grid.n_included[r][c] > 0)
                grid.values[r][c] /= grid.n_included[r][c];
            else
                grid.values[r][c] = std::numeric_limits<double>::quiet_NaN();
        }
    // Second pass: standard deviation and min/max over included cells.
    grid.min_value = std::numeric_limits<double>::infinity();
    grid.max_value = -std::numeric_limits<double>::infinity();
    for (const auto& rec : result.records) {
        if (!rec.result.normalized) continue;
        const double d = *rec.result.normalized -
                         grid.values[static_cast<std::size_t>(rec.row)]
                                    [static_cast<std::size_t>(rec.col)];
        grid.stddev[static_cast<std::size_t>(rec.row)]
                   [static_cast<std::size_t>(rec.col)] += d * d;
    }
    for (std::size_t r = 0; r < n_rows; ++r)
        for (std::size_t c = 0; c < n_cols; ++c) {
            if (grid.n_included[r][c] > 0) {
                grid.stddev[r][c] =
                    std::sqrt(grid.stddev[r][c] / grid.n_included[r][c]);
                grid.min_value = std::min(grid.min_value, grid.values[r][c]);
                grid.max_value = std::max(grid.max_value, grid.values[r][c]);
            } else {
                grid.stddev[r][c] = std::numeric_limits<double>::quiet_NaN();
            }
        }
    if (!std::isfinite(grid.min_value)) {
        grid.min_value = 0.0;
        grid.max_value = 0.0;
    }
    return result;
}

inline std::vector<std::string> layer_labels(int n_layers) {
    std::vector<std::string> labels;
    labels.reserve(static_cast<std::size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l) labels.push_back(std::to_string(l));
    return labels;
}

} // namespace detail

inline std::vector<Segment> default_sweep_segments(Mode mode) {
    if (mode == Mode::Pointwise)
        return {Segment::Role, Segment::Document, Segment::Query,
                Segment::Instruction, Segment::LastToken};
    return {Segment::Role, Segment::DocumentA, Segment::DocumentB,
            Segment::Query, Segment::Instruction, Segment::LastToken};
}

// Layer x segment sweep for a residual / attention-output / MLP-output site
// kind: cell (l, s) patches the site at layer l over segment s's positions.
inline SweepResult sweep_segments(const PatchContext& ctx,
                                  const std::vector<PromptPair>& pairs,
                                  const std::vector<RankingSample>& samples,
                                  SiteKind kind,
                                  std::vector<Segment> segments = {}) {
    if (kind == SiteKind::HeadContrib)
        throw InvalidSite("use sweep_heads for per-head grids");
    if (segments.empty()) segments = default_sweep_segments(ctx.mode);
    detail::CellPlan plan;
    plan.row_labels = detail::layer_labels(ctx.model->config.n_layers);
    for (Segment s : segments) plan.col_labels.push_back(to_string(s));
    plan.sites_for_cell = [kind, segments](const detail::BuiltPair& built,
                                           int row, int col) {
        SiteSpec spec{{kind, row, -1}, segments[static_cast<std::size_t>(col)],
                      {}};
        ActivationSite site{spec.key, detail::resolve_positions(spec, built)};
        site.normalize();
        return std::vector<ActivationSite>{site};
    };
    const char* col_axis = "segment";
    return detail::run_sweep(ctx, pairs, samples, plan, "layer", col_axis);
}

inline SweepResult sweep_residual(const PatchContext& ctx,
                                  const std::vector<PromptPair>& pairs,
                                  const std::vector<RankingSample>& samples,
                                  std::vector<Segment> segments = {}) {
    return sweep_segments(ctx, pairs, samples, SiteKind::ResidPre,
                          std::move(segments));
}

// Layer x head sweep: cell (l, h) patches HeadContrib(l, h) at the named
// segment's positions.
inline SweepResult sweep_heads(const PatchContext& ctx,
                               const std::vector<PromptPair>& pairs,
                               const std::vector<RankingSample>& samples,
                               Segment segment) {
    detail::CellPlan plan;
    plan.row_labels = detail::layer_labels(ctx.model->config.n_layers);
    for (int h = 0; h < ctx.model->config.n_heads; ++h)
        plan.col_labels.push_back("H" + std::to_string(h));
    plan.sites_for_cell = [segment](const detail::BuiltPair& built, int row,
                                    int col) {
        SiteSpec spec{{SiteKind::HeadContrib, row, col}, segment, {}};
        ActivationSite site{spec.key, detail::resolve_positions(spec, built)};
        site.normalize();
        return std::vector<ActivationSite>{site};
    };
    return detail::run_sweep(ctx, pairs, samples, plan, "layer", "head");
}

// Layer x slot-token sweep over the role segment: the adjective, modal and
// adverb token spans individually, plus all role tokens together.
inline SweepResult sweep_slot_tokens(const PatchContext& ctx,
                                     const std::vector<PromptPair>& pairs,
                                     const std::vector<RankingSample>& samples) {
    detail::CellPlan plan;
    plan.row_labels = detail::layer_labels(ctx.model->config.n_layers);
    plan.col_labels = {"adjective", "modal", "adverb", "all"};
    plan.sites_for_cell = [](const detail::BuiltPair& built, int row,
                             int col) {
        static const char* slots[] = {"adjective", "modal", "adverb"};
        std::vector<int> positions;
        if (col < 3) {
            const std::string slot = slots[col];
            auto clean_it = built.clean.slot_ranges.find(slot);
            auto corr_it = built.corrupted.slot_ranges.find(slot);
            if (clean_it == built.clean.slot_ranges.end() ||
                corr_it == built.corrupted.slot_ranges.end())
                throw SlotNotAligned("prompt is missing slot span: " + slot);
            const SegmentRange a = clean_it->second;
            const SegmentRange b = corr_it->second;
            if (a.begin != b.begin || a.end != b.end)
                throw SlotNotAligned(
                    "slot " + slot +
                    " spans differ across the pair; filter the lexicon");
            for (int p = a.begin; p < a.end; ++p) positions.push_back(p);
        } else {
            SiteSpec all_role{{SiteKind::ResidPre, row, -1}, Segment::Role, {}};
            positions = detail::resolve_positions(all_role, built);
        }
        ActivationSite site{{SiteKind::ResidPre, row, -1},
                            std::move(positions)};
        site.normalize();
        return std::vector<ActivationSite>{site};
    };
    return detail::run_sweep(ctx, pairs, samples, plan, "layer", "slot");
}

inline std::string records_to_jsonl(const std::vector<PatchRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.to_json().dump();
        out += "\n";
    }
    return out;
}

} // namespace rolepatch
