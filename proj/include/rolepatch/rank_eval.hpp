#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rolepatch/ablation.hpp"
#include "rolepatch/dataset.hpp"
#include "rolepatch/metrics.hpp"
#include "rolepatch/parallel.hpp"

namespace rolepatch {

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnknownQuery : EvalError {
    using EvalError::EvalError;
};

struct RunEntry {
    std::string doc_id;
    double score = 0.0;
};

// One query's ranked documents, descending score with a stable tie order.
struct RunList {
    std::string query_id;
    std::vector<RunEntry> entries;
};

// qid -> doc_id -> graded relevance.
struct Qrels {
    std::map<std::string, std::map<std::string, int>> rels;

    static Qrels load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw EvalError("qrels file missing: " + path);
        Qrels q;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream ss(line);
            std::string qid, iter, docid;
            int rel;
            if (!(ss >> qid >> iter >> docid >> rel))
                throw EvalError("bad qrels line: " + line);
            q.rels[qid][docid] = rel;
        }
        return q;
    }

    static Qrels from_dataset(const std::vector<DatasetQuery>& queries) {
        Qrels q;
        for (const auto& query : queries)
            for (const auto& d : query.docs)
                q.rels[query.query_id][d.doc_id] = d.label;
        return q;
    }

    int relevance(const std::string& qid, const std::string& doc_id) const {
        auto it = rels.find(qid);
        if (it == rels.end())
            throw UnknownQuery("qrels have no query: " + qid);
        auto dit = it->second.find(doc_id);
        return dit == it->second.end() ? 0 : dit->second;
    }
};

// TREC run format: "qid Q0 docid rank score tag".
inline std::string run_to_trec(const std::vector<RunList>& runs,
                               const std::string& tag) {
    std::string out;
    for (const auto& run : runs) {
        int rank = 1;
        for (const auto& e : run.entries) {
            out += run.query_id + " Q0 " + e.doc_id + " " +
                   std::to_string(rank++) + " " +
                   ScoreGrid::format_value(e.score) + " " + tag + "\n";
        }
    }
    return out;
}

// nDCG@k with gain 2^rel - 1 and log2(rank + 1) discount, normalized by the
// ideal DCG over the query's qrels; 0 when the ideal DCG is 0.
inline double ndcg_at_k(const RunList& run, const Qrels& qrels, int k = 10) {
    auto it = qrels.rels.find(run.query_id);
    if (it == qrels.rels.end())
        throw UnknownQuery("qrels have no query: " + run.query_id);
    const auto& rels = it->second;

    double dcg = 0.0;
    const int depth = std::min<int>(k, static_cast<int>(run.entries.size()));
    for (int i = 0; i < depth; ++i) {
        auto rit = rels.find(run.entries[static_cast<std::size_t>(i)].doc_id);
        const int rel = rit == rels.end() ? 0 : rit->second;
        dcg += (std::pow(2.0, rel) - 1.0) / std::log2(i + 2.0);
    }

    std::vector<int> ideal;
    ideal.reserve(rels.size());
    for (const auto& [doc, rel] : rels) ideal.push_back(rel);
    std::sort(ideal.begin(), ideal.end(), std::greater<int>());
    double idcg = 0.0;
    for (int i = 0; i < std::min<int>(k, static_cast<int>(ideal.size())); ++i)
        idcg += (std::pow(2.0, ideal[static_cast<std::size_t>(i)]) - 1.0) /
                std::log2(i + 2.0);
    return idcg > 0.0 ? dcg / idcg : 0.0;
}

// Scores one candidate with a pointwise prompt's two-way Yes probability.
inline double pointwise_yes_probability(const PatchContext& ctx,
                                        const std::optional<RolePrompt>& role,
                                        const std::string& query,
                                        const std::string& doc,
                                        const AblationMap* ablation = nullptr) {
    RankingPrompt prompt = build_pointwise_prompt(
        *ctx.tokenizer, role, query, doc, /*label=*/1, ctx.order,
        ctx.prompt_opts);
    const Logits logits =
        ablation != nullptr && !ablation->replacements.empty()
            ? ablated_forward(*ctx.model, prompt.token_ids, *ablation)
            : forward(*ctx.model, prompt.token_ids);
    return correct_score(logits, ctx.answers, Answer::Yes).value;
}

// Reranks candidates by pointwise Yes probability, descending; ties keep the
// original candidate order. k = 0 keeps every candidate.
inline RunList rerank_pointwise(const PatchContext& ctx,
                                const std::optional<RolePrompt>& role,
                                const std::string& query_id,
                                const std::string& query,
                                const std::vector<CandidateDoc>& candidates,
                                int k = 10,
                                const AblationMap* ablation = nullptr) {
    RunList run;
    run.query_id = query_id;
    run.entries.reserve(candidates.size());
    for (const auto& c : candidates)
        run.entries.push_back(
            {c.doc_id,
             pointwise_yes_probability(ctx, role, query, c.text, ablation)});
    std::stable_sort(run.entries.begin(), run.entries.end(),
                     [](const RunEntry& a, const RunEntry& b) {
                         return a.score > b.score;
                     });
    if (k > 0 && static_cast<int>(run.entries.size()) > k)
        run.entries.resize(static_cast<std::size_t>(k));
    return run;
}

enum class Preference { A, B };

struct PairwisePreference {
    Preference winner = Preference::A;
    bool tie = false;
    double p_yes = 0.5;
};

// Prefers Document A when the two-way P(Yes) of the pairwise prompt exceeds
// one half; exact ties go to A and are flagged.
inline PairwisePreference pairwise_prefer(const PatchContext& ctx,
                                          const std::optional<RolePrompt>& role,
                                          const std::string& query,
                                          const std::string& doc_a,
                                          const std::string& doc_b,
                                          const AblationMap* ablation = nullptr) {
    RankingPrompt prompt = build_pairwise_prompt(
        *ctx.tokenizer, role, query, doc_a, doc_b, /*label_a=*/1,
        /*label_b=*/0, ctx.order, ctx.prompt_opts);
    const Logits logits =
        ablation != nullptr && !ablation->replacements.empty()
            ? ablated_forward(*ctx.model, prompt.token_ids, *ablation)
            : forward(*ctx.model, prompt.token_ids);
    PairwisePreference pref;
    pref.p_yes = correct_score(logits, ctx.answers, Answer::Yes).value;
    pref.tie = pref.p_yes == 0.5;
    pref.winner = pref.p_yes >= 0.5 ? Preference::A : Preference::B;
    return pref;
}

// Evaluates both document orders; agreement means the same document wins
// regardless of position, the positional-bias diagnostic.
struct SwapControl {
    PairwisePreference forward_order;
    PairwisePreference swapped_order;
    bool agree = false;
};

inline SwapControl pairwise_swap_control(const PatchContext& ctx,
                                         const std::optional<RolePrompt>& role,
                                         const std::string& query,
                                         const std::string& doc_a,
                                         const std::string& doc_b) {
    SwapControl s;
    s.forward_order = pairwise_prefer(ctx, role, query, doc_a, doc_b);
    s.swapped_order = pairwise_prefer(ctx, role, query, doc_b, doc_a);
    s.agree = (s.forward_order.winner == Preference::A &&
               s.swapped_order.winner == Preference::B) ||
              (s.forward_order.winner == Preference::B &&
               s.swapped_order.winner == Preference::A);
    return s;
}

// Round-robin pairwise reranking: each unordered candidate pair is judged
// once, scores are win counts, ties keep original order.
inline RunList rerank_pairwise_round_robin(
    const PatchContext& ctx, const std::optional<RolePrompt>& role,
    const std::string& query_id, const std::string& query,
    const std::vector<CandidateDoc>& candidates, int k = 10,
    const AblationMap* ablation = nullptr) {
    std::vector<double> wins(candidates.size(), 0.0);
    for (std::size_t i = 0; i < candidates.size(); ++i)
        for (std::size_t j = i + 1; j < candidates.size(); ++j) {
            PairwisePreference p =
                pairwise_prefer(ctx, role, query, candidates[i].text,
                                candidates[j].text, ablation);
            if (p.winner == Preference::A)
                wins[i] += 1.0;
            else
                wins[j] += 1.0;
        }
    RunList run;
    run.query_id = query_id;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        run.entries.push_back({candidates[i].doc_id, wins[i]});
    std::stable_sort(run.entries.begin(), run.entries.end(),
                     [](const RunEntry& a, const RunEntry& b) {
                         return a.score > b.score;
                     });
    if (k > 0 && static_cast<int>(run.entries.size()) > k)
        run.entries.resize(static_cast<std::size_t>(k));
    return run;
}

// Per-query metric values and their mean.
struct EvalResult {
    std::string metric = "ndcg@10";
    std::vector<std::pair<std::string, double>> per_query;
    double mean = 0.0;
    std::string config_hash;
};

inline EvalResult evaluate_runs(const std::vector<RunList>& runs,
                                const Qrels& qrels, int k = 10) {
    EvalResult r;
    r.metric = "ndcg@" + std::to_string(k);
    double sum = 0.0;
    for (const auto& run : runs) {
        const double v = ndcg_at_k(run, qrels, k);
        r.per_query.emplace_back(run.query_id, v);
        sum += v;
    }
    r.mean = runs.empty() ? 0.0 : sum / static_cast<double>(runs.size());
    return r;
}

// One row of the role-prompt sweep: a role (or the no-role baseline) and its
// mean nDCG over the dataset.
struct RoleEvalRow {
    std::optional<RolePrompt> role; // nullopt = baseline
    EvalResult eval;
};

// Evaluates every role plus the no-role baseline over the dataset queries'
// candidate lists. Rows come back in input order, baseline last.
inline std::vector<RoleEvalRow> sweep_role_prompts(
    const PatchContext& ctx, const std::vector<RolePrompt>& roles,
    const std::vector<DatasetQuery>& queries, const Qrels& qrels, int k = 10) {
    const std::size_t n_roles = roles.size() + 1; // + baseline
    std::vector<RoleEvalRow> rows(n_roles);

    std::vector<std::size_t> idx(n_roles);
    for (std::size_t i = 0; i < n_roles; ++i) idx[i] = i;
    std::vector<EvalResult> evals = parallel_map<EvalResult>(
        n_roles, ctx.workers, [&](std::size_t i) {
            std::optional<RolePrompt> role;
            if (i < roles.size()) role = roles[i];
            std::vector<RunList> runs;
            runs.reserve(queries.size());
            for (const auto& q : queries) {
                if (ctx.mode == Mode::Pointwise)
                    runs.push_back(rerank_pointwise(ctx, role, q.query_id,
                                                    q.query, q.docs, k));
                else
                    runs.push_back(rerank_pairwise_round_robin(
                        ctx, role, q.query_id, q.query, q.docs, k));
            }
            return evaluate_runs(runs, qrels, k);
        });
    for (std::size_t i = 0; i < n_roles; ++i) {
        if (i < roles.size()) rows[i].role = roles[i];
        rows[i].eval = std::move(evals[i]);
    }
    return rows;
}

// Min / max / mean of the sweep rows per polarity plus the baseline value.
struct RoleSweepSummary {
    double baseline = 0.0;
    double positive_min = 0.0, positive_max = 0.0, positive_mean = 0.0;
    double negative_min = 0.0, negative_max = 0.0, negative_mean = 0.0;
};

inline RoleSweepSummary summarize_role_sweep(
    const std::vector<RoleEvalRow>& rows) {
    RoleSweepSummary s;
    double pos_sum = 0.0, neg_sum = 0.0;
    int pos_n = 0, neg_n = 0;
    s.positive_min = s.negative_min = std::numeric_limits<double>::infinity();
    s.positive_max = s.negative_max = -std::numeric_limits<double>::infinity();
    for (const auto& row : rows) {
        if (!row.role) {
            s.baseline = row.eval.mean;
            continue;
        }
        if (row.role->polarity == Polarity::Positive) {
            s.positive_min = std::min(s.positive_min, row.eval.mean);
            s.positive_max = std::max(s.positive_max, row.eval.mean);
            pos_sum += row.eval.mean;
            ++pos_n;
        } else {
            s.negative_min = std::min(s.negative_min, row.eval.mean);
            s.negative_max = std::max(s.negative_max, row.eval.mean);
            neg_sum += row.eval.mean;
            ++neg_n;
        }
    }
    if (pos_n > 0) s.positive_mean = pos_sum / pos_n;
    else s.positive_min = s.positive_max = 0.0;
    if (neg_n > 0) s.negative_mean = neg_sum / neg_n;
    else s.negative_min = s.negative_max = 0.0;
    return s;
}

} // namespace rolepatch
