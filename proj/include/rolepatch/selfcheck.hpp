#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rolepatch/experiment.hpp"

namespace rolepatch {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace detail {

inline bool logits_equal(const Logits& a, const Logits& b) {
    if (a.size() != b.size()) return false;
    for (Eigen::Index i = 0; i < a.size(); ++i)
        if (a(i) != b(i)) return false;
    return true;
}

// Random mixed-kind site set over a sequence, for identity-patching checks.
inline std::vector<ActivationSite> random_sites(const ModelConfig& cfg,
                                                int seq_len, Rng& rng) {
    std::vector<ActivationSite> sites;
    const int n_sites = 1 + static_cast<int>(rng.next_below(4));
    for (int i = 0; i < n_sites; ++i) {
        const int kind_pick = static_cast<int>(rng.next_below(4));
        std::vector<int> positions;
        const int n_pos = 1 + static_cast<int>(rng.next_below(
                                  static_cast<std::uint64_t>(seq_len)));
        for (int p = 0; p < n_pos; ++p)
            positions.push_back(static_cast<int>(rng.next_below(
                static_cast<std::uint64_t>(seq_len))));
        switch (kind_pick) {
            case 0:
                sites.push_back(ActivationSite::resid_pre(
                    static_cast<int>(rng.next_below(cfg.n_layers + 1)),
                    positions));
                break;
            case 1:
                sites.push_back(ActivationSite::attn_out(
                    static_cast<int>(rng.next_below(cfg.n_layers)),
                    positions));
                break;
            case 2:
                sites.push_back(ActivationSite::mlp_out(
                    static_cast<int>(rng.next_below(cfg.n_layers)),
                    positions));
                break;
            default:
                sites.push_back(ActivationSite::head_contrib(
                    static_cast<int>(rng.next_below(cfg.n_layers)),
                    static_cast<int>(rng.next_below(cfg.n_heads)),
                    positions));
        }
        sites.back().normalize();
    }
    return sites;
}

} // namespace detail

// Runs the invariant suite against the experiment's model and tokenizer.
// Checks mirror the library's contracts: identity patching, restoration,
// head decomposition, determinism under parallelism, prompt-factory counts,
// and metric sanity.
inline std::vector<CheckResult> run_selfcheck(const Experiment& exp,
                                              int identity_trials = 10) {
    std::vector<CheckResult> results;
    auto check = [&](const std::string& name, bool pass,
                     const std::string& detail = "") {
        results.push_back({name, pass, detail});
    };
    PatchContext ctx = exp.context();
    const Model& model = *exp.model;

    const RankingSample sample =
        exp.samples.empty() ? detail::placeholder_sample() : exp.samples[0];
    const PromptPair& pair = exp.pairs[0];
    detail::BuiltPair built = detail::build_prompt_pair(ctx, pair, sample);
    const int seq = built.clean.length();

    // Identity patching: self-sourced patches reproduce unpatched logits
    // bitwise.
    {
        Rng rng(7);
        bool all = true;
        std::string detail_msg;
        const Logits base = forward(model, built.clean.token_ids);
        for (int t = 0; t < identity_trials && all; ++t) {
            auto sites = detail::random_sites(model.config, seq, rng);
            auto [logits, cache] =
                run_with_cache(model, built.clean.token_ids, sites);
            PatchPlan plan{sites, &cache};
            const Logits patched =
                run_with_patch(model, built.clean.token_ids, plan);
            if (!detail::logits_equal(patched, base)) {
                all = false;
                detail_msg = "trial " + std::to_string(t);
            }
        }
        check("identity_patching_bitwise", all, detail_msg);
    }

    // Empty plan: logits equal the corrupted run exactly; normalized LD 0.
    {
        LogitDiffRecord rec = run_patched_sample(ctx, pair, sample, {});
        const bool pass = rec.normalized && *rec.normalized == 0.0 &&
                          rec.ld_patched == rec.ld_corrupted;
        check("empty_plan_no_op", pass,
              "normalized=" +
                  std::to_string(rec.normalized ? *rec.normalized : -1.0));
    }

    // Full restoration: ResidPre(0) at all positions recovers the clean run.
    {
        std::vector<SiteSpec> sites{SiteSpec::resid_pre_all(0)};
        try {
            LogitDiffRecord rec = run_patched_sample(ctx, pair, sample, sites);
            const double err = std::abs(*rec.normalized - 1.0);
            check("full_restoration", err <= 1e-5,
                  "normalized=" + std::to_string(*rec.normalized));
        } catch (const DegenerateBaseline&) {
            check("full_restoration", false, "degenerate baseline sample");
        }
    }

    // Head decomposition: sum of head contributions + bias equals the
    // attention output within 1e-4 relative error, every layer.
    {
        std::vector<ActivationSite> sites;
        for (int l = 0; l < model.config.n_layers; ++l) {
            sites.push_back(
                ActivationSite::attn_out(l, all_positions(seq)));
            for (int h = 0; h < model.config.n_heads; ++h)
                sites.push_back(
                    ActivationSite::head_contrib(l, h, all_positions(seq)));
        }
        auto [logits, cache] =
            run_with_cache(model, built.clean.token_ids, sites);
        double worst = 0.0;
        for (int l = 0; l < model.config.n_layers; ++l) {
            Mat sum = Mat::Zero(seq, model.config.d_model);
            for (int h = 0; h < model.config.n_heads; ++h)
                sum += cache.entries.at({SiteKind::HeadContrib, l, h}).values;
            sum.rowwise() += model.layers[static_cast<std::size_t>(l)]
                                 .b_attn_out.transpose();
            const Mat& attn =
                cache.entries.at({SiteKind::AttnOut, l, -1}).values;
            const double denom = std::max(1e-12, static_cast<double>(
                                                     attn.norm()));
            worst = std::max(worst,
                             static_cast<double>((sum - attn).norm()) / denom);
        }
        check("head_decomposition", worst <= 1e-4,
              "worst relative error " + std::to_string(worst));
    }

    // Grid determinism: the same sweep on 1 and 4 workers must serialize to
    // identical bytes.
    {
        PatchContext one = ctx;
        one.workers = 1;
        PatchContext four = ctx;
        four.workers = 4;
        std::vector<RankingSample> few(exp.samples.begin(),
                                       exp.samples.begin() +
                                           std::min<std::size_t>(
                                               2, exp.samples.size()));
        if (few.empty()) few.push_back(sample);
        std::vector<PromptPair> pairs{exp.pairs[0]};
        const std::string a =
            sweep_residual(one, pairs, few).grid.to_csv("x");
        const std::string b =
            sweep_residual(four, pairs, few).grid.to_csv("x");
        check("grid_determinism_workers", a == b);
    }

    // Prompt factory counts and polarity purity.
    {
        auto positive = enumerate_roles(exp.lexicon, Polarity::Positive);
        auto negative = enumerate_roles(exp.lexicon, Polarity::Negative);
        const std::size_t expected =
            exp.lexicon.adjectives_positive.size() *
            exp.lexicon.modals.size() * exp.lexicon.adverbs_positive.size();
        bool purity = true;
        for (const auto& r : positive)
            if (r.polarity != Polarity::Positive) purity = false;
        for (const auto& r : negative)
            if (r.polarity != Polarity::Negative) purity = false;
        check("role_enumeration",
              positive.size() == expected && negative.size() == expected &&
                  purity,
              std::to_string(positive.size()) + "+" +
                  std::to_string(negative.size()));
        bool pair_ok = !exp.pairs.empty();
        for (const auto& p : exp.pairs)
            pair_ok = pair_ok && p.clean.polarity == Polarity::Positive &&
                      p.corrupted.polarity == Polarity::Negative;
        check("counter_pairs", pair_ok,
              std::to_string(exp.pairs.size()) + " pairs");
    }

    // Alignment of the pair prompts actually used for patching.
    {
        std::vector<RankingPrompt> prompts;
        for (const auto& p : exp.pairs) {
            detail::BuiltPair bp = detail::build_prompt_pair(ctx, p, sample);
            prompts.push_back(bp.clean);
            prompts.push_back(bp.corrupted);
        }
        AlignmentReport report = check_token_alignment(prompts);
        check("pair_token_alignment", report.pass,
              "modal length " + std::to_string(report.modal_length));
    }

    // nDCG sanity against hand-built runs.
    {
        Qrels qrels;
        qrels.rels["q"] = {{"a", 3}, {"b", 1}, {"c", 0}};
        RunList ideal{"q", {{"a", 3.0}, {"b", 2.0}, {"c", 1.0}}};
        RunList zero{"q", {{"c", 1.0}}};
        const bool pass = std::abs(ndcg_at_k(ideal, qrels, 10) - 1.0) <
                              1e-12 &&
                          ndcg_at_k(zero, qrels, 10) == 0.0;
        check("ndcg_sanity", pass);
    }

    // Correct score: equal logits give 0.5; ln(3) margin gives 0.75.
    {
        Logits logits = Logits::Zero(exp.tokenizer->vocab_size());
        const double half =
            correct_score(logits, ctx.answers, Answer::Yes).value;
        logits(ctx.answers.yes_id) = std::log(3.0f);
        const double threequarters =
            correct_score(logits, ctx.answers, Answer::Yes).value;
        check("correct_score_closed_form",
              std::abs(half - 0.5) < 1e-9 &&
                  std::abs(threequarters - 0.75) < 1e-9);
    }

    return results;
}

inline int cmd_selfcheck(const Experiment& exp) {
    detail::CommandTimer timer;
    const auto dir =
        std::filesystem::path(exp.config.resolved_out_dir()) / "selfcheck";
    std::vector<CheckResult> results = run_selfcheck(exp);
    bool all = true;
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : results) {
        std::printf("%-32s %s%s%s\n", r.name.c_str(),
                    r.pass ? "PASS" : "FAIL", r.detail.empty() ? "" : "  ",
                    r.detail.c_str());
        j.push_back({{"name", r.name}, {"pass", r.pass}, {"detail", r.detail}});
        all = all && r.pass;
    }
    detail::write_file(dir / "selfcheck.json", j.dump(2) + "\n");
    detail::write_manifest(exp, "selfcheck", dir, timer, {{"pass", all}});
    return all ? 0 : 1;
}

} // namespace rolepatch
