#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ndcg_oracle.hpp"
#include "rolepatch/rank_eval.hpp"
#include "rolepatch/rng.hpp"
#include "toy_experiment.hpp"

using namespace rolepatch;

namespace {

const std::string kFixtures = ROLEPATCH_FIXTURES;

const Experiment& toy() {
    static Experiment exp = load_experiment(toyexp::config(kFixtures));
    return exp;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("ndcg of the ideal ranking is 1") {
    Qrels qrels;
    qrels.rels["q"] = {{"a", 3}, {"b", 2}, {"c", 1}, {"d", 0}};
    RunList run{"q", {{"a", 9.0}, {"b", 8.0}, {"c", 7.0}, {"d", 6.0}}};
    CHECK(ndcg_at_k(run, qrels, 10) == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ndcg is 0 when only zero-relevance docs are retrieved") {
    Qrels qrels;
    qrels.rels["q"] = {{"a", 2}, {"b", 0}, {"c", 0}};
    RunList run{"q", {{"b", 2.0}, {"c", 1.0}}};
    CHECK(ndcg_at_k(run, qrels, 10) == 0.0);

    Qrels all_zero;
    all_zero.rels["q"] = {{"a", 0}, {"b", 0}};
    RunList r2{"q", {{"a", 1.0}, {"b", 0.5}}};
    CHECK(ndcg_at_k(r2, all_zero, 10) == 0.0); // ideal DCG is 0
}

TEST_CASE("ndcg requires the query in the qrels") {
    Qrels qrels;
    qrels.rels["q1"] = {{"a", 1}};
    RunList run{"q2", {{"a", 1.0}}};
    CHECK_THROWS_AS(ndcg_at_k(run, qrels, 10), UnknownQuery);
}

TEST_CASE("ndcg matches the brute-force oracle on random instances") {
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const int n_docs = 2 + static_cast<int>(rng.next_below(6)); // 2..7
        const int k = 1 + static_cast<int>(rng.next_below(5));      // 1..5
        Qrels qrels;
        std::map<std::string, int> rels;
        std::vector<std::string> doc_ids;
        for (int d = 0; d < n_docs; ++d) {
            const std::string id = "d" + std::to_string(d);
            const int rel = static_cast<int>(rng.next_below(4)); // 0..3
            qrels.rels["q"][id] = rel;
            rels[id] = rel;
            doc_ids.push_back(id);
        }
        rng.shuffle(doc_ids);
        // Retrieve a random subset in a random order, sometimes with an
        // unjudged document mixed in.
        const std::size_t retrieved = 1 + rng.next_below(doc_ids.size());
        std::vector<std::string> ranked(doc_ids.begin(),
                                        doc_ids.begin() +
                                            static_cast<long>(retrieved));
        if (rng.next_below(3) == 0) {
            qrels.rels["q"]["extra"] = 0;
            rels["extra"] = 0;
        }

        RunList run;
        run.query_id = "q";
        double score = static_cast<double>(ranked.size());
        for (const auto& id : ranked) run.entries.push_back({id, score--});

        const double mine = ndcg_at_k(run, qrels, k);
        const double oracle = ndcg_oracle::ndcg(ranked, rels, k);
        INFO("trial " << trial << " n_docs " << n_docs << " k " << k);
        CHECK(mine == Catch::Approx(oracle).margin(1e-9));
    }
}

TEST_CASE("moving a more relevant doc up never lowers ndcg") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 5;
        Qrels qrels;
        std::vector<int> rels(n);
        RunList run;
        run.query_id = "q";
        for (int d = 0; d < n; ++d) {
            rels[static_cast<std::size_t>(d)] =
                static_cast<int>(rng.next_below(4));
            qrels.rels["q"]["d" + std::to_string(d)] =
                rels[static_cast<std::size_t>(d)];
            run.entries.push_back(
                {"d" + std::to_string(d), static_cast<double>(n - d)});
        }
        const double before = ndcg_at_k(run, qrels, 10);
        // Find an adjacent inversion and swap it upward.
        for (int i = 0; i + 1 < n; ++i) {
            const int rel_hi =
                qrels.rels["q"][run.entries[static_cast<std::size_t>(i)].doc_id];
            const int rel_lo =
                qrels.rels["q"]
                    [run.entries[static_cast<std::size_t>(i + 1)].doc_id];
            if (rel_lo > rel_hi) {
                std::swap(run.entries[static_cast<std::size_t>(i)],
                          run.entries[static_cast<std::size_t>(i + 1)]);
                break;
            }
        }
        const double after = ndcg_at_k(run, qrels, 10);
        CHECK(after >= before - 1e-12);
    }
}

TEST_CASE("rerank_pointwise") {
    const Experiment& exp = toy();
    PatchContext ctx = exp.context();
    const DatasetQuery& q = exp.dataset[0];
    RolePrompt role =
        render_role(exp.lexicon, "expert", "can", "carefully");

    SECTION("single candidate") {
        std::vector<CandidateDoc> one{q.docs[0]};
        RunList run = rerank_pointwise(ctx, role, q.query_id, q.query, one);
        REQUIRE(run.entries.size() == 1);
        CHECK(run.entries[0].doc_id == q.docs[0].doc_id);
    }

    SECTION("duplicate texts get equal scores") {
        std::vector<CandidateDoc> dup{{"x", q.docs[0].text, 1},
                                      {"y", q.docs[0].text, 1}};
        RunList run = rerank_pointwise(ctx, role, q.query_id, q.query, dup);
        REQUIRE(run.entries.size() == 2);
        CHECK(run.entries[0].score == run.entries[1].score);
        CHECK(run.entries[0].doc_id == "x"); // stable original order
    }

    SECTION("scores do not depend on candidate order") {
        RunList a = rerank_pointwise(ctx, role, q.query_id, q.query, q.docs);
        std::vector<CandidateDoc> reversed(q.docs.rbegin(), q.docs.rend());
        RunList b =
            rerank_pointwise(ctx, role, q.query_id, q.query, reversed);
        std::map<std::string, double> sa, sb;
        for (const auto& e : a.entries) sa[e.doc_id] = e.score;
        for (const auto& e : b.entries) sb[e.doc_id] = e.score;
        CHECK(sa == sb);
    }

    SECTION("descending score order") {
        RunList run = rerank_pointwise(ctx, role, q.query_id, q.query, q.docs);
        for (std::size_t i = 1; i < run.entries.size(); ++i)
            CHECK(run.entries[i - 1].score >= run.entries[i].score);
    }
}

TEST_CASE("baseline run file matches the frozen fixture") {
    const Experiment& exp = toy();
    PatchContext ctx = exp.context();
    std::vector<RunList> runs;
    for (const auto& q : exp.dataset)
        runs.push_back(rerank_pointwise(ctx, std::nullopt, q.query_id,
                                        q.query, q.docs, 10));
    CHECK(run_to_trec(runs, "rolepatch-baseline") ==
          read_file(kFixtures + "/toy/baseline_run.trec"));
}

TEST_CASE("pairwise_prefer") {
    const Experiment& exp = toy();
    PatchContext ctx = exp.context();
    ctx.mode = Mode::Pairwise;
    const DatasetQuery& q = exp.dataset[0];
    RolePrompt role =
        render_role(exp.lexicon, "expert", "can", "carefully");

    SECTION("prefers one side and is consistent") {
        PairwisePreference p = pairwise_prefer(ctx, role, q.query,
                                               q.docs[0].text,
                                               q.docs[2].text);
        PairwisePreference again = pairwise_prefer(ctx, role, q.query,
                                                   q.docs[0].text,
                                                   q.docs[2].text);
        CHECK(p.winner == again.winner);
        CHECK(p.p_yes == again.p_yes);
    }

    SECTION("exact ties go to A with a flag") {
        // Zero unembedding forces all logits, hence P(Yes), to one half.
        Experiment flat = load_experiment(toyexp::config(kFixtures));
        flat.model->unembed =
            Mat::Zero(flat.model->config.vocab_size,
                      flat.model->config.d_model);
        PatchContext fctx = flat.context();
        fctx.mode = Mode::Pairwise;
        PairwisePreference p = pairwise_prefer(fctx, role, q.query,
                                               q.docs[0].text,
                                               q.docs[1].text);
        CHECK(p.p_yes == 0.5);
        CHECK(p.tie);
        CHECK(p.winner == Preference::A);
    }

    SECTION("identical documents expose positional bias") {
        SwapControl s = pairwise_swap_control(ctx, role, q.query,
                                              q.docs[0].text,
                                              q.docs[0].text);
        // Same tokens both ways: identical P(Yes), so either both orders
        // pick position A (bias, agree == false) or we hit an exact tie.
        CHECK(s.forward_order.p_yes == s.swapped_order.p_yes);
        if (s.forward_order.p_yes != 0.5) CHECK_FALSE(s.agree);
    }
}

TEST_CASE("round-robin pairwise rerank") {
    const Experiment& exp = toy();
    PatchContext ctx = exp.context();
    ctx.mode = Mode::Pairwise;
    const DatasetQuery& q = exp.dataset[0];
    RunList run = rerank_pairwise_round_robin(ctx, std::nullopt, q.query_id,
                                              q.query, q.docs, 10);
    REQUIRE(run.entries.size() == q.docs.size());
    double total = 0.0;
    for (const auto& e : run.entries) total += e.score;
    const double n = static_cast<double>(q.docs.size());
    CHECK(total == Catch::Approx(n * (n - 1) / 2.0)); // every pair judged once
    for (std::size_t i = 1; i < run.entries.size(); ++i)
        CHECK(run.entries[i - 1].score >= run.entries[i].score);
}

TEST_CASE("role sweep rows and fixture") {
    const Experiment& exp = toy();
    PatchContext ctx = exp.context();
    std::vector<RolePrompt> roles;
    auto pos = enumerate_roles(exp.lexicon, Polarity::Positive);
    auto neg = enumerate_roles(exp.lexicon, Polarity::Negative);
    for (int i = 0; i < 3; ++i) roles.push_back(pos[static_cast<std::size_t>(i)]);
    for (int i = 0; i < 3; ++i) roles.push_back(neg[static_cast<std::size_t>(i)]);

    std::vector<RoleEvalRow> rows =
        sweep_role_prompts(ctx, roles, exp.dataset, exp.qrels, 10);
    REQUIRE(rows.size() == roles.size() + 1); // + baseline
    CHECK_FALSE(rows.back().role.has_value());

    nlohmann::json fixture = nlohmann::json::parse(
        read_file(kFixtures + "/toy/role_sweep_fixture.json"));
    REQUIRE(fixture.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].eval.mean ==
              Catch::Approx(fixture[i].at("ndcg").get<double>())
                  .epsilon(1e-12));
    }

    RoleSweepSummary summary = summarize_role_sweep(rows);
    CHECK(summary.positive_min <= summary.positive_max);
    CHECK(summary.negative_min <= summary.negative_max);
    CHECK(summary.baseline == rows.back().eval.mean);
}

TEST_CASE("qrels parsing and trec run format") {
    const auto dir = std::filesystem::temp_directory_path();
    {
        std::ofstream out(dir / "rp_qrels.txt");
        out << "q1 0 d1 2\nq1 0 d2 0\nq2 0 d3 1\n";
    }
    Qrels qrels = Qrels::load((dir / "rp_qrels.txt").string());
    CHECK(qrels.relevance("q1", "d1") == 2);
    CHECK(qrels.relevance("q1", "missing") == 0);
    CHECK_THROWS_AS(qrels.relevance("q9", "d1"), UnknownQuery);

    RunList run{"q1", {{"d1", 0.75}, {"d2", 0.25}}};
    const std::string trec = run_to_trec({run}, "tag");
    CHECK(trec == "q1 Q0 d1 1 0.75 tag\nq1 Q0 d2 2 0.25 tag\n");
}

TEST_CASE("equal-score permutations do not change ndcg after stable sort") {
    const Experiment& exp = toy();
    PatchContext ctx = exp.context();
    const DatasetQuery& q = exp.dataset[0];
    // Two candidates with identical text => identical scores; the run keeps
    // input order, and nDCG over them is the same either way because their
    // qrels labels are what they are.
    std::vector<CandidateDoc> dup{{"p", q.docs[0].text, 1},
                                  {"r", q.docs[0].text, 1}};
    Qrels qrels;
    qrels.rels[q.query_id] = {{"p", 1}, {"r", 1}};
    RunList a = rerank_pointwise(ctx, std::nullopt, q.query_id, q.query, dup);
    std::vector<CandidateDoc> swapped{dup[1], dup[0]};
    RunList b =
        rerank_pointwise(ctx, std::nullopt, q.query_id, q.query, swapped);
    CHECK(ndcg_at_k(a, qrels, 10) == ndcg_at_k(b, qrels, 10));
}
