#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rolepatch/ablation.hpp"
#include "rolepatch/dataset.hpp"
#include "rolepatch/patching.hpp"
#include "rolepatch/prompt.hpp"
#include "rolepatch/rank_eval.hpp"
#include "rolepatch/safetensors.hpp"
#include "rolepatch/svg.hpp"
#include "rolepatch/tokenizer.hpp"
#include "rolepatch/transformer.hpp"

namespace rolepatch {

inline constexpr const char* kVersion = "0.1.0";

struct ExperimentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One config file drives every command; command-line flags override fields.
struct ExperimentConfig {
    // model
    std::string model_type = "toy"; // "toy" | "checkpoint"
    ModelConfig toy_config;
    std::uint64_t toy_seed = 42;
    std::string checkpoint_dir;
    std::string checkpoint_config; // JSON file with ModelConfig fields

    // tokenizer
    std::string tokenizer_type = "whitespace"; // "bpe" | "whitespace"
    std::string vocab_file;  // empty whitespace vocab = derive from corpus
    std::string merges_file;

    // data
    std::string lexicon_file;
    std::string dataset_path;
    std::string qrels_path;
    std::size_t sample_count = 100;
    std::uint64_t data_seed = 0;

    // protocol
    Mode mode = Mode::Pointwise;
    std::vector<std::string> order; // segment names, empty = default
    std::uint64_t pair_seed = 0;
    std::size_t n_pairs = 10;
    std::vector<int> k_values = {1, 10};
    double eps_base = 1e-6;
    std::string head_segment = "last_token";
    std::string sweep_site = "resid"; // "resid" | "attn" | "mlp"
    int ndcg_k = 10;
    std::size_t role_limit = 0; // 0 = all roles in cmd_rank
    bool ablate_rank_eval = false;

    // execution (excluded from the config hash)
    int workers = 1;
    std::string out_dir = "out";
    int doc_token_budget = 220;
    bool add_bos = false;
    int bos_id = 0;
    double heatmap_range = 0.0;

    ExperimentConfig() {
        toy_config.n_layers = 2;
        toy_config.n_heads = 2;
        toy_config.d_model = 16;
        toy_config.d_head = 8;
        toy_config.d_mlp = 32;
        toy_config.vocab_size = 64;
        toy_config.max_seq = 256;
    }

    nlohmann::json to_json() const {
        nlohmann::json model{{"type", model_type}};
        nlohmann::json toy;
        rolepatch::to_json(toy, toy_config);
        toy["seed"] = toy_seed;
        model["toy"] = toy;
        if (!checkpoint_dir.empty()) model["checkpoint_dir"] = checkpoint_dir;
        if (!checkpoint_config.empty())
            model["checkpoint_config"] = checkpoint_config;

        nlohmann::json tok{{"type", tokenizer_type}};
        if (!vocab_file.empty()) tok["vocab"] = vocab_file;
        if (!merges_file.empty()) tok["merges"] = merges_file;

        nlohmann::json j{{"model", model},
                         {"tokenizer", tok},
                         {"mode", to_string(mode)},
                         {"sample_count", sample_count},
                         {"data_seed", data_seed},
                         {"pair_seed", pair_seed},
                         {"n_pairs", n_pairs},
                         {"k_values", k_values},
                         {"eps_base", eps_base},
                         {"head_segment", head_segment},
                         {"sweep_site", sweep_site},
                         {"ndcg_k", ndcg_k},
                         {"role_limit", role_limit},
                         {"ablate_rank_eval", ablate_rank_eval},
                         {"doc_token_budget", doc_token_budget},
                         {"add_bos", add_bos},
                         {"bos_id", bos_id},
                         {"heatmap_range", heatmap_range},
                         {"workers", workers},
                         {"out_dir", out_dir}};
        if (!lexicon_file.empty()) j["lexicon"] = lexicon_file;
        if (!dataset_path.empty()) j["dataset"] = dataset_path;
        if (!qrels_path.empty()) j["qrels"] = qrels_path;
        if (!order.empty()) j["order"] = order;
        return j;
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig c;
        if (j.contains("model")) {
            const auto& m = j.at("model");
            if (m.contains("type")) m.at("type").get_to(c.model_type);
            if (m.contains("toy")) {
                rolepatch::from_json(m.at("toy"), c.toy_config);
                if (m.at("toy").contains("seed"))
                    m.at("toy").at("seed").get_to(c.toy_seed);
            }
            if (m.contains("checkpoint_dir"))
                m.at("checkpoint_dir").get_to(c.checkpoint_dir);
            if (m.contains("checkpoint_config"))
                m.at("checkpoint_config").get_to(c.checkpoint_config);
        }
        if (j.contains("tokenizer")) {
            const auto& t = j.at("tokenizer");
            if (t.contains("type")) t.at("type").get_to(c.tokenizer_type);
            if (t.contains("vocab")) t.at("vocab").get_to(c.vocab_file);
            if (t.contains("merges")) t.at("merges").get_to(c.merges_file);
        }
        if (j.contains("mode"))
            c.mode = j.at("mode").get<std::string>() == "pairwise"
                         ? Mode::Pairwise
                         : Mode::Pointwise;
        auto opt = [&](const char* key, auto& out) {
            if (j.contains(key)) j.at(key).get_to(out);
        };
        opt("lexicon", c.lexicon_file);
        opt("dataset", c.dataset_path);
        opt("qrels", c.qrels_path);
        opt("sample_count", c.sample_count);
        opt("data_seed", c.data_seed);
        opt("pair_seed", c.pair_seed);
        opt("n_pairs", c.n_pairs);
        opt("k_values", c.k_values);
        opt("eps_base", c.eps_base);
        opt("head_segment", c.head_segment);
        opt("sweep_site", c.sweep_site);
        opt("ndcg_k", c.ndcg_k);
        opt("role_limit", c.role_limit);
        opt("ablate_rank_eval", c.ablate_rank_eval);
        opt("doc_token_budget", c.doc_token_budget);
        opt("add_bos", c.add_bos);
        opt("bos_id", c.bos_id);
        opt("heatmap_range", c.heatmap_range);
        opt("workers", c.workers);
        opt("out_dir", c.out_dir);
        opt("order", c.order);
        return c;
    }

    static ExperimentConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ExperimentError("config file missing: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw ExperimentError(std::string("config parse error: ") +
                                  e.what());
        }
        return from_json(j);
    }

    // Identifies the experiment, not the execution: worker count and output
    // directory do not change results, so they are excluded.
    std::string hash() const {
        nlohmann::json j = to_json();
        j.erase("workers");
        j.erase("out_dir");
        const std::string canon = j.dump();
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char ch : canon) {
            h ^= ch;
            h *= 0x100000001b3ull;
        }
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(h));
        return buf;
    }

    SegmentOrder segment_order() const {
        SegmentOrder o;
        for (const auto& name : order) o.push_back(parse_segment(name));
        return o;
    }

    PromptOptions prompt_options(int max_seq) const {
        PromptOptions p;
        p.add_bos = add_bos;
        p.bos_id = bos_id;
        p.doc_token_budget = doc_token_budget;
        p.max_prompt_tokens = max_seq;
        return p;
    }

    std::string resolved_out_dir() const {
        if (const char* env = std::getenv("ROLEPATCH_OUT"))
            if (env[0] != '\0') return env;
        return out_dir;
    }
};

// Assembled runtime objects for one experiment. Commands borrow from this,
// so it must outlive any PatchContext created from it.
struct Experiment {
    ExperimentConfig config;
    std::string config_hash;
    LexiconSlots lexicon;
    std::vector<AlignmentOffender> lexicon_exclusions;
    std::optional<Tokenizer> tokenizer;
    std::optional<Model> model;
    AnswerTokens answers;
    std::vector<PromptPair> pairs;
    std::vector<DatasetQuery> dataset;
    std::vector<RankingSample> samples;
    Qrels qrels;

    PatchContext context() const {
        PatchContext ctx;
        ctx.model = &*model;
        ctx.tokenizer = &*tokenizer;
        ctx.mode = config.mode;
        ctx.order = config.segment_order();
        ctx.prompt_opts = config.prompt_options(model->config.max_seq);
        ctx.answers = answers;
        ctx.eps_base = config.eps_base;
        ctx.workers = config.workers;
        return ctx;
    }
};

namespace detail {

// Corpus for a derived whitespace vocabulary: every rendered role, the
// prompt skeleton text, answer words, and the dataset contents.
inline std::vector<std::string> vocab_corpus(
    const LexiconSlots& lexicon, const std::vector<DatasetQuery>& dataset) {
    std::vector<std::string> corpus;
    for (Polarity p : {Polarity::Positive, Polarity::Negative})
        for (const auto& role : enumerate_roles(lexicon, p))
            corpus.push_back(role.text);
    // Bare slot words: role text attaches punctuation ("carefully,"), but
    // slot-span prefix counting tokenizes them without it.
    for (const auto& list :
         {lexicon.adjectives_positive, lexicon.adjectives_negative,
          lexicon.adverbs_positive, lexicon.adverbs_negative, lexicon.modals})
        for (const auto& word : list) corpus.push_back(word);
    corpus.push_back("Document: Query: Answer: Yes No");
    corpus.push_back(
        "Does the document answer the query? Answer only 'Yes' or 'No'.");
    corpus.push_back("Document A: Document B: Is Document A more relevant "
                     "to the query than Document B? Answer only 'Yes' or "
                     "'No'.");
    for (const auto& q : dataset) {
        corpus.push_back(q.query);
        for (const auto& d : q.docs) corpus.push_back(d.text);
    }
    return corpus;
}

} // namespace detail

// Loads and wires up everything a command needs. The counter pairs are built
// from the alignment-filtered lexicon so patching positions line up; the
// exclusions are kept for the manifest.
inline Experiment load_experiment(const ExperimentConfig& config) {
    Experiment exp;
    exp.config = config;
    exp.config_hash = config.hash();
    exp.lexicon = config.lexicon_file.empty()
                      ? LexiconSlots::default_slots()
                      : LexiconSlots::load(config.lexicon_file);
    exp.lexicon.validate();

    if (!config.dataset_path.empty()) {
        exp.dataset = load_dataset(config.dataset_path);
        exp.samples = sample_dataset(exp.dataset, config.mode,
                                     config.data_seed, config.sample_count);
        exp.qrels = config.qrels_path.empty()
                        ? Qrels::from_dataset(exp.dataset)
                        : Qrels::load(config.qrels_path);
    }

    if (config.tokenizer_type == "bpe") {
        if (config.vocab_file.empty() || config.merges_file.empty())
            throw ExperimentError("bpe tokenizer needs vocab and merges files");
        exp.tokenizer =
            Tokenizer::load_bpe(config.vocab_file, config.merges_file);
    } else if (config.tokenizer_type == "whitespace") {
        if (!config.vocab_file.empty()) {
            exp.tokenizer = Tokenizer::load_whitespace(config.vocab_file);
        } else {
            exp.tokenizer = whitespace_from_corpus(
                detail::vocab_corpus(exp.lexicon, exp.dataset));
        }
    } else {
        throw ExperimentError("unknown tokenizer type: " +
                              config.tokenizer_type);
    }
    exp.answers = exp.tokenizer->resolve_answer_tokens();

    if (config.model_type == "toy") {
        ModelConfig toy = config.toy_config;
        // A derived whitespace vocabulary sets the toy model's vocab size.
        if (config.tokenizer_type == "whitespace" && config.vocab_file.empty())
            toy.vocab_size = exp.tokenizer->vocab_size();
        exp.model = make_toy_model(toy, config.toy_seed);
    } else if (config.model_type == "checkpoint") {
        if (config.checkpoint_dir.empty())
            throw ExperimentError("checkpoint model needs checkpoint_dir");
        ModelConfig mc = ModelConfig::gpt2_small();
        const std::string cfg_path =
            config.checkpoint_config.empty()
                ? (std::filesystem::path(config.checkpoint_dir) /
                   "config.json").string()
                : config.checkpoint_config;
        if (std::filesystem::exists(cfg_path)) {
            std::ifstream in(cfg_path);
            nlohmann::json j;
            in >> j;
            rolepatch::from_json(j, mc);
        }
        exp.model = load_gpt2_checkpoint(config.checkpoint_dir, mc);
    } else {
        throw ExperimentError("unknown model type: " + config.model_type);
    }

    LexiconFilterResult filtered =
        filter_aligned_lexicon(exp.lexicon, *exp.tokenizer);
    exp.lexicon_exclusions = filtered.exclusions;
    exp.pairs = make_counter_pairs(filtered.lexicon, config.pair_seed,
                                   config.n_pairs);
    return exp;
}

// ---------------------------------------------------------------------------
// Command layer: each command writes its artifacts plus a manifest under
// <out>/<command>/.

namespace detail {

inline void write_file(const std::filesystem::path& path,
                       const std::string& content) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ExperimentError("cannot write file: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

class CommandTimer {
public:
    CommandTimer() : start_(std::chrono::steady_clock::now()) {}
    long long elapsed_ms() const {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

// Data artifacts are byte-identical across reruns with the same config; the
// manifest carries the wall-clock runtime and is exempt from that guarantee.
inline void write_manifest(const Experiment& exp, const std::string& command,
                           const std::filesystem::path& dir,
                           const CommandTimer& timer,
                           nlohmann::json extra = {}) {
    nlohmann::json j{{"command", command},
                     {"config_hash", exp.config_hash},
                     {"version", kVersion},
                     {"runtime_ms", timer.elapsed_ms()}};
    nlohmann::json exclusions = nlohmann::json::array();
    for (const auto& e : exp.lexicon_exclusions)
        exclusions.push_back({{"slot", e.slot},
                              {"word", e.word},
                              {"tokens", e.tokens},
                              {"expected", e.expected}});
    j["lexicon_exclusions"] = exclusions;
    if (!extra.is_null())
        for (auto& [k, v] : extra.items()) j[k] = v;
    write_file(dir / "manifest.json", j.dump(2) + "\n");
}

inline SiteKind parse_sweep_site(const std::string& s) {
    if (s == "resid") return SiteKind::ResidPre;
    if (s == "attn") return SiteKind::AttnOut;
    if (s == "mlp") return SiteKind::MlpOut;
    throw ExperimentError("unknown sweep site: " + s +
                          " (expected resid, attn or mlp)");
}

// A fixed placeholder sample lets gen-prompts run without a dataset.
inline RankingSample placeholder_sample() {
    RankingSample s;
    s.query_id = "q0";
    s.query = "what is the capital of France";
    s.docs.push_back(
        {"d0", "Paris is the capital and largest city of France.", 1});
    return s;
}

} // namespace detail

// 600 role sentences, the counter pairs, a prompt dump over every role with
// fixed non-role content, and the token-alignment report.
inline int cmd_gen_prompts(const Experiment& exp) {
    detail::CommandTimer timer;
    const auto dir =
        std::filesystem::path(exp.config.resolved_out_dir()) / "gen-prompts";
    PatchContext ctx = exp.context();

    std::vector<RolePrompt> roles;
    for (Polarity p : {Polarity::Positive, Polarity::Negative})
        for (auto& r : enumerate_roles(exp.lexicon, p)) roles.push_back(r);

    std::string roles_jsonl;
    for (const auto& r : roles) {
        nlohmann::json j{{"adjective", r.adjective},
                         {"modal", r.modal},
                         {"adverb", r.adverb},
                         {"polarity", to_string(r.polarity)},
                         {"text", r.text}};
        roles_jsonl += j.dump() + "\n";
    }
    detail::write_file(dir / "roles.jsonl", roles_jsonl);

    nlohmann::json pairs_json = nlohmann::json::array();
    for (const auto& p : exp.pairs)
        pairs_json.push_back(
            {{"clean",
              {{"adjective", p.clean.adjective},
               {"modal", p.clean.modal},
               {"adverb", p.clean.adverb},
               {"text", p.clean.text}}},
             {"corrupted",
              {{"adjective", p.corrupted.adjective},
               {"modal", p.corrupted.modal},
               {"adverb", p.corrupted.adverb},
               {"text", p.corrupted.text}}}});
    detail::write_file(dir / "counter_pairs.json",
                       pairs_json.dump(2) + "\n");
    detail::write_file(dir / "lexicon.json",
                       exp.lexicon.to_json().dump(2) + "\n");

    const RankingSample sample =
        exp.samples.empty() ? detail::placeholder_sample() : exp.samples[0];
    std::vector<RankingPrompt> prompts;
    prompts.reserve(roles.size());
    std::string prompts_jsonl;
    for (const auto& r : roles) {
        PromptContent content{r, sample.query, sample.doc_texts(),
                              sample.doc_labels()};
        prompts.push_back(build_prompt(*ctx.tokenizer, ctx.mode, content,
                                       ctx.order, ctx.prompt_opts));
        prompts_jsonl += prompts.back().to_json().dump() + "\n";
    }
    detail::write_file(dir / "prompts.jsonl", prompts_jsonl);

    AlignmentReport report = check_token_alignment(prompts);
    detail::write_file(dir / "alignment_report.json",
                       report.to_json().dump(2) + "\n");

    detail::write_manifest(exp, "gen-prompts", dir, timer,
                           {{"n_roles", roles.size()},
                            {"n_pairs", exp.pairs.size()},
                            {"alignment_pass", report.pass}});
    return 0;
}

// Role-prompt sweep: nDCG@k for every role (positive then negative, up to
// role_limit per polarity) plus the no-role baseline.
inline int cmd_rank(const Experiment& exp) {
    detail::CommandTimer timer;
    if (exp.dataset.empty())
        throw ExperimentError("cmd_rank needs a dataset");
    const auto dir =
        std::filesystem::path(exp.config.resolved_out_dir()) / "rank";
    PatchContext ctx = exp.context();

    std::vector<RolePrompt> roles;
    for (Polarity p : {Polarity::Positive, Polarity::Negative}) {
        auto polarity_roles = enumerate_roles(exp.lexicon, p);
        const std::size_t limit = exp.config.role_limit == 0
                                      ? polarity_roles.size()
                                      : std::min(exp.config.role_limit,
                                                 polarity_roles.size());
        for (std::size_t i = 0; i < limit; ++i)
            roles.push_back(std::move(polarity_roles[i]));
    }

    std::vector<RoleEvalRow> rows = sweep_role_prompts(
        ctx, roles, exp.dataset, exp.qrels, exp.config.ndcg_k);

    std::string csv = "# config_hash=" + exp.config_hash + "\n";
    csv += "role,polarity,adjective,modal,adverb,ndcg\n";
    for (const auto& row : rows) {
        if (row.role)
            csv += "\"" + row.role->text + "\"," +
                   to_string(row.role->polarity) + "," + row.role->adjective +
                   "," + row.role->modal + "," + row.role->adverb + "," +
                   ScoreGrid::format_value(row.eval.mean) + "\n";
        else
            csv += "baseline,,,,," + ScoreGrid::format_value(row.eval.mean) +
                   "\n";
    }
    detail::write_file(dir / "role_sweep.csv", csv);

    RoleSweepSummary summary = summarize_role_sweep(rows);
    nlohmann::json sj{{"baseline", summary.baseline},
                      {"positive",
                       {{"min", summary.positive_min},
                        {"max", summary.positive_max},
                        {"mean", summary.positive_mean}}},
                      {"negative",
                       {{"min", summary.negative_min},
                        {"max", summary.negative_max},
                        {"mean", summary.negative_mean}}},
                      {"config_hash", exp.config_hash}};
    detail::write_file(dir / "summary.json", sj.dump(2) + "\n");

    // Baseline run file in TREC format.
    std::vector<RunList> baseline_runs;
    for (const auto& q : exp.dataset)
        baseline_runs.push_back(rerank_pointwise(
            ctx, std::nullopt, q.query_id, q.query, q.docs,
            exp.config.ndcg_k));
    detail::write_file(dir / "baseline_run.trec",
                       run_to_trec(baseline_runs, "rolepatch-baseline"));

    detail::write_manifest(exp, "rank", dir, timer,
                           {{"n_roles", rows.size() - 1}});
    return 0;
}

namespace detail {

inline void write_sweep_outputs(const Experiment& exp,
                                const std::filesystem::path& dir,
                                const SweepResult& result) {
    write_file(dir / "grid.csv", result.grid.to_csv(exp.config_hash));
    write_file(dir / "grid.json",
               result.grid.sidecar(exp.config_hash).dump(2) + "\n");
    write_file(dir / "records.jsonl", records_to_jsonl(result.records));
    write_file(dir / "heatmap.svg",
               render_heatmap_svg(result.grid, exp.config.heatmap_range));
}

} // namespace detail

// Residual stream (or attention/MLP output) patching grid over layers x
// prompt segments.
inline int cmd_patch_sweep(const Experiment& exp) {
    detail::CommandTimer timer;
    if (exp.samples.empty())
        throw ExperimentError("cmd_patch_sweep needs a dataset");
    const auto dir =
        std::filesystem::path(exp.config.resolved_out_dir()) / "patch-sweep";
    PatchContext ctx = exp.context();
    SweepResult result =
        sweep_segments(ctx, exp.pairs, exp.samples,
                       detail::parse_sweep_site(exp.config.sweep_site));
    detail::write_sweep_outputs(exp, dir, result);
    detail::write_manifest(exp, "patch-sweep", dir, timer,
                           {{"site", exp.config.sweep_site},
                            {"exclusions", result.grid.total_exclusions()}});
    return 0;
}

// Per-head patching grid at one segment's positions, plus top-k selections
// for every configured k.
inline int cmd_head_sweep(const Experiment& exp) {
    detail::CommandTimer timer;
    if (exp.samples.empty())
        throw ExperimentError("cmd_head_sweep needs a dataset");
    const auto dir =
        std::filesystem::path(exp.config.resolved_out_dir()) / "head-sweep";
    PatchContext ctx = exp.context();
    const Segment segment = parse_segment(exp.config.head_segment);
    SweepResult result = sweep_heads(ctx, exp.pairs, exp.samples, segment);
    detail::write_sweep_outputs(exp, dir, result);

    nlohmann::json selections = nlohmann::json::array();
    for (int k : exp.config.k_values) {
        const int capped = std::min<int>(
            k, static_cast<int>(result.grid.rows() * result.grid.cols()));
        HeadSelection sel = select_top_heads(result.grid, capped,
                                             exp.config.head_segment);
        for (const auto& h : sel.heads)
            selections.push_back({{"segment", sel.segment},
                                  {"k", sel.k},
                                  {"layer", h.layer},
                                  {"head", h.head},
                                  {"score", h.score}});
    }
    detail::write_file(dir / "selections.json", selections.dump(2) + "\n");

    detail::write_manifest(exp, "head-sweep", dir, timer,
                           {{"segment", exp.config.head_segment},
                            {"exclusions", result.grid.total_exclusions()}});
    return 0;
}

// Residual patching restricted to the role's slot tokens.
inline int cmd_slot_sweep(const Experiment& exp) {
    detail::CommandTimer timer;
    if (exp.samples.empty())
        throw ExperimentError("cmd_slot_sweep needs a dataset");
    const auto dir =
        std::filesystem::path(exp.config.resolved_out_dir()) / "slot-sweep";
    PatchContext ctx = exp.context();
    SweepResult result = sweep_slot_tokens(ctx, exp.pairs, exp.samples);
    detail::write_sweep_outputs(exp, dir, result);
    detail::write_manifest(exp, "slot-sweep", dir, timer,
                           {{"exclusions", result.grid.total_exclusions()}});
    return 0;
}

// Head ablation: per-segment top-k selections from fresh head sweeps, zero
// and/or mean ablation, correct-score report, optional reranking impact.
inline int cmd_ablate(const Experiment& exp, bool use_zero, bool use_mean) {
    detail::CommandTimer timer;
    if (exp.samples.empty())
        throw ExperimentError("cmd_ablate needs a dataset");
    const auto dir =
        std::filesystem::path(exp.config.resolved_out_dir()) / "ablate";
    PatchContext ctx = exp.context();

    // Head grids per segment drive the selections.
    std::vector<Segment> segments = default_sweep_segments(ctx.mode);
    std::map<std::string, ScoreGrid> grids;
    for (Segment s : segments) {
        SweepResult r = sweep_heads(ctx, exp.pairs, exp.samples, s);
        grids[to_string(s)] = std::move(r.grid);
    }

    std::vector<HeadSelection> selections;
    const int head_count =
        exp.model->config.n_layers * exp.model->config.n_heads;
    for (int k : exp.config.k_values) {
        const int capped = std::min(k, head_count);
        std::vector<HeadSelection> per_segment;
        for (Segment s : segments)
            per_segment.push_back(
                select_top_heads(grids[to_string(s)], capped, to_string(s)));
        for (auto& sel : per_segment) selections.push_back(sel);
        selections.push_back(pool_selections(per_segment, capped));
    }

    nlohmann::json sel_json = nlohmann::json::array();
    for (const auto& sel : selections)
        for (const auto& h : sel.heads)
            sel_json.push_back({{"segment", sel.segment},
                                {"k", sel.k},
                                {"layer", h.layer},
                                {"head", h.head},
                                {"score", h.score}});
    detail::write_file(dir / "selections.json", sel_json.dump(2) + "\n");

    // Reference means over the evaluation set's unablated runs.
    HeadMeans means;
    std::vector<AblationMode> modes;
    if (use_zero) modes.push_back({AblationKind::Zero, nullptr});
    if (use_mean) {
        std::vector<std::vector<int>> reference;
        for (const auto& sample : exp.samples) {
            PromptContent content{exp.pairs[0].clean, sample.query,
                                  sample.doc_texts(), sample.doc_labels()};
            reference.push_back(build_prompt(*ctx.tokenizer, ctx.mode, content,
                                             ctx.order, ctx.prompt_opts)
                                    .token_ids);
        }
        means = compute_head_means(*exp.model, reference, ctx.workers);
        modes.push_back({AblationKind::Mean, &means});
    }
    if (modes.empty()) throw ExperimentError("choose --zero and/or --mean");

    // Roles under test: the first counter pair's clean and corrupted roles.
    std::vector<RolePrompt> roles{exp.pairs[0].clean, exp.pairs[0].corrupted};
    AblationReport report = ablation_report(ctx, exp.samples, selections,
                                            modes, roles);
    detail::write_file(dir / "report.csv", report.to_csv(exp.config_hash));
    std::string records;
    for (const auto& r : report.records) records += r.to_json().dump() + "\n";
    detail::write_file(dir / "records.jsonl", records);

    if (exp.config.ablate_rank_eval) {
        // Reranking impact: nDCG with and without each ablation.
        std::string csv = "# config_hash=" + exp.config_hash + "\n";
        csv += "segment,k,mode,polarity,baseline_ndcg,ablated_ndcg,delta\n";
        for (const auto& role : roles) {
            std::vector<RunList> base_runs;
            for (const auto& q : exp.dataset)
                base_runs.push_back(rerank_pointwise(ctx, role, q.query_id,
                                                     q.query, q.docs,
                                                     exp.config.ndcg_k));
            const double base =
                evaluate_runs(base_runs, exp.qrels, exp.config.ndcg_k).mean;
            for (const auto& sel : selections)
                for (const auto& mode : modes) {
                    AblationMap map =
                        build_ablation_map(*exp.model, sel, mode);
                    std::vector<RunList> runs;
                    for (const auto& q : exp.dataset)
                        runs.push_back(rerank_pointwise(
                            ctx, role, q.query_id, q.query, q.docs,
                            exp.config.ndcg_k, &map));
                    const double ablated =
                        evaluate_runs(runs, exp.qrels, exp.config.ndcg_k).mean;
                    csv += std::string(sel.segment) + "," +
                           std::to_string(sel.k) + "," + to_string(mode.kind) +
                           "," + to_string(role.polarity) + "," +
                           ScoreGrid::format_value(base) + "," +
                           ScoreGrid::format_value(ablated) + "," +
                           ScoreGrid::format_value(ablated - base) + "\n";
                }
        }
        detail::write_file(dir / "ndcg_impact.csv", csv);
    }

    detail::write_manifest(exp, "ablate", dir, timer,
                           {{"n_selections", selections.size()},
                            {"modes", modes.size()}});
    return 0;
}

} // namespace rolepatch
