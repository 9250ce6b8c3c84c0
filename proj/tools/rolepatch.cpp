// rolepatch: role-play activation patching experiments on a hookable
// decoder-only transformer.
//
//   rolepatch gen-prompts --config cfg.json
//   rolepatch rank        --config cfg.json --role-limit 3
//   rolepatch patch-sweep --config cfg.json --workers 8
//   rolepatch head-sweep  --config cfg.json --segment last_token
//   rolepatch slot-sweep  --config cfg.json
//   rolepatch ablate      --config cfg.json --mean --k 1 --k 10
//   rolepatch selfcheck   --config cfg.json

#include <cstdio>
#include <exception>
#include <string>
#include <typeinfo>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rolepatch/experiment.hpp"
#include "rolepatch/selfcheck.hpp"

namespace {

struct CliOverrides {
    std::string config_path;
    std::string out_dir;
    int workers = -1;
    long long seed = -1;
    std::string mode;
    std::string order;
    std::vector<int> k_values;
    std::string dataset;
    std::string site;
    std::string segment;
    long long role_limit = -1;
    long long samples = -1;
    bool zero = false;
    bool mean = false;
};

void add_common_options(CLI::App* cmd, CliOverrides& o) {
    cmd->add_option("--config", o.config_path, "experiment config JSON");
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_option("--workers", o.workers, "worker thread count");
    cmd->add_option("--seed", o.seed, "prompt-pair seed");
    cmd->add_option("--mode", o.mode, "pointwise | pairwise");
    cmd->add_option("--order", o.order,
                    "comma-separated segment order, instruction last");
    cmd->add_option("--k", o.k_values, "top-k values for head selection");
    cmd->add_option("--dataset", o.dataset, "dataset JSONL path");
    cmd->add_option("--samples", o.samples, "evaluation sample count");
}

rolepatch::ExperimentConfig build_config(const CliOverrides& o) {
    rolepatch::ExperimentConfig cfg;
    if (!o.config_path.empty())
        cfg = rolepatch::ExperimentConfig::load(o.config_path);
    if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
    if (o.workers > 0) cfg.workers = o.workers;
    if (o.seed >= 0) cfg.pair_seed = static_cast<std::uint64_t>(o.seed);
    if (!o.mode.empty())
        cfg.mode = o.mode == "pairwise" ? rolepatch::Mode::Pairwise
                                        : rolepatch::Mode::Pointwise;
    if (!o.order.empty()) {
        cfg.order.clear();
        std::string cur;
        for (char c : o.order + ",") {
            if (c == ',') {
                if (!cur.empty()) cfg.order.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
    }
    if (!o.k_values.empty()) cfg.k_values = o.k_values;
    if (!o.dataset.empty()) cfg.dataset_path = o.dataset;
    if (!o.site.empty()) cfg.sweep_site = o.site;
    if (!o.segment.empty()) cfg.head_segment = o.segment;
    if (o.role_limit >= 0)
        cfg.role_limit = static_cast<std::size_t>(o.role_limit);
    if (o.samples > 0) cfg.sample_count = static_cast<std::size_t>(o.samples);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"role-play activation patching toolkit"};
    app.require_subcommand(1);

    CliOverrides o;
    CLI::App* gen = app.add_subcommand(
        "gen-prompts", "render roles, counter pairs and the alignment report");
    CLI::App* rank = app.add_subcommand(
        "rank", "nDCG sweep over role prompts plus the no-role baseline");
    CLI::App* patch = app.add_subcommand(
        "patch-sweep", "layer x segment activation patching grid");
    CLI::App* head = app.add_subcommand(
        "head-sweep", "layer x head patching grid at one segment");
    CLI::App* slot = app.add_subcommand(
        "slot-sweep", "layer x slot-token patching grid over the role");
    CLI::App* ablate =
        app.add_subcommand("ablate", "top-k head ablation report");
    CLI::App* selfcheck =
        app.add_subcommand("selfcheck", "run the invariant suite");

    for (CLI::App* cmd :
         {gen, rank, patch, head, slot, ablate, selfcheck})
        add_common_options(cmd, o);
    rank->add_option("--role-limit", o.role_limit,
                     "roles per polarity to evaluate (0 = all 300)");
    patch->add_option("--site", o.site, "resid | attn | mlp");
    head->add_option("--segment", o.segment,
                     "segment whose positions are patched");
    ablate->add_flag("--zero", o.zero, "zero ablation");
    ablate->add_flag("--mean", o.mean, "mean ablation");

    CLI11_PARSE(app, argc, argv);

    try {
        rolepatch::ExperimentConfig cfg = build_config(o);
        rolepatch::Experiment exp = rolepatch::load_experiment(cfg);
        if (gen->parsed()) return rolepatch::cmd_gen_prompts(exp);
        if (rank->parsed()) return rolepatch::cmd_rank(exp);
        if (patch->parsed()) return rolepatch::cmd_patch_sweep(exp);
        if (head->parsed()) return rolepatch::cmd_head_sweep(exp);
        if (slot->parsed()) return rolepatch::cmd_slot_sweep(exp);
        if (ablate->parsed()) {
            const bool zero = o.zero || !o.mean; // default: zero only
            return rolepatch::cmd_ablate(exp, zero, o.mean);
        }
        if (selfcheck->parsed()) return rolepatch::cmd_selfcheck(exp);
    } catch (const std::exception& e) {
        nlohmann::json err{{"error", typeid(e).name()},
                           {"message", e.what()}};
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        return 1;
    }
    std::fprintf(stderr, "no subcommand given\n");
    return 2;
}
