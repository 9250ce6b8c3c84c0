// The canonical toy experiment shared by tests, fixtures and the acceptance
// suite. Any change here invalidates the frozen grids under
// tests/fixtures/toy/ — regenerate them with make_fixtures.
#pragma once

#include <string>

#include "rolepatch/experiment.hpp"

namespace toyexp {

inline rolepatch::ExperimentConfig config(const std::string& fixtures_dir) {
    rolepatch::ExperimentConfig cfg;
    cfg.model_type = "toy";
    cfg.toy_config.n_layers = 2;
    cfg.toy_config.n_heads = 2;
    cfg.toy_config.d_model = 16;
    cfg.toy_config.d_head = 8;
    cfg.toy_config.d_mlp = 32;
    cfg.toy_config.vocab_size = 64; // overridden by the derived vocab
    cfg.toy_config.max_seq = 128;
    cfg.toy_seed = 42;
    cfg.tokenizer_type = "whitespace";
    cfg.dataset_path = fixtures_dir + "/toy/dataset.jsonl";
    cfg.sample_count = 8;
    cfg.mode = rolepatch::Mode::Pointwise;
    cfg.n_pairs = 10;
    cfg.pair_seed = 1;
    cfg.data_seed = 2;
    cfg.workers = 1;
    return cfg;
}

} // namespace toyexp
