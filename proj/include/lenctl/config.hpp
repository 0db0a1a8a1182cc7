#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lenctl/model.hpp"

namespace lenctl {

// Flat key = value run manifest. Unknown keys are rejected so typos fail
// loudly; '#' starts a comment. CLI flags override file values.
struct RunConfig {
    // paths
    std::string dataset_path = "data/train.jsonl";
    std::string heldout_path = "data/heldout.jsonl";
    std::string checkpoint_dir = "checkpoints";
    std::string report_dir = "reports";

    ModelConfig model;

    // data generation
    int samples = 50000;
    int min_resp = 5;
    int max_resp = 200;
    int heldout_prompts = 20;

    // training
    std::string mode = "ldpe";
    double lr0 = 3e-4;
    double weight_decay = 0.01;
    int grad_accum = 5;
    int epochs = 1;
    int checkpoint_every = 0;
    double sigma0 = 0.1;
    double sigma_max = 256.0;
    int max_shift = 256;

    // evaluation
    int grid_start = 10;
    int grid_stop = 200;
    int grid_step = 10;
    double hard_cap_factor = 1.5;
    double temperature = 0.0;

    uint64_t seed = 42;

    std::vector<int> target_grid() const;
    void set(const std::string& key, const std::string& value);
};

RunConfig load_config(const std::string& path);

// "start:stop:step" -> inclusive grid
std::vector<int> parse_grid(const std::string& spec);

} // namespace lenctl
