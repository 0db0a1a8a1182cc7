#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lenctl/data.hpp"
#include "lenctl/model.hpp"

namespace lenctl {

enum class TrainMode { LDPE, ORPE, NONE, PROMPTED, MNTPP };

const char* to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

// The countdown mode a training mode plants into each example. PROMPTED
// trains with no encoding (the target length rides in the prompt) and
// MNTPP trains LDPE countdowns with sampled shifts.
EncodingMode encoding_mode_for(TrainMode m);

struct AdamWHyper {
    float beta1 = 0.9f;
    float beta2 = 0.99f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
};

struct AdamWState {
    std::vector<std::vector<float>> m, v; // one slab per named tensor
    int64_t t = 0;
};

struct TrainRun {
    AdamWHyper opt;
    float lr0 = 3e-4f;
    int grad_accum = 5;
    int epochs = 1;
    TrainMode mode = TrainMode::LDPE;
    CurriculumSchedule schedule; // MNTPP only; total_steps is filled in by train()
    uint64_t seed = 42;
    int checkpoint_every = 0; // 0 = final checkpoint only
    std::string out_dir = ".";
    int log_every = 200; // stdout progress, 0 = silent
};

// lr0 * (1 - t/T); t in [0, T].
float linear_lr(int64_t t, int64_t total_steps, float lr0);

// Forward + backward for one example; adds this example's gradients into the
// parameter grad buffers and returns the masked mean cross entropy.
float loss_step(Parameters<float>& params, const TrainingExample& example);

// Decoupled-weight-decay Adam update with bias correction. Consumes the
// accumulated gradients; the caller zeroes them afterwards. Throws on any
// non-finite gradient, naming the offending tensor.
void adamw_step(Parameters<float>& params, AdamWState& state, const AdamWHyper& hyper,
                float lr);

struct TrainResult {
    std::string checkpoint_path;
    std::string loss_csv_path;
    int64_t steps = 0;
    float final_loss = 0.0f;
};

// One pass (or more) over the dataset with gradient accumulation, shift
// sampling under the curriculum for MNTPP, periodic checkpoints, and a
// step,loss,lr,sigma CSV.
TrainResult train(const TrainRun& run, const std::vector<PromptResponsePair>& dataset,
                  const ModelConfig& model_config);

} // namespace lenctl
