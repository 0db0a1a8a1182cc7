#include "lenctl/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "lenctl/checkpoint.hpp"
#include "lenctl/rng.hpp"

namespace lenctl {

const char* to_string(TrainMode m) {
    switch (m) {
        case TrainMode::LDPE: return "ldpe";
        case TrainMode::ORPE: return "orpe";
        case TrainMode::NONE: return "none";
        case TrainMode::PROMPTED: return "prompted";
        case TrainMode::MNTPP: return "mntpp";
    }
    return "none";
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "ldpe") return TrainMode::LDPE;
    if (s == "orpe") return TrainMode::ORPE;
    if (s == "none") return TrainMode::NONE;
    if (s == "prompted") return TrainMode::PROMPTED;
    if (s == "mntpp") return TrainMode::MNTPP;
    throw std::invalid_argument("unknown train mode: " + s);
}

EncodingMode encoding_mode_for(TrainMode m) {
    switch (m) {
        case TrainMode::LDPE:
        case TrainMode::MNTPP: return EncodingMode::LDPE;
        case TrainMode::ORPE: return EncodingMode::ORPE;
        case TrainMode::NONE:
        case TrainMode::PROMPTED: return EncodingMode::NONE;
    }
    return EncodingMode::NONE;
}

float linear_lr(int64_t t, int64_t total_steps, float lr0) {
    if (total_steps < 1) throw std::invalid_argument("linear_lr: total_steps must be >= 1");
    if (t < 0 || t > total_steps) throw std::out_of_range("linear_lr: step outside [0, T]");
    return lr0 * (1.0f - static_cast<float>(static_cast<double>(t) / total_steps));
}

float loss_step(Parameters<float>& params, const TrainingExample& example) {
    const int L = example.L;
    if (static_cast<int>(example.tokens.size()) != L || example.plan.L != L)
        throw std::invalid_argument("loss_step: inconsistent example");
    int active = 0;
    for (uint8_t m : example.loss_mask) active += m ? 1 : 0;
    if (active == 0) throw std::invalid_argument("empty loss: example has no supervised tokens");

    // Next-token alignment: the logits at position p supervise the token at
    // p+1, so targets and mask shift left by one.
    std::vector<int> targets(static_cast<size_t>(L), 0);
    std::vector<uint8_t> mask(static_cast<size_t>(L), 0);
    for (int p = 0; p + 1 < L; ++p) {
        targets[p] = example.tokens[p + 1];
        mask[p] = example.loss_mask[p + 1];
    }

    Tape<float> tape;
    auto gb = forward_graph(tape, params, example.tokens, example.plan);
    auto loss = tape.softmax_cross_entropy(gb.logits, targets, mask);
    tape.backward(loss);

    for (auto& [tensor, id] : gb.params) {
        if (tensor->grad.empty()) tensor->track_grad();
        auto g = tape.grad(id);
        for (size_t i = 0; i < g.size(); ++i) tensor->grad[i] += g[i];
    }
    return tape.value(loss)[0];
}

void adamw_step(Parameters<float>& params, AdamWState& state, const AdamWHyper& hyper,
                float lr) {
    auto tensors = params.named_tensors();
    if (state.m.empty()) {
        state.m.resize(tensors.size());
        state.v.resize(tensors.size());
        for (size_t i = 0; i < tensors.size(); ++i) {
            state.m[i].assign(tensors[i].second->numel(), 0.0f);
            state.v[i].assign(tensors[i].second->numel(), 0.0f);
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(hyper.beta1), state.t);
    const double bc2 = 1.0 - std::pow(static_cast<double>(hyper.beta2), state.t);

    for (size_t ti = 0; ti < tensors.size(); ++ti) {
        auto& [name, tensor] = tensors[ti];
        if (tensor->grad.empty()) tensor->track_grad();
        const size_t n = tensor->numel();
        for (size_t i = 0; i < n; ++i) {
            if (!std::isfinite(tensor->grad[i]))
                throw std::runtime_error("non-finite gradient in '" + name + "' at step " +
                                         std::to_string(state.t));
        }
        float* p = tensor->data.data();
        const float* g = tensor->grad.data();
        float* m = state.m[ti].data();
        float* v = state.v[ti].data();
        const float b1 = hyper.beta1, b2 = hyper.beta2;
        const float inv_bc1 = static_cast<float>(1.0 / bc1);
        const float inv_bc2 = static_cast<float>(1.0 / bc2);
        for (size_t i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            const float mhat = m[i] * inv_bc1;
            const float vhat = v[i] * inv_bc2;
            p[i] -= lr * (mhat / (std::sqrt(vhat) + hyper.eps) + hyper.weight_decay * p[i]);
        }
    }
}

namespace {

void zero_grads(Parameters<float>& params) {
    for (auto& [name, t] : params.named_tensors()) {
        if (t->grad.empty()) t->track_grad();
        t->zero_grad();
    }
}

void scale_grads(Parameters<float>& params, float s) {
    for (auto& [name, t] : params.named_tensors())
        for (float& g : t->grad) g *= s;
}

} // namespace

TrainResult train(const TrainRun& run, const std::vector<PromptResponsePair>& dataset,
                  const ModelConfig& model_config) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    if (run.grad_accum < 1) throw std::invalid_argument("train: grad_accum must be >= 1");
    if (run.lr0 <= 0.0f) throw std::invalid_argument("train: lr0 must be positive");

    std::filesystem::create_directories(run.out_dir);
    const std::string mode_name = to_string(run.mode);
    const std::string ckpt_path = run.out_dir + "/ckpt_" + mode_name + "_final.lbtc";
    const std::string csv_path = run.out_dir + "/loss_" + mode_name + ".csv";

    const int64_t n = static_cast<int64_t>(dataset.size());
    const int64_t steps_per_epoch = (n + run.grad_accum - 1) / run.grad_accum;
    const int64_t total_steps = steps_per_epoch * run.epochs;

    CurriculumSchedule schedule = run.schedule;
    schedule.total_steps = static_cast<int>(total_steps);
    if (run.mode == TrainMode::MNTPP) schedule.validate();

    auto init_rng = make_rng(run.seed, Stream::init);
    Parameters<float> params(model_config);
    params.init_weights(init_rng);
    zero_grads(params);

    AdamWState opt_state;
    auto shift_rng = make_rng(run.seed, Stream::shift);

    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("train: cannot open " + csv_path);
    csv << "step,loss,lr,sigma\n";

    std::vector<size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), size_t{0});

    CheckpointMeta meta;
    meta.config = model_config;
    meta.seed = run.seed;
    meta.mode = mode_name;

    int64_t opt_step = 0;
    float window_loss = 0.0f;
    int window_count = 0;
    float last_loss = 0.0f;

    for (int epoch = 0; epoch < run.epochs; ++epoch) {
        auto shuffle_rng = make_rng(run.seed, Stream::shuffle, static_cast<uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        for (size_t pos = 0; pos < order.size(); ++pos) {
            const auto& pair = dataset[order[pos]];
            double sigma = 0.0;
            int shift = 0;
            if (run.mode == TrainMode::MNTPP) {
                sigma = curriculum_sigma(static_cast<int>(opt_step), schedule);
                shift = sample_shift(sigma, schedule.max_shift, shift_rng);
            }
            const auto example = make_example(pair, encoding_mode_for(run.mode), shift,
                                              run.mode == TrainMode::PROMPTED);
            window_loss += loss_step(params, example);
            ++window_count;

            const bool window_full = window_count == run.grad_accum || pos + 1 == order.size();
            if (!window_full) continue;

            scale_grads(params, 1.0f / static_cast<float>(window_count));
            const float lr = linear_lr(opt_step, total_steps, run.lr0);
            adamw_step(params, opt_state, run.opt, lr);
            zero_grads(params);

            last_loss = window_loss / static_cast<float>(window_count);
            char row[128];
            std::snprintf(row, sizeof(row), "%lld,%.9g,%.9g,%.9g\n",
                          static_cast<long long>(opt_step), last_loss, lr, sigma);
            csv << row;
            if (run.log_every > 0 && opt_step % run.log_every == 0) {
                std::printf("[train %s] step %lld/%lld loss %.4f lr %.2e sigma %.3g\n",
                            mode_name.c_str(), static_cast<long long>(opt_step),
                            static_cast<long long>(total_steps), last_loss, lr, sigma);
                std::fflush(stdout);
            }
            ++opt_step;
            window_loss = 0.0f;
            window_count = 0;

            if (run.checkpoint_every > 0 && opt_step % run.checkpoint_every == 0) {
                meta.step = opt_step;
                save_checkpoint(run.out_dir + "/ckpt_" + mode_name + "_step" +
                                    std::to_string(opt_step) + ".lbtc",
                                params, meta);
            }
        }
    }

    csv.flush();
    if (!csv) throw std::runtime_error("train: write failure on " + csv_path);

    meta.step = opt_step;
    save_checkpoint(ckpt_path, params, meta);

    TrainResult result;
    result.checkpoint_path = ckpt_path;
    result.loss_csv_path = csv_path;
    result.steps = opt_step;
    result.final_loss = last_loss;
    return result;
}

} // namespace lenctl
