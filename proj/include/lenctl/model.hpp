#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lenctl/encoding.hpp"
#include "lenctl/tape.hpp"

namespace lenctl {

struct ModelConfig {
    int vocab_size = 512;
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 512;
    int max_seq = 512;
    double rope_base = 10000.0;

    int head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (vocab_size < 2) throw std::invalid_argument("model config: vocab_size too small");
        if (n_heads < 1 || n_layers < 1 || d_ff < 1 || max_seq < 1)
            throw std::invalid_argument("model config: sizes must be positive");
        if (d_model % (2 * n_heads) != 0)
            throw std::invalid_argument("model config: d_model must be divisible by 2*n_heads");
    }
};

// All trainable weights, addressable by name for the optimizer and the
// checkpoint writer. Weight matrices are row-major [out, in].
template <class Real>
struct Parameters {
    struct Layer {
        Tensor<Real> ln1_g, ln1_b;
        Tensor<Real> wq, wk, wv, wo;
        Tensor<Real> ln2_g, ln2_b;
        Tensor<Real> w_ff1, b_ff1, w_ff2, b_ff2;
    };

    ModelConfig config;
    Tensor<Real> tok_emb; // [V, d]
    std::vector<Layer> layers;
    Tensor<Real> ln_f_g, ln_f_b;
    Tensor<Real> w_out; // [V, d], untied

    explicit Parameters(const ModelConfig& cfg) : config(cfg) {
        cfg.validate();
        const int d = cfg.d_model;
        tok_emb = Tensor<Real>({cfg.vocab_size, d});
        layers.resize(cfg.n_layers);
        for (auto& l : layers) {
            l.ln1_g = Tensor<Real>({d}, Real(1));
            l.ln1_b = Tensor<Real>({d});
            l.wq = Tensor<Real>({d, d});
            l.wk = Tensor<Real>({d, d});
            l.wv = Tensor<Real>({d, d});
            l.wo = Tensor<Real>({d, d});
            l.ln2_g = Tensor<Real>({d}, Real(1));
            l.ln2_b = Tensor<Real>({d});
            l.w_ff1 = Tensor<Real>({cfg.d_ff, d});
            l.b_ff1 = Tensor<Real>({cfg.d_ff});
            l.w_ff2 = Tensor<Real>({d, cfg.d_ff});
            l.b_ff2 = Tensor<Real>({d});
        }
        ln_f_g = Tensor<Real>({d}, Real(1));
        ln_f_b = Tensor<Real>({d});
        w_out = Tensor<Real>({cfg.vocab_size, d});
    }

    void init_weights(std::mt19937_64& rng, double std_dev = 0.02) {
        std::normal_distribution<double> nd(0.0, std_dev);
        auto fill = [&](Tensor<Real>& t) {
            for (Real& v : t.data) v = static_cast<Real>(nd(rng));
        };
        fill(tok_emb);
        for (auto& l : layers) {
            fill(l.wq);
            fill(l.wk);
            fill(l.wv);
            fill(l.wo);
            fill(l.w_ff1);
            fill(l.w_ff2);
        }
        fill(w_out);
    }

    // Stable enumeration order; checkpointing and the optimizer both rely on it.
    std::vector<std::pair<std::string, Tensor<Real>*>> named_tensors() {
        std::vector<std::pair<std::string, Tensor<Real>*>> out;
        out.emplace_back("tok_emb", &tok_emb);
        for (size_t i = 0; i < layers.size(); ++i) {
            const std::string p = "layer" + std::to_string(i) + ".";
            auto& l = layers[i];
            out.emplace_back(p + "ln1_g", &l.ln1_g);
            out.emplace_back(p + "ln1_b", &l.ln1_b);
            out.emplace_back(p + "wq", &l.wq);
            out.emplace_back(p + "wk", &l.wk);
            out.emplace_back(p + "wv", &l.wv);
            out.emplace_back(p + "wo", &l.wo);
            out.emplace_back(p + "ln2_g", &l.ln2_g);
            out.emplace_back(p + "ln2_b", &l.ln2_b);
            out.emplace_back(p + "w_ff1", &l.w_ff1);
            out.emplace_back(p + "b_ff1", &l.b_ff1);
            out.emplace_back(p + "w_ff2", &l.w_ff2);
            out.emplace_back(p + "b_ff2", &l.b_ff2);
        }
        out.emplace_back("ln_f_g", &ln_f_g);
        out.emplace_back("ln_f_b", &ln_f_b);
        out.emplace_back("w_out", &w_out);
        return out;
    }

    size_t num_params() const {
        size_t n = tok_emb.numel() + ln_f_g.numel() + ln_f_b.numel() + w_out.numel();
        for (const auto& l : layers)
            n += l.ln1_g.numel() + l.ln1_b.numel() + l.wq.numel() + l.wk.numel() +
                 l.wv.numel() + l.wo.numel() + l.ln2_g.numel() + l.ln2_b.numel() +
                 l.w_ff1.numel() + l.b_ff1.numel() + l.w_ff2.numel() + l.b_ff2.numel();
        return n;
    }
};

// Ids of the parameter leaves registered on a tape for one forward pass;
// used to pull gradients back out after backward().
template <class Real>
struct GraphBindings {
    std::vector<std::pair<Tensor<Real>*, typename Tape<Real>::Id>> params;
    typename Tape<Real>::Id logits = -1;
};

// Builds the full-sequence forward graph: token embedding, scaled countdown
// injection, n_layers of pre-norm RoPE attention + feed-forward blocks,
// final norm, untied output projection. Returns next-token logits at every
// position.
template <class Real>
GraphBindings<Real> forward_graph(Tape<Real>& tape, Parameters<Real>& params,
                                  const std::vector<int>& tokens, const CountdownPlan& plan,
                                  bool track_param_grads = true) {
    const ModelConfig& cfg = params.config;
    const int L = static_cast<int>(tokens.size());
    if (L < 1) throw std::invalid_argument("forward: empty token sequence");
    if (L > cfg.max_seq) throw std::invalid_argument("length error: sequence exceeds max_seq");
    if (plan.L != L) throw std::invalid_argument("forward: plan length does not match tokens");
    for (int t : tokens)
        if (t < 0 || t >= cfg.vocab_size)
            throw std::invalid_argument("vocabulary error: token id out of range");
    plan.validate();

    GraphBindings<Real> gb;
    auto bind = [&](Tensor<Real>& t) {
        auto id = tape.input(t, track_param_grads);
        gb.params.emplace_back(&t, id);
        return id;
    };

    const auto emb_id = bind(params.tok_emb);
    auto x = tape.embedding(emb_id, tokens);

    if (plan.mode != EncodingMode::NONE) {
        const MatrixD rd = build_encoding_matrix(plan, cfg.d_model);
        std::vector<Real> r(rd.data.size());
        for (size_t i = 0; i < r.size(); ++i) r[i] = static_cast<Real>(rd.data[i]);
        auto r_id = tape.constant({plan.L, cfg.d_model}, r.data());
        x = tape.inject_scaled(x, r_id);
    }

    std::vector<int> positions(static_cast<size_t>(L));
    for (int i = 0; i < L; ++i) positions[i] = i;

    for (auto& l : params.layers) {
        auto h = tape.layer_norm(x, bind(l.ln1_g), bind(l.ln1_b));
        auto q = tape.rope(tape.matmul_nt(h, bind(l.wq)), positions, cfg.n_heads, cfg.rope_base);
        auto k = tape.rope(tape.matmul_nt(h, bind(l.wk)), positions, cfg.n_heads, cfg.rope_base);
        auto v = tape.matmul_nt(h, bind(l.wv));
        auto attn = tape.causal_attention(q, k, v, cfg.n_heads);
        x = tape.add(x, tape.matmul_nt(attn, bind(l.wo)));

        auto h2 = tape.layer_norm(x, bind(l.ln2_g), bind(l.ln2_b));
        auto f = tape.gelu(tape.add_bias(tape.matmul_nt(h2, bind(l.w_ff1)), bind(l.b_ff1)));
        x = tape.add(x, tape.add_bias(tape.matmul_nt(f, bind(l.w_ff2)), bind(l.b_ff2)));
    }

    auto xf = tape.layer_norm(x, bind(params.ln_f_g), bind(params.ln_f_b));
    gb.logits = tape.matmul_nt(xf, bind(params.w_out));
    return gb;
}

// Forward pass returning plain logit values, for callers that do not train.
template <class Real>
Tensor<Real> forward(Parameters<Real>& params, const std::vector<int>& tokens,
                     const CountdownPlan& plan) {
    Tape<Real> tape;
    auto gb = forward_graph(tape, params, tokens, plan, /*track_param_grads=*/false);
    Tensor<Real> out;
    out.shape = {static_cast<int>(tokens.size()), params.config.vocab_size};
    auto v = tape.value(gb.logits);
    out.data.assign(v.begin(), v.end());
    return out;
}

} // namespace lenctl
