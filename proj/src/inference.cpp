#include "lenctl/inference.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "lenctl/data.hpp"
#include "lenctl/rng.hpp"
#include "lenctl/threading.hpp"

namespace lenctl {

const char* to_string(RequestMode m) {
    switch (m) {
        case RequestMode::LDPE: return "ldpe";
        case RequestMode::ORPE: return "orpe";
        case RequestMode::NONE: return "none";
        case RequestMode::MNTPP_LIMIT: return "mntpp-limit";
    }
    return "none";
}

RequestMode request_mode_from_string(const std::string& s) {
    if (s == "ldpe") return RequestMode::LDPE;
    if (s == "orpe") return RequestMode::ORPE;
    if (s == "none") return RequestMode::NONE;
    if (s == "mntpp-limit") return RequestMode::MNTPP_LIMIT;
    throw std::invalid_argument("unknown request mode: " + s);
}

int GenerationRequest::resolved_hard_cap() const {
    if (hard_cap > 0) return hard_cap;
    return static_cast<int>(std::ceil(1.5 * target_length));
}

int step_encoding_index(int target_length, int j) {
    if (j < 1) throw std::invalid_argument("step index must be >= 1");
    const int idx = target_length - j + 1;
    return idx < 1 ? 1 : idx;
}

namespace {

// Per-layer key/value rows accumulated over the generation.
struct KvCache {
    std::vector<std::vector<float>> k, v; // [layers][len * d_model]
    int len = 0;
};

void layer_norm_row(const float* x, const float* g, const float* b, float* out, int n) {
    float mean = 0.0f;
    for (int j = 0; j < n; ++j) mean += x[j];
    mean /= n;
    float var = 0.0f;
    for (int j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= n;
    const float inv = 1.0f / std::sqrt(var + 1e-5f);
    for (int j = 0; j < n; ++j) out[j] = (x[j] - mean) * inv * g[j] + b[j];
}

// y[o] = dot(w[o,:], x)
void linear_row(const float* w, const float* x, float* y, int out_dim, int in_dim) {
    parallel_for(out_dim, [=](int o0, int o1) {
        for (int o = o0; o < o1; ++o) {
            const float* wr = w + static_cast<size_t>(o) * in_dim;
            float acc = 0.0f;
            for (int i = 0; i < in_dim; ++i) acc += wr[i] * x[i];
            y[o] = acc;
        }
    });
}

// Single-position forward: feeds one embedded row through every layer,
// appending this position's K/V to the cache, and returns the logits row.
std::vector<float> step_forward(Parameters<float>& params, const std::vector<float>& embedded,
                                int position, KvCache& cache) {
    const ModelConfig& cfg = params.config;
    const int d = cfg.d_model;
    const int heads = cfg.n_heads;
    const int dh = cfg.head_dim();

    std::vector<float> x = embedded;
    std::vector<float> h(d), q(d), k(d), v(d), attn(d), proj(d);
    std::vector<float> ff(static_cast<size_t>(cfg.d_ff));

    for (size_t li = 0; li < params.layers.size(); ++li) {
        auto& l = params.layers[li];
        layer_norm_row(x.data(), l.ln1_g.data.data(), l.ln1_b.data.data(), h.data(), d);
        linear_row(l.wq.data.data(), h.data(), q.data(), d, d);
        linear_row(l.wk.data.data(), h.data(), k.data(), d, d);
        linear_row(l.wv.data.data(), h.data(), v.data(), d, d);
        for (int hd = 0; hd < heads; ++hd) {
            rope_rotate(std::span<float>(q.data() + hd * dh, dh), position, cfg.rope_base);
            rope_rotate(std::span<float>(k.data() + hd * dh, dh), position, cfg.rope_base);
        }
        auto& ck = cache.k[li];
        auto& cv = cache.v[li];
        ck.insert(ck.end(), k.begin(), k.end());
        cv.insert(cv.end(), v.begin(), v.end());
        const int ctx = cache.len + 1;

        const float scl = 1.0f / std::sqrt(static_cast<float>(dh));
        std::vector<float> scores(static_cast<size_t>(ctx));
        for (int hd = 0; hd < heads; ++hd) {
            const float* qh = q.data() + hd * dh;
            for (int t = 0; t < ctx; ++t) {
                const float* kh = ck.data() + static_cast<size_t>(t) * d + hd * dh;
                float acc = 0.0f;
                for (int j = 0; j < dh; ++j) acc += qh[j] * kh[j];
                scores[t] = acc * scl;
            }
            float mx = scores[0];
            for (int t = 1; t < ctx; ++t) mx = std::max(mx, scores[t]);
            float sum = 0.0f;
            for (int t = 0; t < ctx; ++t) {
                scores[t] = std::exp(scores[t] - mx);
                sum += scores[t];
            }
            const float inv = 1.0f / sum;
            float* ah = attn.data() + hd * dh;
            std::fill(ah, ah + dh, 0.0f);
            for (int t = 0; t < ctx; ++t) {
                const float p = scores[t] * inv;
                const float* vh = cv.data() + static_cast<size_t>(t) * d + hd * dh;
                for (int j = 0; j < dh; ++j) ah[j] += p * vh[j];
            }
        }
        linear_row(l.wo.data.data(), attn.data(), proj.data(), d, d);
        for (int j = 0; j < d; ++j) x[j] += proj[j];

        layer_norm_row(x.data(), l.ln2_g.data.data(), l.ln2_b.data.data(), h.data(), d);
        linear_row(l.w_ff1.data.data(), h.data(), ff.data(), cfg.d_ff, d);
        for (int j = 0; j < cfg.d_ff; ++j) ff[j] = gelu_scalar(ff[j] + l.b_ff1.data[j]);
        linear_row(l.w_ff2.data.data(), ff.data(), proj.data(), d, cfg.d_ff);
        for (int j = 0; j < d; ++j) x[j] += proj[j] + l.b_ff2.data[j];
    }
    cache.len += 1;

    layer_norm_row(x.data(), params.ln_f_g.data.data(), params.ln_f_b.data.data(), h.data(), d);
    std::vector<float> logits(static_cast<size_t>(cfg.vocab_size));
    linear_row(params.w_out.data.data(), h.data(), logits.data(), cfg.vocab_size, d);
    return logits;
}

int select_token(const std::vector<float>& logits, double temperature, std::mt19937_64& rng) {
    if (temperature <= 0.0) {
        int best = 0;
        for (size_t i = 1; i < logits.size(); ++i)
            if (logits[i] > logits[best]) best = static_cast<int>(i);
        return best;
    }
    std::vector<double> p(logits.size());
    double mx = logits[0];
    for (float l : logits) mx = std::max(mx, static_cast<double>(l));
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - mx) / temperature);
        sum += p[i];
    }
    std::uniform_real_distribution<double> u(0.0, sum);
    double r = u(rng);
    for (size_t i = 0; i < p.size(); ++i) {
        r -= p[i];
        if (r <= 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;
}

double sq_norm(const std::vector<float>& v) {
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * x;
    return s;
}

} // namespace

GenerationResult generate(Parameters<float>& params, const GenerationRequest& req) {
    const ModelConfig& cfg = params.config;
    const int d = cfg.d_model;
    const int n = static_cast<int>(req.prompt.size());
    if (n < 1) throw std::invalid_argument("generate: empty prompt");
    if (req.target_length < 1) throw std::invalid_argument("generate: target length must be >= 1");
    for (int t : req.prompt)
        if (t < 0 || t >= cfg.vocab_size)
            throw std::invalid_argument("vocabulary error: prompt token out of range");
    if (n + req.target_length > cfg.max_seq)
        throw std::invalid_argument("length error: prompt plus target exceeds max_seq");

    int cap = req.resolved_hard_cap();
    if (cap < req.target_length)
        throw std::invalid_argument("generate: hard cap below target length");
    cap = std::min(cap, cfg.max_seq - n); // never outrun the context window

    const bool inject = req.mode != RequestMode::NONE;
    const EncodingMode enc_mode = req.mode == RequestMode::ORPE ? EncodingMode::ORPE
                                                                : EncodingMode::LDPE;
    const int plan_len = n + req.target_length;

    GenerationResult res;
    auto rng = make_rng(req.seed, Stream::decode);

    // Countdown indices over the planned sequence; generation may overrun
    // the plan, clamping at index 1.
    std::vector<std::optional<long long>> plan_idx;
    if (inject) {
        CountdownPlan plan{enc_mode, n, plan_len, 0};
        plan.validate();
        plan_idx = countdown_indices(plan);
    }

    auto embed_row = [&](int token) {
        std::vector<float> row(static_cast<size_t>(d));
        const float* src = params.tok_emb.data.data() + static_cast<size_t>(token) * d;
        std::copy_n(src, d, row.data());
        return row;
    };
    auto encoding_row = [&](long long idx) {
        ++res.encoding_calls;
        const auto rd = sinusoidal_row(idx, d);
        std::vector<float> row(static_cast<size_t>(d));
        for (int j = 0; j < d; ++j) row[j] = static_cast<float>(rd[j]);
        return row;
    };
    auto plan_index_at = [&](int pos1) -> std::optional<long long> {
        // 1-based plan position; past the plan end the countdown clamps at 1.
        if (!inject) return std::nullopt;
        if (pos1 <= plan_len) return plan_idx[pos1 - 1];
        return 1;
    };

    // Frozen scale factor from the prompt rows (see header). Running norms
    // support the per-step policy.
    std::vector<std::vector<float>> prompt_emb(static_cast<size_t>(n));
    double e_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        prompt_emb[i] = embed_row(req.prompt[i]);
        e_sq += sq_norm(prompt_emb[i]);
    }
    if (inject && e_sq == 0.0)
        throw std::invalid_argument("degenerate embedding: zero Frobenius norm");

    double r_sq_prompt = 0.0;
    std::vector<std::vector<float>> prompt_enc(static_cast<size_t>(n));
    if (inject) {
        for (int i = 0; i < n; ++i) {
            const auto idx = plan_index_at(i + 1);
            if (!idx) continue;
            prompt_enc[i] = encoding_row(*idx);
            r_sq_prompt += sq_norm(prompt_enc[i]);
        }
    }

    double frozen_factor = 0.0;
    if (inject) {
        if (enc_mode == EncodingMode::LDPE) {
            frozen_factor = std::sqrt(e_sq / r_sq_prompt);
        } else {
            // Full-plan encoding norm is exact: d/2 per encoded row.
            const double r_sq_full = (plan_len - n) * (d / 2.0);
            const double e_sq_projected = e_sq * (static_cast<double>(plan_len) / n);
            frozen_factor = std::sqrt(e_sq_projected / r_sq_full);
        }
    }
    res.scale_factor = frozen_factor;

    double run_e_sq = e_sq;       // embeddings seen so far
    double run_r_sq = r_sq_prompt; // encoding rows injected so far
    auto current_factor = [&]() {
        if (!req.per_step_rescale) return frozen_factor;
        if (run_r_sq == 0.0 || run_e_sq == 0.0) return frozen_factor;
        return std::sqrt(run_e_sq / run_r_sq);
    };

    KvCache cache;
    cache.k.assign(params.layers.size(), {});
    cache.v.assign(params.layers.size(), {});

    std::vector<float> logits;
    for (int i = 0; i < n; ++i) {
        std::vector<float> row = prompt_emb[i];
        if (inject && !prompt_enc[i].empty()) {
            const double f = current_factor();
            for (int j = 0; j < d; ++j) row[j] += static_cast<float>(f * prompt_enc[i][j]);
        }
        logits = step_forward(params, row, i, cache);
    }

    for (int j = 1; j <= cap; ++j) {
        const int token = select_token(logits, req.temperature, rng);
        res.response.push_back(token);
        if (inject) res.encoding_trace.push_back(*plan_index_at(n + j));
        res.realized_length = j;
        if (token == vocab::kEos) return res;
        if (j == cap) {
            res.truncated = true;
            return res;
        }
        // Feed the accepted token at plan position n + j.
        std::vector<float> row = embed_row(token);
        run_e_sq += sq_norm(row);
        if (inject) {
            const auto idx = plan_index_at(n + j);
            const auto enc = encoding_row(*idx);
            run_r_sq += sq_norm(enc);
            const double f = current_factor();
            for (int t = 0; t < d; ++t) row[t] += static_cast<float>(f * enc[t]);
        }
        logits = step_forward(params, row, n + j - 1, cache);
    }
    return res;
}

std::vector<GenerationRequest> load_requests(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("requests: cannot open " + path);
    std::vector<GenerationRequest> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        GenerationRequest r;
        r.prompt = j.at("prompt").get<std::vector<int>>();
        r.target_length = j.at("target_length").get<int>();
        r.mode = request_mode_from_string(j.value("mode", "ldpe"));
        r.temperature = j.value("temperature", 0.0);
        r.hard_cap = j.value("hard_cap", 0);
        r.per_step_rescale = j.value("per_step_rescale", false);
        r.seed = j.value("seed", uint64_t{0});
        out.push_back(std::move(r));
    }
    return out;
}

void save_results(const std::string& path, const std::vector<GenerationRequest>& requests,
                  const std::vector<GenerationResult>& results) {
    if (requests.size() != results.size())
        throw std::invalid_argument("save_results: request/result count mismatch");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("results: cannot open " + path);
    for (size_t i = 0; i < results.size(); ++i) {
        const auto& q = requests[i];
        const auto& r = results[i];
        nlohmann::json j = {{"request",
                             {{"prompt", q.prompt},
                              {"target_length", q.target_length},
                              {"mode", to_string(q.mode)},
                              {"temperature", q.temperature},
                              {"hard_cap", q.hard_cap},
                              {"per_step_rescale", q.per_step_rescale},
                              {"seed", q.seed}}},
                            {"response_tokens", r.response},
                            {"realized_length", r.realized_length},
                            {"truncated", r.truncated},
                            {"scale_factor", r.scale_factor}};
        os << j.dump() << '\n';
    }
}

} // namespace lenctl
