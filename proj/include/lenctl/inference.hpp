#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lenctl/encoding.hpp"
#include "lenctl/model.hpp"

namespace lenctl {

// Countdown-aware generation request. target_length counts response tokens
// including EOS. MNTPP_LIMIT decodes exactly like LDPE with target_length
// acting as the token limit.
enum class RequestMode { LDPE, ORPE, NONE, MNTPP_LIMIT };

const char* to_string(RequestMode m);
RequestMode request_mode_from_string(const std::string& s);

struct GenerationRequest {
    std::vector<int> prompt;
    int target_length = 1;
    RequestMode mode = RequestMode::LDPE;
    double temperature = 0.0; // 0 = greedy
    int hard_cap = 0;         // 0 resolves to ceil(1.5 * target_length)
    bool per_step_rescale = false;
    uint64_t seed = 0;

    int resolved_hard_cap() const;
};

struct GenerationResult {
    std::vector<int> response; // includes EOS when one was generated
    int realized_length = 0;
    bool truncated = false;
    double scale_factor = 0.0;
    // Countdown index injected with each generated token, in generation order.
    std::vector<long long> encoding_trace;
    // Instrumentation: sinusoid rows built during this generation. Stays 0
    // for mode NONE.
    int encoding_calls = 0;
};

// Countdown index for 1-based response step j: target - j + 1, clamped at 1
// once the generation overruns the target.
int step_encoding_index(int target_length, int j);

// Autoregressive decoding against a KV cache. Injection uses a scale factor
// frozen at prefill: LDPE takes |E_prompt|_F / |R_prompt|_F; ORPE (whose
// prompt slice of R is zero) projects the prompt embedding norm to the full
// planned length, |E_prompt|_F * sqrt(L/n) / |R_full|_F. per_step_rescale
// instead refreshes the factor from all rows seen so far before each
// injection.
GenerationResult generate(Parameters<float>& params, const GenerationRequest& req);

// JSONL batch io for the generate subcommand.
std::vector<GenerationRequest> load_requests(const std::string& path);
void save_results(const std::string& path, const std::vector<GenerationRequest>& requests,
                  const std::vector<GenerationResult>& results);

} // namespace lenctl
