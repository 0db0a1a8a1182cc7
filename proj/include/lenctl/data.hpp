#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lenctl/encoding.hpp"

namespace lenctl {

// Fixed vocabulary layout. Content tokens live in [kContentBase, vocab_size);
// both tasks draw their symbols from that range.
namespace vocab {
constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kMotifTask = 3;
constexpr int kEnumTask = 4;
constexpr int kLenMark = 5;
constexpr int kDigit0 = 6; // kDigit0 .. kDigit0+9
constexpr int kContentBase = 16;

inline int content_vocab(int vocab_size) { return vocab_size - kContentBase; }
inline int content_token(int content_id) { return kContentBase + content_id; }
} // namespace vocab

enum class Task { MOTIF, ENUM };

const char* to_string(Task t);
Task task_from_string(const std::string& s);

struct PromptResponsePair {
    std::vector<int> prompt;   // begins with BOS
    std::vector<int> response; // ends with EOS
    Task task = Task::MOTIF;
    uint64_t seed = 0;

    int n() const { return static_cast<int>(prompt.size()); }
    int total_len() const { return static_cast<int>(prompt.size() + response.size()); }
};

struct TrainingExample {
    std::vector<int> tokens; // prompt followed by response
    int n = 0;
    int L = 0;
    CountdownPlan plan;
    std::vector<uint8_t> loss_mask; // false over prompt, true over response incl. EOS
};

// Both tasks continue deterministically from the prompt, so any truncation
// of the response (with an EOS appended) is an equally valid answer. That
// leaves the countdown as the only signal for EOS placement.
//
// MOTIF: prompt [BOS, marker, motif...] with a 1-5 token motif; the response
// repeats the motif cyclically for the drawn number of content tokens, then
// EOS. ENUM: prompt [BOS, marker, s]; the response walks s, s+1, ... modulo
// the content vocabulary, then EOS. The drawn length counts content tokens;
// the EOS on top makes the full response one token longer.
PromptResponsePair gen_sample(Task task, uint64_t seed, int min_resp, int max_resp,
                              int vocab_size);

// The token the deterministic continuation expects at 1-based response
// position j (EOS excluded; valid for any j >= 1).
int expected_response_token(const std::vector<int>& prompt, Task task, int j, int vocab_size);

// Assembles tokens, plan, and loss mask for one optimization step. When
// prompted_baseline is set, the target response length is spliced into the
// prompt as decimal digit tokens after BOS and the plan degrades to NONE.
TrainingExample make_example(const PromptResponsePair& pair, EncodingMode mode, int shift,
                             bool prompted_baseline = false);

// Length-digit prefix used by the prompted baseline: LEN marker plus the
// decimal digits of target_len, inserted right after BOS.
std::vector<int> with_length_prefix(const std::vector<int>& prompt, int target_len);

// JSONL dataset io: one object per line with keys task, seed, prompt, response.
void save_dataset(const std::string& path, const std::vector<PromptResponsePair>& pairs);
std::vector<PromptResponsePair> load_dataset(const std::string& path);

// Mixed-task corpus with per-sample seeds derived from the run seed.
std::vector<PromptResponsePair> generate_corpus(uint64_t seed, int num_samples, int min_resp,
                                                int max_resp, int vocab_size, int max_seq);

// Held-out prompts for evaluation, drawn from a disjoint seed stream.
std::vector<PromptResponsePair> generate_heldout(uint64_t seed, int num_prompts, int vocab_size);

} // namespace lenctl
