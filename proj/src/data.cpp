#include "lenctl/data.hpp"

#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "lenctl/rng.hpp"

namespace lenctl {

const char* to_string(Task t) { return t == Task::MOTIF ? "MOTIF" : "ENUM"; }

Task task_from_string(const std::string& s) {
    if (s == "MOTIF" || s == "motif") return Task::MOTIF;
    if (s == "ENUM" || s == "enum") return Task::ENUM;
    throw std::invalid_argument("unknown task: " + s);
}

PromptResponsePair gen_sample(Task task, uint64_t seed, int min_resp, int max_resp,
                              int vocab_size) {
    if (min_resp < 1 || min_resp > max_resp)
        throw std::invalid_argument("range error: need 1 <= min_resp <= max_resp");
    const int cv = vocab::content_vocab(vocab_size);
    if (cv < 2) throw std::invalid_argument("vocab too small for content tokens");

    auto rng = make_rng(seed, Stream::data, static_cast<uint64_t>(task));
    std::uniform_int_distribution<int> len_dist(min_resp, max_resp);
    std::uniform_int_distribution<int> content_dist(0, cv - 1);

    PromptResponsePair pair;
    pair.task = task;
    pair.seed = seed;
    pair.prompt.push_back(vocab::kBos);

    const int resp_content = len_dist(rng);
    if (task == Task::MOTIF) {
        std::uniform_int_distribution<int> motif_len_dist(1, 5);
        const int mlen = motif_len_dist(rng);
        pair.prompt.push_back(vocab::kMotifTask);
        std::vector<int> motif(static_cast<size_t>(mlen));
        for (int& m : motif) m = vocab::content_token(content_dist(rng));
        pair.prompt.insert(pair.prompt.end(), motif.begin(), motif.end());
        for (int j = 0; j < resp_content; ++j) pair.response.push_back(motif[j % mlen]);
    } else {
        const int start = content_dist(rng);
        pair.prompt.push_back(vocab::kEnumTask);
        pair.prompt.push_back(vocab::content_token(start));
        for (int j = 0; j < resp_content; ++j)
            pair.response.push_back(vocab::content_token((start + j) % cv));
    }
    pair.response.push_back(vocab::kEos);
    return pair;
}

int expected_response_token(const std::vector<int>& prompt, Task task, int j, int vocab_size) {
    if (j < 1) throw std::invalid_argument("response position must be >= 1");
    // Locate the task marker so length-prefixed prompts resolve too.
    const int marker = task == Task::MOTIF ? vocab::kMotifTask : vocab::kEnumTask;
    size_t m = 0;
    while (m < prompt.size() && prompt[m] != marker) ++m;
    if (m + 1 >= prompt.size())
        throw std::invalid_argument("prompt carries no task content after its marker");
    if (task == Task::MOTIF) {
        const int mlen = static_cast<int>(prompt.size() - m - 1);
        return prompt[m + 1 + (j - 1) % mlen];
    }
    const int cv = vocab::content_vocab(vocab_size);
    const int start = prompt[m + 1] - vocab::kContentBase;
    return vocab::content_token((start + (j - 1)) % cv);
}

std::vector<int> with_length_prefix(const std::vector<int>& prompt, int target_len) {
    if (target_len < 1) throw std::invalid_argument("target length must be positive");
    std::vector<int> digits;
    for (int v = target_len; v > 0; v /= 10) digits.push_back(vocab::kDigit0 + v % 10);
    std::vector<int> out;
    out.reserve(prompt.size() + digits.size() + 1);
    out.push_back(vocab::kBos);
    out.push_back(vocab::kLenMark);
    out.insert(out.end(), digits.rbegin(), digits.rend());
    out.insert(out.end(), prompt.begin() + 1, prompt.end());
    return out;
}

TrainingExample make_example(const PromptResponsePair& pair, EncodingMode mode, int shift,
                             bool prompted_baseline) {
    TrainingExample ex;
    std::vector<int> prompt = pair.prompt;
    if (prompted_baseline) {
        prompt = with_length_prefix(prompt, static_cast<int>(pair.response.size()));
        mode = EncodingMode::NONE;
        shift = 0;
    }
    ex.tokens = prompt;
    ex.tokens.insert(ex.tokens.end(), pair.response.begin(), pair.response.end());
    ex.n = static_cast<int>(prompt.size());
    ex.L = static_cast<int>(ex.tokens.size());
    ex.plan = CountdownPlan{mode, ex.n, ex.L, shift};
    ex.plan.validate();
    ex.loss_mask.assign(static_cast<size_t>(ex.L), 0);
    for (int i = ex.n; i < ex.L; ++i) ex.loss_mask[i] = 1;
    return ex;
}

void save_dataset(const std::string& path, const std::vector<PromptResponsePair>& pairs) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("dataset: cannot open " + path + " for writing");
    for (const auto& p : pairs) {
        nlohmann::json j = {{"task", to_string(p.task)},
                            {"seed", p.seed},
                            {"prompt", p.prompt},
                            {"response", p.response}};
        os << j.dump() << '\n';
    }
    if (!os) throw std::runtime_error("dataset: write failure on " + path);
}

std::vector<PromptResponsePair> load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("dataset: cannot open " + path);
    std::vector<PromptResponsePair> pairs;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("dataset: bad JSON at line " + std::to_string(lineno) +
                                     ": " + e.what());
        }
        PromptResponsePair p;
        p.task = task_from_string(j.at("task").get<std::string>());
        p.seed = j.at("seed").get<uint64_t>();
        p.prompt = j.at("prompt").get<std::vector<int>>();
        p.response = j.at("response").get<std::vector<int>>();
        pairs.push_back(std::move(p));
    }
    return pairs;
}

std::vector<PromptResponsePair> generate_corpus(uint64_t seed, int num_samples, int min_resp,
                                                int max_resp, int vocab_size, int max_seq) {
    std::vector<PromptResponsePair> pairs;
    pairs.reserve(static_cast<size_t>(num_samples));
    for (int i = 0; i < num_samples; ++i) {
        const Task task = (i % 2 == 0) ? Task::MOTIF : Task::ENUM;
        auto pair = gen_sample(task, mix_seed(seed) + static_cast<uint64_t>(i), min_resp,
                               max_resp, vocab_size);
        if (pair.total_len() > max_seq)
            throw std::invalid_argument("range error: sample exceeds max_seq");
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

std::vector<PromptResponsePair> generate_heldout(uint64_t seed, int num_prompts,
                                                 int vocab_size) {
    std::vector<PromptResponsePair> pairs;
    pairs.reserve(static_cast<size_t>(num_prompts));
    // Seeds far outside the corpus stream; only the prompts are used.
    const uint64_t base = mix_seed(seed ^ 0x9e3779b97f4a7c15ull) + (1ull << 40);
    for (int i = 0; i < num_prompts; ++i) {
        const Task task = (i % 2 == 0) ? Task::MOTIF : Task::ENUM;
        pairs.push_back(gen_sample(task, base + static_cast<uint64_t>(i), 5, 10, vocab_size));
    }
    return pairs;
}

} // namespace lenctl
