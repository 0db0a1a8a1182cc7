#include "lenctl/config.hpp"

#include <fstream>
#include <stdexcept>

namespace lenctl {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

std::vector<int> RunConfig::target_grid() const {
    std::vector<int> grid;
    if (grid_step < 1) throw std::invalid_argument("config: grid_step must be >= 1");
    for (int t = grid_start; t <= grid_stop; t += grid_step) grid.push_back(t);
    if (grid.empty()) throw std::invalid_argument("config: empty target grid");
    return grid;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto as_int = [&] { return std::stoi(value); };
    auto as_double = [&] { return std::stod(value); };

    if (key == "dataset_path") dataset_path = value;
    else if (key == "heldout_path") heldout_path = value;
    else if (key == "checkpoint_dir") checkpoint_dir = value;
    else if (key == "report_dir") report_dir = value;
    else if (key == "vocab_size") model.vocab_size = as_int();
    else if (key == "d_model") model.d_model = as_int();
    else if (key == "n_layers") model.n_layers = as_int();
    else if (key == "n_heads") model.n_heads = as_int();
    else if (key == "d_ff") model.d_ff = as_int();
    else if (key == "max_seq") model.max_seq = as_int();
    else if (key == "rope_base") model.rope_base = as_double();
    else if (key == "samples") samples = as_int();
    else if (key == "min_resp") min_resp = as_int();
    else if (key == "max_resp") max_resp = as_int();
    else if (key == "heldout_prompts") heldout_prompts = as_int();
    else if (key == "mode") mode = value;
    else if (key == "lr0") lr0 = as_double();
    else if (key == "weight_decay") weight_decay = as_double();
    else if (key == "grad_accum") grad_accum = as_int();
    else if (key == "epochs") epochs = as_int();
    else if (key == "checkpoint_every") checkpoint_every = as_int();
    else if (key == "sigma0") sigma0 = as_double();
    else if (key == "sigma_max") sigma_max = as_double();
    else if (key == "max_shift") max_shift = as_int();
    else if (key == "grid_start") grid_start = as_int();
    else if (key == "grid_stop") grid_stop = as_int();
    else if (key == "grid_step") grid_step = as_int();
    else if (key == "hard_cap_factor") hard_cap_factor = as_double();
    else if (key == "temperature") temperature = as_double();
    else if (key == "seed") seed = std::stoull(value);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    RunConfig cfg;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        " is not key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            cfg.set(key, value);
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception& e) {
            throw std::invalid_argument("config: bad value for '" + key + "' at line " +
                                        std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

std::vector<int> parse_grid(const std::string& spec) {
    const auto c1 = spec.find(':');
    const auto c2 = spec.find(':', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
        throw std::invalid_argument("grid: expected start:stop:step, got '" + spec + "'");
    const int start = std::stoi(spec.substr(0, c1));
    const int stop = std::stoi(spec.substr(c1 + 1, c2 - c1 - 1));
    const int step = std::stoi(spec.substr(c2 + 1));
    if (step < 1) throw std::invalid_argument("grid: step must be >= 1");
    std::vector<int> grid;
    for (int t = start; t <= stop; t += step) grid.push_back(t);
    if (grid.empty()) throw std::invalid_argument("grid: empty range '" + spec + "'");
    return grid;
}

} // namespace lenctl
