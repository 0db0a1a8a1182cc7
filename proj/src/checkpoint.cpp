#include "lenctl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace lenctl {

namespace {

constexpr char kMagic[4] = {'L', 'B', 'T', 'C'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_f32_le(std::ostream& os, const float* data, size_t n) {
    // bit_cast keeps NaN payloads and signed zeros intact
    std::vector<unsigned char> buf(n * 4);
    for (size_t i = 0; i < n; ++i) {
        const uint32_t u = std::bit_cast<uint32_t>(data[i]);
        buf[4 * i] = static_cast<unsigned char>(u & 0xff);
        buf[4 * i + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
        buf[4 * i + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
        buf[4 * i + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void read_f32_le(std::istream& is, float* data, size_t n) {
    std::vector<unsigned char> buf(n * 4);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor payload");
    for (size_t i = 0; i < n; ++i) {
        const uint32_t u = static_cast<uint32_t>(buf[4 * i]) |
                           (static_cast<uint32_t>(buf[4 * i + 1]) << 8) |
                           (static_cast<uint32_t>(buf[4 * i + 2]) << 16) |
                           (static_cast<uint32_t>(buf[4 * i + 3]) << 24);
        data[i] = std::bit_cast<float>(u);
    }
}

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},       {"d_ff", c.d_ff},       {"max_seq", c.max_seq},
            {"rope_base", c.rope_base}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.max_seq = j.at("max_seq").get<int>();
    c.rope_base = j.at("rope_base").get<double>();
    return c;
}

} // namespace

void save_checkpoint(const std::string& path, Parameters<float>& params,
                     const CheckpointMeta& meta) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");

    const auto tensors = params.named_tensors();
    nlohmann::json j = {{"model_config", config_to_json(params.config)},
                        {"step", meta.step},
                        {"seed", meta.seed},
                        {"mode", meta.mode},
                        {"num_tensors", tensors.size()}};
    const std::string js = j.dump();

    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<uint32_t>(js.size()));
    os.write(js.data(), static_cast<std::streamsize>(js.size()));

    for (const auto& [name, t] : tensors) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(kDtypeF32));
        os.put(static_cast<char>(t->shape.size()));
        for (int d : t->shape) write_u32(os, static_cast<uint32_t>(d));
        write_f32_le(os, t->data.data(), t->data.size());
    }
    os.flush();
    if (!os) throw std::runtime_error("checkpoint: write failure on " + path);
}

Parameters<float> load_checkpoint(const std::string& path, CheckpointMeta* meta_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic bytes");
    const uint32_t version = read_u32(is);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 std::to_string(version));

    const uint32_t jlen = read_u32(is);
    std::string js(jlen, '\0');
    is.read(js.data(), jlen);
    if (!is) throw std::runtime_error("checkpoint: truncated metadata");
    const nlohmann::json j = nlohmann::json::parse(js);

    CheckpointMeta meta;
    meta.config = config_from_json(j.at("model_config"));
    meta.step = j.at("step").get<int64_t>();
    meta.seed = j.at("seed").get<uint64_t>();
    meta.mode = j.value("mode", "none");
    const size_t num_tensors = j.at("num_tensors").get<size_t>();

    Parameters<float> params(meta.config);
    auto tensors = params.named_tensors();
    if (tensors.size() != num_tensors)
        throw std::runtime_error("checkpoint: tensor count does not match model config");

    for (auto& [name, t] : tensors) {
        const uint32_t nlen = read_u32(is);
        std::string rname(nlen, '\0');
        is.read(rname.data(), nlen);
        if (!is || rname != name)
            throw std::runtime_error("checkpoint: unexpected tensor record '" + rname +
                                     "', wanted '" + name + "'");
        const int dtype = is.get();
        if (dtype != kDtypeF32) throw std::runtime_error("checkpoint: unsupported dtype tag");
        const int rank = is.get();
        if (rank != static_cast<int>(t->shape.size()))
            throw std::runtime_error("checkpoint: rank mismatch for " + name);
        for (int d : t->shape) {
            const uint32_t dim = read_u32(is);
            if (dim != static_cast<uint32_t>(d))
                throw std::runtime_error("checkpoint: dimension mismatch for " + name);
        }
        read_f32_le(is, t->data.data(), t->data.size());
    }
    if (meta_out) *meta_out = meta;
    return params;
}

} // namespace lenctl
