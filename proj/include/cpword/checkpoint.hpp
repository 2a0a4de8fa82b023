#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cpword/model.hpp"

namespace cpword {

// Versioned checkpoint container: an 8-byte magic, a JSON header (config,
// vocabulary hash, optimizer step, array directory) and the named arrays as
// little-endian float32 in column-major order. Optimizer moments ride along
// under "adam.m."/"adam.v." names so training resumes are exact.
inline constexpr char kCheckpointMagic[8] = {'C', 'P', 'W', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

namespace detail {

struct ArrayDir {
    std::string name;
    std::int64_t rows;
    std::int64_t cols;
};

std::string checkpoint_header(const ModelConfig& cfg, const std::string& vocab_hash,
                              long long step, const std::vector<ArrayDir>& arrays);

struct ParsedHeader {
    ModelConfig config;
    std::string vocab_hash;
    long long step;
    std::vector<ArrayDir> arrays;
};

ParsedHeader parse_checkpoint_header(const std::string& text);

void write_f32(std::ostream& out, const float* data, std::size_t n);
void read_f32(std::istream& in, float* data, std::size_t n);

}  // namespace detail

template <typename S>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<S>& params,
                     const Vocabulary& vocab, const AdamState<S>* opt = nullptr,
                     long long step = 0) {
    std::vector<detail::ArrayDir> dir;
    std::vector<const MatX<S>*> arrays;
    auto collect = [&](const std::string& prefix, const ModelParams<S>& p) {
        p.visit([&](const std::string& name, const MatX<S>& m) {
            dir.push_back({prefix + name, m.rows(), m.cols()});
            arrays.push_back(&m);
        });
    };
    collect("", params);
    if (opt) {
        collect("adam.m.", opt->m);
        collect("adam.v.", opt->v);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw model_error("checkpoint: cannot open " + path.string() + " for writing");
    const std::string header = detail::checkpoint_header(params.cfg, vocab.hash_hex(),
                                                         opt ? opt->step : step, dir);
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const auto len = static_cast<std::uint32_t>(header.size());
    char lenb[4] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8 & 0xff),
                    static_cast<char>(len >> 16 & 0xff), static_cast<char>(len >> 24 & 0xff)};
    out.write(lenb, 4);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::vector<float> buf;
    for (const MatX<S>* m : arrays) {
        buf.resize(static_cast<std::size_t>(m->size()));
        for (Eigen::Index i = 0; i < m->size(); ++i)
            buf[static_cast<std::size_t>(i)] = static_cast<float>(m->data()[i]);
        detail::write_f32(out, buf.data(), buf.size());
    }
    if (!out) throw model_error("checkpoint: write failed for " + path.string());
}

// Loads a checkpoint saved for the same vocabulary; a hash mismatch or any
// shape disagreement is rejected. Returns the optimizer step.
template <typename S>
long long load_checkpoint(const std::filesystem::path& path, ModelParams<S>& params,
                          const Vocabulary& vocab, AdamState<S>* opt = nullptr,
                          ModelConfig* config_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw model_error("checkpoint: cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
        throw model_error("checkpoint: bad magic in " + path.string());
    char lenb[4];
    in.read(lenb, 4);
    const std::uint32_t len = static_cast<std::uint8_t>(lenb[0]) |
                              static_cast<std::uint8_t>(lenb[1]) << 8 |
                              static_cast<std::uint8_t>(lenb[2]) << 16 |
                              static_cast<std::uint32_t>(static_cast<std::uint8_t>(lenb[3])) << 24;
    std::string header(len, '\0');
    in.read(header.data(), len);
    if (!in) throw model_error("checkpoint: truncated header");
    const detail::ParsedHeader meta = detail::parse_checkpoint_header(header);
    if (meta.vocab_hash != vocab.hash_hex())
        throw model_error("checkpoint: vocabulary hash mismatch (file " + meta.vocab_hash +
                          ", expected " + vocab.hash_hex() + ")");
    if (config_out) *config_out = meta.config;

    params = ModelParams<S>(meta.config, vocab);
    if (opt) *opt = AdamState<S>(meta.config, vocab);

    std::vector<std::pair<std::string, MatX<S>*>> dest;
    params.visit([&](const std::string& name, MatX<S>& m) { dest.push_back({name, &m}); });
    if (opt) {
        opt->m.visit([&](const std::string& name, MatX<S>& m) { dest.push_back({"adam.m." + name, &m}); });
        opt->v.visit([&](const std::string& name, MatX<S>& m) { dest.push_back({"adam.v." + name, &m}); });
        opt->step = meta.step;
    }

    std::size_t cursor = 0;
    std::vector<float> buf;
    for (const auto& a : meta.arrays) {
        if (cursor >= dest.size()) {
            if (a.name.rfind("adam.", 0) == 0 && !opt) {  // skip stored moments
                buf.resize(static_cast<std::size_t>(a.rows * a.cols));
                detail::read_f32(in, buf.data(), buf.size());
                continue;
            }
            throw model_error("checkpoint: unexpected array " + a.name);
        }
        auto& [name, m] = dest[cursor++];
        if (a.name != name || a.rows != m->rows() || a.cols != m->cols())
            throw model_error("checkpoint: array " + a.name + " does not match expected " + name);
        buf.resize(static_cast<std::size_t>(m->size()));
        detail::read_f32(in, buf.data(), buf.size());
        for (Eigen::Index i = 0; i < m->size(); ++i)
            m->data()[i] = static_cast<S>(buf[static_cast<std::size_t>(i)]);
    }
    if (cursor != dest.size()) throw model_error("checkpoint: missing arrays");
    return meta.step;
}

}  // namespace cpword
