#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tclp/error.hpp"
#include "tclp/model.hpp"

namespace tclp {

constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    int64_t step = 0;
    int64_t pairs_seen = 0;
    uint64_t seed = 0;
    std::string objective;
};

// File layout, little endian throughout:
//   "TCLP" | u32 version | u32 json_len | json (config + meta)
//   | u32 tensor_count | per tensor: u16 name_len, name, u8 rank,
//     u32 dims[rank], f32 data
// Tensors appear in lexicographic name order.
namespace detail {

template <typename V>
void write_pod(std::ofstream& out, V v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& in) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw CheckpointError(CheckpointFault::truncated, "checkpoint: truncated file");
    return v;
}

inline std::string read_bytes(std::ifstream& in, size_t n) {
    std::string s(n, '\0');
    in.read(s.data(), std::streamsize(n));
    if (!in) throw CheckpointError(CheckpointFault::truncated, "checkpoint: truncated file");
    return s;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const DualEncoderT<T>& model, const CheckpointMeta& meta, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write("TCLP", 4);
    detail::write_pod<uint32_t>(out, kCheckpointVersion);
    nlohmann::json blob;
    blob["config"] = model.config().to_json();
    blob["meta"] = {{"step", meta.step},
                    {"pairs_seen", meta.pairs_seen},
                    {"seed", meta.seed},
                    {"objective", meta.objective}};
    std::string js = blob.dump();
    detail::write_pod<uint32_t>(out, uint32_t(js.size()));
    out.write(js.data(), std::streamsize(js.size()));
    detail::write_pod<uint32_t>(out, uint32_t(model.params().size()));
    for (const auto& [name, tensor] : model.params()) {
        detail::write_pod<uint16_t>(out, uint16_t(name.size()));
        out.write(name.data(), std::streamsize(name.size()));
        detail::write_pod<uint8_t>(out, uint8_t(tensor.shape.size()));
        for (int d : tensor.shape) detail::write_pod<uint32_t>(out, uint32_t(d));
        for (T v : tensor.data) detail::write_pod<float>(out, float(v));
    }
    if (!out) throw IoError("checkpoint write failed: " + path);
}

template <typename T>
struct LoadedCheckpoint {
    DualEncoderT<T> model;
    CheckpointMeta meta;
};

template <typename T = float>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "TCLP", 4) != 0)
        throw CheckpointError(CheckpointFault::bad_magic, "checkpoint: bad magic in " + path);
    uint32_t version = detail::read_pod<uint32_t>(in);
    if (version != kCheckpointVersion)
        throw CheckpointError(CheckpointFault::version_skew,
                              "checkpoint: version " + std::to_string(version) + ", expected " +
                                  std::to_string(kCheckpointVersion));
    uint32_t json_len = detail::read_pod<uint32_t>(in);
    std::string js = detail::read_bytes(in, json_len);

    nlohmann::json blob;
    EncoderConfig cfg;
    CheckpointMeta meta;
    try {
        blob = nlohmann::json::parse(js);
        cfg = EncoderConfig::from_json(blob.at("config"));
        const auto& jm = blob.at("meta");
        meta.step = jm.at("step").get<int64_t>();
        meta.pairs_seen = jm.at("pairs_seen").get<int64_t>();
        meta.seed = jm.at("seed").get<uint64_t>();
        meta.objective = jm.at("objective").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointFault::bad_config, std::string("checkpoint: bad config blob: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(CheckpointFault::bad_config, std::string("checkpoint: ") + e.what());
    }

    LoadedCheckpoint<T> loaded{DualEncoderT<T>(cfg), meta};
    uint32_t count = detail::read_pod<uint32_t>(in);
    if (count != loaded.model.params().size())
        throw CheckpointError(CheckpointFault::shape_mismatch,
                              "checkpoint: " + std::to_string(count) + " tensors, config implies " +
                                  std::to_string(loaded.model.params().size()));
    for (auto& [expected_name, tensor] : loaded.model.params()) {
        uint16_t name_len = detail::read_pod<uint16_t>(in);
        std::string name = detail::read_bytes(in, name_len);
        if (name != expected_name)
            throw CheckpointError(CheckpointFault::shape_mismatch,
                                  "checkpoint: tensor '" + name + "' where '" + expected_name +
                                      "' was expected");
        uint8_t rank = detail::read_pod<uint8_t>(in);
        if (rank != tensor.shape.size())
            throw CheckpointError(CheckpointFault::shape_mismatch,
                                  "checkpoint: tensor '" + name + "' rank mismatch");
        for (int d : tensor.shape) {
            uint32_t dim = detail::read_pod<uint32_t>(in);
            if (dim != uint32_t(d))
                throw CheckpointError(CheckpointFault::shape_mismatch,
                                      "checkpoint: tensor '" + name + "' extent " + std::to_string(dim) +
                                          " vs expected " + std::to_string(d));
        }
        for (auto& v : tensor.data) v = T(detail::read_pod<float>(in));
    }
    char extra;
    if (in.read(&extra, 1))
        throw CheckpointError(CheckpointFault::shape_mismatch, "checkpoint: trailing bytes in " + path);
    return loaded;
}

}  // namespace tclp
