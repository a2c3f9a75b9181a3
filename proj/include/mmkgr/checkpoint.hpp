#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmkgr/tensor.hpp"

namespace mmkgr {

// Checkpoints are a pair of files: <stem>.json (manifest) and <stem>.bin
// (packed little-endian IEEE-754 doubles). Tensors are laid out in manifest
// order, sorted by name; round-trips are bit-exact.
namespace checkpoint {

inline void write_f64_le(std::ofstream& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

inline double read_f64_le(std::ifstream& in) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw std::runtime_error("checkpoint: truncated data file");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

inline void save(const std::string& stem, const std::map<std::string, const Tensor*>& tensors,
                 const nlohmann::json& extra = nlohmann::json::object()) {
    std::ofstream bin(stem + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("checkpoint: cannot write " + stem + ".bin");
    nlohmann::json manifest;
    manifest["format"] = "mmkgr-checkpoint";
    manifest["version"] = 1;
    manifest["dtype"] = "f64le";
    manifest["extra"] = extra;
    auto& list = manifest["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : tensors) {
        list.push_back({{"name", name},
                        {"rows", tensor->rows()},
                        {"cols", tensor->cols()},
                        {"offset", offset}});
        for (double v : tensor->data()) write_f64_le(bin, v);
        offset += static_cast<std::uint64_t>(tensor->size()) * 8;
    }
    std::ofstream mf(stem + ".json");
    if (!mf) throw std::runtime_error("checkpoint: cannot write " + stem + ".json");
    mf << manifest.dump(2) << '\n';
}

struct Loaded {
    std::map<std::string, Tensor> tensors;
    nlohmann::json extra;
};

inline Loaded load(const std::string& stem) {
    std::ifstream mf(stem + ".json");
    if (!mf) throw std::runtime_error("checkpoint: cannot open " + stem + ".json");
    nlohmann::json manifest = nlohmann::json::parse(mf);
    if (manifest.value("format", "") != "mmkgr-checkpoint")
        throw std::runtime_error("checkpoint: " + stem + ".json is not a checkpoint manifest");
    std::ifstream bin(stem + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("checkpoint: cannot open " + stem + ".bin");
    Loaded out;
    out.extra = manifest.value("extra", nlohmann::json::object());
    for (const auto& entry : manifest.at("tensors")) {
        const std::string name = entry.at("name");
        const int rows = entry.at("rows");
        const int cols = entry.at("cols");
        const std::uint64_t offset = entry.at("offset");
        bin.seekg(static_cast<std::streamoff>(offset));
        Tensor t(rows, cols);
        for (int i = 0; i < t.size(); ++i) t[i] = read_f64_le(bin);
        out.tensors.emplace(name, std::move(t));
    }
    return out;
}

// Copies values into existing parameters, validating names and shapes.
inline void restore(const Loaded& loaded, const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
        auto it = loaded.tensors.find(p->name);
        if (it == loaded.tensors.end())
            throw std::runtime_error("checkpoint: missing tensor '" + p->name + "'");
        if (!it->second.same_shape(p->value))
            throw std::runtime_error("checkpoint: tensor '" + p->name + "' has shape " +
                                     it->second.shape_str() + ", expected " +
                                     p->value.shape_str());
        p->value = it->second;
        p->zero_grad();
    }
}

inline void save_params(const std::string& stem, const std::vector<Parameter*>& params,
                        const nlohmann::json& extra = nlohmann::json::object()) {
    std::map<std::string, const Tensor*> tensors;
    for (const Parameter* p : params) {
        if (!tensors.emplace(p->name, &p->value).second)
            throw std::logic_error("checkpoint: duplicate parameter name '" + p->name + "'");
    }
    save(stem, tensors, extra);
}

} // namespace checkpoint
} // namespace mmkgr
