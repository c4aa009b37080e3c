#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gatenet/config.hpp"
#include "gatenet/layers.hpp"
#include "gatenet/tensor.hpp"

namespace gatenet {

// Checkpoint = <prefix>.json manifest + <prefix>.bin payload. The payload is
// the little-endian concatenation of all parameters in manifest order, at the
// declared precision. Loading verifies the byte count before touching the
// model, so a truncated file never half-applies.

struct CheckpointMeta {
    int format_version = 1;
    std::string model_hash;
    json model; // model section, enough to rebuild
    bool optimizer_state = false;
    long epoch = 0;
    double val_loss = 0.0;
    std::string precision = "f32";
};

struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::vector<std::string> names;
    std::vector<Shape> shapes;
    std::vector<std::string> groups;
    std::vector<std::vector<double>> values;
};

namespace detail {

inline void put_le(std::vector<unsigned char>& out, const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    // x86/ARM little-endian layout is the file layout; byte-swap would go here
    // for big-endian hosts.
    out.insert(out.end(), b, b + n);
}

} // namespace detail

inline void save_checkpoint(const std::string& prefix, const Model& model,
                            const CheckpointMeta& meta) {
    json manifest;
    manifest["format_version"] = meta.format_version;
    manifest["model_hash"] = meta.model_hash;
    manifest["model"] = meta.model;
    manifest["optimizer_state"] = meta.optimizer_state;
    manifest["epoch"] = meta.epoch;
    manifest["val_loss"] = meta.val_loss;
    manifest["precision"] = meta.precision;
    json plist = json::array();
    std::vector<unsigned char> payload;
    for (const auto& p : model.params()) {
        plist.push_back(json{{"name", p.name()},
                             {"shape", p.shape()},
                             {"group", group_name(p.group())}});
        if (meta.precision == "f64") {
            for (double v : p.data()) detail::put_le(payload, &v, 8);
        } else {
            for (double v : p.data()) {
                float f = static_cast<float>(v);
                detail::put_le(payload, &f, 4);
            }
        }
    }
    manifest["params"] = plist;
    {
        std::ofstream out(prefix + ".json");
        if (!out)
            throw std::runtime_error("save_checkpoint: cannot write " + prefix + ".json");
        out << manifest.dump(2) << "\n";
    }
    {
        std::ofstream out(prefix + ".bin", std::ios::binary);
        if (!out)
            throw std::runtime_error("save_checkpoint: cannot write " + prefix + ".bin");
        out.write(reinterpret_cast<const char*>(payload.data()),
                  static_cast<std::streamsize>(payload.size()));
    }
}

inline LoadedCheckpoint load_checkpoint(const std::string& prefix) {
    std::ifstream min(prefix + ".json");
    if (!min)
        throw std::runtime_error("load_checkpoint: cannot open " + prefix + ".json");
    json manifest;
    try {
        min >> manifest;
    } catch (const json::exception& e) {
        throw std::runtime_error("load_checkpoint: bad manifest " + prefix + ".json: " + e.what());
    }
    LoadedCheckpoint ck;
    ck.meta.format_version = manifest.at("format_version").get<int>();
    if (ck.meta.format_version != 1)
        throw std::runtime_error("load_checkpoint: unsupported format version " +
                                 std::to_string(ck.meta.format_version));
    ck.meta.model_hash = manifest.at("model_hash").get<std::string>();
    ck.meta.model = manifest.at("model");
    ck.meta.optimizer_state = manifest.at("optimizer_state").get<bool>();
    ck.meta.epoch = manifest.at("epoch").get<long>();
    ck.meta.val_loss = manifest.at("val_loss").get<double>();
    ck.meta.precision = manifest.at("precision").get<std::string>();
    if (ck.meta.precision != "f32" && ck.meta.precision != "f64")
        throw std::runtime_error("load_checkpoint: bad precision " + ck.meta.precision);
    long esize = ck.meta.precision == "f64" ? 8 : 4;

    long total = 0;
    for (const auto& pj : manifest.at("params")) {
        ck.names.push_back(pj.at("name").get<std::string>());
        ck.shapes.push_back(pj.at("shape").get<Shape>());
        ck.groups.push_back(pj.at("group").get<std::string>());
        total += numel_of(ck.shapes.back());
    }

    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin)
        throw std::runtime_error("load_checkpoint: cannot open " + prefix + ".bin");
    bin.seekg(0, std::ios::end);
    long bytes = static_cast<long>(bin.tellg());
    bin.seekg(0, std::ios::beg);
    if (bytes != total * esize)
        throw std::runtime_error("load_checkpoint: payload is " + std::to_string(bytes) +
                                 " bytes, manifest declares " + std::to_string(total * esize) +
                                 "; refusing partial load");
    std::vector<unsigned char> raw(static_cast<std::size_t>(bytes));
    if (!bin.read(reinterpret_cast<char*>(raw.data()), bytes))
        throw std::runtime_error("load_checkpoint: short read on " + prefix + ".bin");

    std::size_t off = 0;
    for (const auto& sh : ck.shapes) {
        long n = numel_of(sh);
        std::vector<double> v(static_cast<std::size_t>(n));
        for (long i = 0; i < n; ++i) {
            if (esize == 8) {
                double d;
                std::memcpy(&d, raw.data() + off, 8);
                v[static_cast<std::size_t>(i)] = d;
                off += 8;
            } else {
                float f;
                std::memcpy(&f, raw.data() + off, 4);
                v[static_cast<std::size_t>(i)] = static_cast<double>(f);
                off += 4;
            }
        }
        ck.values.push_back(std::move(v));
    }
    return ck;
}

// Copies checkpoint values into the model's parameters by name; every model
// parameter must be present with a matching shape.
inline void apply_checkpoint(Model& model, const LoadedCheckpoint& ck) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < ck.names.size(); ++i) index[ck.names[i]] = i;
    for (const auto& pc : model.params()) {
        Tensor p = pc;
        auto it = index.find(p.name());
        if (it == index.end())
            throw std::runtime_error("apply_checkpoint: parameter " + p.name() +
                                     " missing from checkpoint");
        if (ck.shapes[it->second] != p.shape())
            throw std::runtime_error("apply_checkpoint: shape mismatch for " + p.name() + ": " +
                                     shape_str(ck.shapes[it->second]) + " vs " +
                                     shape_str(p.shape()));
        p.data() = ck.values[it->second];
    }
}

// Rebuilds the model recorded in the manifest and loads its weights. The seed
// only affects initialization, which is immediately overwritten.
inline std::unique_ptr<Model> model_from_checkpoint(const LoadedCheckpoint& ck) {
    ModelConfig mc = model_config_from_json(ck.meta.model);
    auto model = model_build(mc, 0);
    apply_checkpoint(*model, ck);
    return model;
}

} // namespace gatenet
