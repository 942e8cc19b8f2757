#pragma once

// Checkpoint archive, format tag "flowcount-ckpt-v1":
//
//   "flowcount-ckpt-v1\n"
//   u64 little-endian header length
//   header JSON {format, config, step, rng_state, best_val_mae, metadata,
//                tensors: [{name, shape, offset, count}]}
//   concatenated f32le tensor buffers (offsets in floats)
//
// Model parameters are stored under "param/<name>", optimizer state under
// "optim/<slot>/<name>".

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"
#include "field_io.hpp"
#include "json.hpp"
#include "model.hpp"

namespace flowcount {

inline constexpr const char* kCheckpointFormat = "flowcount-ckpt-v1";

struct Checkpoint {
    ModelConfig config;
    std::vector<Parameter<float>> tensors;
    long step = 0;
    std::string rng_state;
    double best_val_mae = std::numeric_limits<double>::infinity();
    nlohmann::json metadata = nlohmann::json::object();

    const Parameter<float>* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::json manifest = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& t : ck.tensors) {
        manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.values.size()}});
        offset += t.values.size();
    }
    nlohmann::json header = {{"format", kCheckpointFormat},
                             {"config", to_json(ck.config)},
                             {"step", ck.step},
                             {"rng_state", ck.rng_state},
                             {"best_val_mae", std::isfinite(ck.best_val_mae) ? nlohmann::json(ck.best_val_mae) : nlohmann::json()},
                             {"metadata", ck.metadata},
                             {"tensors", manifest}};
    const std::string text = header.dump();
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
        os << kCheckpointFormat << '\n';
        std::uint64_t len = text.size();
        unsigned char le[8];
        for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>(len >> (8 * i));
        os.write(reinterpret_cast<const char*>(le), 8);
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& t : ck.tensors) io_detail::write_f32le(os, t.values);
        if (!os) throw std::runtime_error("short write on checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open checkpoint " + path.string());
    std::string magic;
    std::getline(is, magic);
    if (magic != kCheckpointFormat) throw ParseError(path.string() + ": not a " + std::string(kCheckpointFormat) + " file");
    unsigned char le[8];
    is.read(reinterpret_cast<char*>(le), 8);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(le[i]) << (8 * i);
    if (!is || len > (1ull << 32)) throw ParseError(path.string() + ": corrupt header length");
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    Checkpoint ck;
    try {
        const auto h = nlohmann::json::parse(text);
        ck.config = model_config_from_json(h.at("config"));
        ck.step = h.at("step").get<long>();
        ck.rng_state = h.value("rng_state", "");
        if (h.contains("best_val_mae") && h.at("best_val_mae").is_number()) ck.best_val_mae = h.at("best_val_mae").get<double>();
        ck.metadata = h.value("metadata", nlohmann::json::object());
        for (const auto& t : h.at("tensors")) {
            Parameter<float> p;
            p.name = t.at("name").get<std::string>();
            p.shape = t.at("shape").get<std::vector<int>>();
            p.values = io_detail::read_f32le(is, t.at("count").get<std::size_t>());
            ck.tensors.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": bad checkpoint header: " + e.what());
    }
    return ck;
}

inline Checkpoint make_checkpoint(const FlowRegressor<float>& model, long step = 0) {
    Checkpoint ck;
    ck.config = model.config();
    ck.step = step;
    for (const auto& p : model.parameters()) ck.tensors.push_back({"param/" + p.name, p.shape, p.values});
    return ck;
}

/// Throws IncompatibleCheckpoint naming the first mismatched config field.
inline void check_compatible(const ModelConfig& stored, const ModelConfig& expected) {
    const std::string field = first_config_difference(stored, expected);
    if (!field.empty())
        throw IncompatibleCheckpoint(field, "incompatible checkpoint: config field '" + field + "' is " +
                                                to_json(stored).at(field).dump() + " in the checkpoint but " +
                                                to_json(expected).at(field).dump() + " is required");
}

inline void restore_parameters(FlowRegressor<float>& model, const Checkpoint& ck) {
    check_compatible(ck.config, model.config());
    for (auto& p : model.parameters()) {
        const auto* t = ck.find("param/" + p.name);
        if (!t) throw IncompatibleCheckpoint(p.name, "checkpoint lacks parameter '" + p.name + "'");
        if (t->shape != p.shape) throw IncompatibleCheckpoint(p.name, "parameter '" + p.name + "' has a different shape");
        p.values = t->values;
    }
}

inline FlowRegressor<float> regressor_from_checkpoint(const Checkpoint& ck) {
    FlowRegressor<float> model(ck.config);
    restore_parameters(model, ck);
    return model;
}

inline FlowRegressor<float> load_regressor(const std::filesystem::path& path) {
    return regressor_from_checkpoint(load_checkpoint(path));
}

inline FlowRegressor<float> load_regressor(const std::filesystem::path& path, const ModelConfig& expected) {
    const Checkpoint ck = load_checkpoint(path);
    check_compatible(ck.config, expected);
    return regressor_from_checkpoint(ck);
}

} // namespace flowcount
