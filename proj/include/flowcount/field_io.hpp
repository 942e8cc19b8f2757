#pragma once

// Raw f32 little-endian dumps of flow fields and density maps, with a JSON
// sidecar next to the buffer (same stem, ".json" extension):
//   {"height": H, "width": W, "channels": K,
//    "representation": "incoming" | "outgoing" | "density", "dtype": "f32le"}

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "flowgrid.hpp"
#include "json.hpp"

namespace flowcount {

namespace io_detail {

inline void write_f32le(std::ostream& os, std::span<const float> values) {
    std::vector<std::uint32_t> words(values.size());
    std::memcpy(words.data(), values.data(), values.size() * sizeof(float));
    if constexpr (std::endian::native == std::endian::big)
        for (auto& w : words) w = __builtin_bswap32(w);
    os.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
}

inline std::vector<float> read_f32le(std::istream& is, std::size_t count) {
    std::vector<std::uint32_t> words(count);
    is.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(count * 4));
    if (static_cast<std::size_t>(is.gcount()) != count * 4)
        throw ParseError("truncated f32le buffer: expected " + std::to_string(count * 4) + " bytes");
    if constexpr (std::endian::native == std::endian::big)
        for (auto& w : words) w = __builtin_bswap32(w);
    std::vector<float> out(count);
    std::memcpy(out.data(), words.data(), count * sizeof(float));
    return out;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& buffer) {
    auto p = buffer;
    p.replace_extension(".json");
    return p;
}

inline void write_buffer(const std::filesystem::path& path, std::span<const float> values, int height, int width,
                         int channels, const std::string& representation) {
    std::ofstream bin(path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_f32le(bin, values);
    nlohmann::json meta = {{"height", height},
                           {"width", width},
                           {"channels", channels},
                           {"representation", representation},
                           {"dtype", "f32le"}};
    std::ofstream side(sidecar_path(path));
    if (!side) throw std::runtime_error("cannot open sidecar for " + path.string());
    side << meta.dump(2) << '\n';
}

struct BufferMeta {
    int height = 0, width = 0, channels = 0;
    std::string representation;
};

inline BufferMeta read_meta(const std::filesystem::path& path) {
    std::ifstream side(sidecar_path(path));
    if (!side) throw ParseError("missing sidecar " + sidecar_path(path).string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(side);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(sidecar_path(path).string() + ": " + e.what());
    }
    if (meta.value("dtype", "") != "f32le") throw ParseError(path.string() + ": unsupported dtype");
    BufferMeta m;
    m.height = meta.at("height").get<int>();
    m.width = meta.at("width").get<int>();
    m.channels = meta.at("channels").get<int>();
    m.representation = meta.at("representation").get<std::string>();
    return m;
}

} // namespace io_detail

inline void write_flow(const std::filesystem::path& path, const FlowField<float>& flow) {
    io_detail::write_buffer(path, flow.values(), flow.shape().height, flow.shape().width, kFlowChannels,
                            to_string(flow.representation()));
}

inline void write_density(const std::filesystem::path& path, const Grid2<float>& density) {
    io_detail::write_buffer(path, density.values(), density.height(), density.width(), 1, "density");
}

inline FlowField<float> read_flow(const std::filesystem::path& path) {
    const auto m = io_detail::read_meta(path);
    if (m.channels != kFlowChannels) throw ParseError(path.string() + ": flow field must have 10 channels");
    Representation rep;
    if (m.representation == "incoming")
        rep = Representation::Incoming;
    else if (m.representation == "outgoing")
        rep = Representation::Outgoing;
    else
        throw ParseError(path.string() + ": not a flow field (representation '" + m.representation + "')");
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw ParseError("cannot open " + path.string());
    GridShape shape{m.height, m.width};
    return FlowField<float>(shape, rep, io_detail::read_f32le(bin, shape.cells() * kFlowChannels));
}

inline DensityMap<float> read_density(const std::filesystem::path& path) {
    const auto m = io_detail::read_meta(path);
    if (m.representation != "density" || m.channels != 1) throw ParseError(path.string() + ": not a density map");
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw ParseError("cannot open " + path.string());
    GridShape shape{m.height, m.width};
    return DensityMap<float>(shape, io_detail::read_f32le(bin, shape.cells()));
}

} // namespace flowcount
