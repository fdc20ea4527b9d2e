#pragma once

// Binary scene format, little-endian, 32 bytes per gaussian:
//   0  position   3 x f32
//   12 scale      3 x f32, linear
//   24 color      4 x u8, RGBA with A = opacity
//   28 rotation   4 x u8, w x y z, stored as round(q * 128) + 128
// A JSON sidecar carries {count, scene_scale, version}.

#include "pano3d/errors.hpp"
#include "pano3d/splat/gaussian.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <vector>

namespace pano3d::splat {

inline constexpr std::size_t kSplatRecordBytes = 32;
inline constexpr int kSceneFormatVersion = 1;

/// Decoded record, at the precision the file stores.
struct SplatRecord {
    std::array<float, 3> position{};
    std::array<float, 3> scale{};
    std::array<std::uint8_t, 4> rgba{};
    std::array<std::uint8_t, 4> rotation{};
};

namespace detail {

inline void put_f32(std::uint8_t* out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

inline float get_f32(const std::uint8_t* in) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(in[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

inline std::uint8_t unit_to_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

inline std::uint8_t quat_to_u8(double q) {
    return static_cast<std::uint8_t>(std::clamp<long>(std::lround(q * 128.0) + 128, 0, 255));
}

}  // namespace detail

inline SplatRecord to_record(const Gaussian3D& g) {
    SplatRecord r;
    const Vec3 s = g.scale();
    Vec4 q = g.unit_rotation();
    if (q[0] < 0) q = -q;
    for (int k = 0; k < 3; ++k) {
        r.position[k] = static_cast<float>(g.position[k]);
        r.scale[k] = static_cast<float>(s[k]);
        r.rgba[k] = detail::unit_to_u8(g.color[k]);
    }
    r.rgba[3] = detail::unit_to_u8(g.opacity());
    for (int k = 0; k < 4; ++k) r.rotation[k] = detail::quat_to_u8(q[k]);
    return r;
}

inline void encode_record(const SplatRecord& r, std::uint8_t* out) {
    for (int k = 0; k < 3; ++k) {
        detail::put_f32(out + 4 * k, r.position[k]);
        detail::put_f32(out + 12 + 4 * k, r.scale[k]);
    }
    std::memcpy(out + 24, r.rgba.data(), 4);
    std::memcpy(out + 28, r.rotation.data(), 4);
}

inline SplatRecord decode_record(const std::uint8_t* in) {
    SplatRecord r;
    for (int k = 0; k < 3; ++k) {
        r.position[k] = detail::get_f32(in + 4 * k);
        r.scale[k] = detail::get_f32(in + 12 + 4 * k);
    }
    std::memcpy(r.rgba.data(), in + 24, 4);
    std::memcpy(r.rotation.data(), in + 28, 4);
    return r;
}

/// Gaussian with the record's (quantised) values.
inline Gaussian3D from_record(const SplatRecord& r) {
    Gaussian3D g;
    for (int k = 0; k < 3; ++k) {
        g.position[k] = r.position[k];
        g.log_scale[k] = std::log(std::max<double>(r.scale[k], 1e-30));
        g.color[k] = r.rgba[k] / 255.0;
    }
    const double a = std::clamp(r.rgba[3] / 255.0, 1e-6, 1.0 - 1e-6);
    g.opacity_logit = logit(a);
    for (int k = 0; k < 4; ++k) g.rotation[k] = (r.rotation[k] - 128.0) / 128.0;
    if (g.rotation.norm() == 0.0) g.rotation = Vec4(1, 0, 0, 0);
    return g;
}

inline std::vector<std::uint8_t> encode_scene(const GaussianScene& scene) {
    std::vector<std::uint8_t> out(scene.size() * kSplatRecordBytes);
    for (std::size_t i = 0; i < scene.size(); ++i) encode_record(to_record(scene.gaussians[i]), out.data() + i * kSplatRecordBytes);
    return out;
}

inline std::vector<SplatRecord> decode_scene(const std::vector<std::uint8_t>& bytes, std::size_t expected_count) {
    if (bytes.size() != expected_count * kSplatRecordBytes)
        throw DomainError("scene payload is " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(expected_count * kSplatRecordBytes));
    std::vector<SplatRecord> out(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i) out[i] = decode_record(bytes.data() + i * kSplatRecordBytes);
    return out;
}

inline nlohmann::json scene_sidecar(const GaussianScene& scene) {
    return {{"count", scene.size()}, {"scene_scale", scene.scene_scale}, {"version", kSceneFormatVersion}};
}

/// Writes `<stem>.bin` and `<stem>.json` next to each other.
inline void export_scene(const GaussianScene& scene, const std::filesystem::path& bin_path,
                         const std::filesystem::path& json_path) {
    if (bin_path.has_parent_path()) std::filesystem::create_directories(bin_path.parent_path());
    const auto bytes = encode_scene(scene);
    std::ofstream b(bin_path, std::ios::binary);
    if (!b) throw std::runtime_error("cannot write " + bin_path.string());
    b.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    std::ofstream j(json_path);
    if (!j) throw std::runtime_error("cannot write " + json_path.string());
    j << scene_sidecar(scene).dump(2) << '\n';
}

inline GaussianScene import_scene(const std::filesystem::path& bin_path, const std::filesystem::path& json_path) {
    std::ifstream j(json_path);
    if (!j) throw ParseError(json_path.string(), 0, "cannot open sidecar");
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(j);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(json_path.string(), 0, e.what());
    }
    if (side.value("version", -1) != kSceneFormatVersion) throw ParseError(json_path.string(), 0, "unsupported version");
    std::ifstream b(bin_path, std::ios::binary);
    if (!b) throw ParseError(bin_path.string(), 0, "cannot open scene");
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    GaussianScene s;
    s.scene_scale = side.at("scene_scale").get<double>();
    for (const auto& r : decode_scene(bytes, side.at("count").get<std::size_t>())) s.gaussians.push_back(from_record(r));
    return s;
}

}  // namespace pano3d::splat
