#pragma once

// Equirectangular <-> sphere <-> pinhole mappings.
//
// Conventions: Y up, +Z forward at the image centre, longitude grows to the
// right. Integer continuous pixel coordinates are pixel centres, so pixel
// (i, j) covers [i-0.5, i+0.5) x [j-0.5, j+0.5). Camera frames for crops use
// x right, y up, z forward.

#include "pano3d/errors.hpp"
#include "pano3d/image.hpp"
#include "pano3d/math.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace pano3d {

class EquirectFrame {
public:
    EquirectFrame() = default;
    explicit EquirectFrame(ImageF pixels) : pixels_(std::move(pixels)) { validate(pixels_.width(), pixels_.height()); }

    static void validate(int width, int height) {
        if (height < 2 || width < 2 || height % 2 != 0 || width % 2 != 0)
            throw DomainError("equirect frame dimensions must be even and >= 2");
        if (width != 2 * height) throw DomainError("equirect frame must have 2:1 aspect");
    }

    int width() const noexcept { return pixels_.width(); }
    int height() const noexcept { return pixels_.height(); }
    const ImageF& image() const noexcept { return pixels_; }
    ImageF& image() noexcept { return pixels_; }

private:
    ImageF pixels_;
};

class SphericalDirection {
public:
    SphericalDirection() : v_(0, 0, 1) {}

    /// Normalises `v`; zero vectors are rejected.
    static SphericalDirection from_vector(const Vec3& v) {
        const double n = v.norm();
        if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("direction must be non-zero and finite");
        return SphericalDirection(v / n);
    }

    const Vec3& vec() const noexcept { return v_; }
    double x() const noexcept { return v_.x(); }
    double y() const noexcept { return v_.y(); }
    double z() const noexcept { return v_.z(); }

private:
    explicit SphericalDirection(const Vec3& unit) : v_(unit) {}
    Vec3 v_;
};

struct PerspectiveCamera {
    double fov_deg = 90.0;
    int width = 512;
    int height = 512;
    Quat rotation = Quat::Identity();  // world-from-camera
    Vec3 position = Vec3::Zero();

    double focal() const { return (width / 2.0) / std::tan(deg2rad(fov_deg) / 2.0); }

    void validate() const {
        if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw DomainError("camera fov must lie in (0, 180)");
        if (width < 1 || height < 1) throw DomainError("camera resolution must be positive");
        if (std::abs(rotation.norm() - 1.0) > 1e-9) throw DomainError("camera quaternion must be normalised");
    }

    /// Camera-frame ray (unnormalised, z = 1) through the centre of pixel (px, py).
    Vec3 camera_ray(double px, double py) const {
        const double f = focal();
        return {(px + 0.5 - width / 2.0) / f, -(py + 0.5 - height / 2.0) / f, 1.0};
    }
};

/// Longitude/latitude of a continuous equirect coordinate. `u` wraps; `v` must lie in
/// [-0.5, h-0.5], the closed range between the two poles.
inline SphericalDirection dir_from_equirect(double u, double v, int w, int h) {
    if (w < 1 || h < 1) throw DomainError("dir_from_equirect: empty image");
    if (!std::isfinite(u) || !std::isfinite(v)) throw DomainError("dir_from_equirect: non-finite coordinate");
    if (v < -0.5 || v > h - 0.5) throw DomainError("dir_from_equirect: v outside [-0.5, h-0.5]");
    const double theta = 2.0 * kPi * (u + 0.5) / w - kPi;
    const double phi = kPi / 2.0 - kPi * (v + 0.5) / h;
    const double c = std::cos(phi);
    return SphericalDirection::from_vector({c * std::sin(theta), std::sin(phi), c * std::cos(theta)});
}

/// Inverse of dir_from_equirect; u is reduced to [-0.5, w-0.5). Poles map to u = 0.
inline Vec2 equirect_from_dir(const SphericalDirection& d, int w, int h) {
    const Vec3& v = d.vec();
    const double horiz = std::hypot(v.x(), v.z());
    const double phi = std::atan2(v.y(), horiz);
    const double vv = (kPi / 2.0 - phi) * h / kPi - 0.5;
    if (horiz == 0.0) return {0.0, vv};
    const double theta = std::atan2(v.x(), v.z());
    double u = (theta + kPi) * w / (2.0 * kPi) - 0.5;
    if (u >= w - 0.5) u -= w;
    return {u, vv};
}

enum class Sampling { bilinear, nearest };

/// Equirect coordinates sampled by each crop pixel, row-major. Only the camera rotation is used.
inline std::vector<Vec2> crop_coordinates(const PerspectiveCamera& cam, int w, int h) {
    cam.validate();
    const Mat3 rot = cam.rotation.toRotationMatrix();
    std::vector<Vec2> uv;
    uv.reserve(static_cast<std::size_t>(cam.width) * cam.height);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x)
            uv.push_back(equirect_from_dir(SphericalDirection::from_vector(rot * cam.camera_ray(x, y)), w, h));
    return uv;
}

template <typename T>
ImageF sample_at(const Image<T>& src, std::span<const Vec2> uv, int width, int height, Sampling mode) {
    if (uv.size() != static_cast<std::size_t>(width) * height) throw DomainError("sample_at: coordinate count mismatch");
    ImageF out(width, height, src.channels());
    std::array<double, 4> sample{};
    std::span<double> s(sample.data(), static_cast<std::size_t>(src.channels()));
    std::size_t i = 0;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x, ++i) {
            if (mode == Sampling::bilinear)
                sample_bilinear(src, uv[i].x(), uv[i].y(), true, s);
            else
                sample_nearest(src, uv[i].x(), uv[i].y(), true, s);
            for (int c = 0; c < src.channels(); ++c) out.at(x, y, c) = static_cast<float>(sample[c]);
        }
    return out;
}

/// Perspective view of an equirect frame. Only the camera rotation is used.
inline ImageF render_crop(const EquirectFrame& frame, const PerspectiveCamera& cam,
                          Sampling mode = Sampling::bilinear) {
    const auto uv = crop_coordinates(cam, frame.width(), frame.height());
    return sample_at(frame.image(), std::span<const Vec2>(uv), cam.width, cam.height, mode);
}

struct CropEntry {
    int frame_index = 0;
    PerspectiveCamera camera;
    double yaw_deg = 0.0;
    double pitch_deg = 0.0;
};

struct CropPlan {
    std::vector<CropEntry> entries;
    std::uint64_t rng_seed = 0;
    int crops_per_frame = 0;

    std::size_t size() const noexcept { return entries.size(); }
};

struct PitchRange {
    double lo_deg = -20.0;
    double hi_deg = 20.0;
};

/// Random yaw in [0, 360), pitch in `pitch`, no roll; entries grouped by frame.
inline CropPlan make_crop_plan(int n_frames, int crops_per_frame, double fov_deg, int res,
                               PitchRange pitch, std::uint64_t seed) {
    if (n_frames < 1) throw DomainError("make_crop_plan: need at least one frame");
    if (crops_per_frame < 1) throw DomainError("make_crop_plan: need at least one crop per frame");
    if (res < 1) throw DomainError("make_crop_plan: resolution must be positive");
    if (pitch.lo_deg > pitch.hi_deg) throw DomainError("make_crop_plan: empty pitch range");

    CropPlan plan;
    plan.rng_seed = seed;
    plan.crops_per_frame = crops_per_frame;
    plan.entries.reserve(static_cast<std::size_t>(n_frames) * crops_per_frame);
    Rng rng(seed);
    for (int f = 0; f < n_frames; ++f) {
        for (int k = 0; k < crops_per_frame; ++k) {
            CropEntry e;
            e.frame_index = f;
            e.yaw_deg = uniform(rng, 0.0, 360.0);
            e.pitch_deg = pitch.lo_deg == pitch.hi_deg ? pitch.lo_deg : uniform(rng, pitch.lo_deg, pitch.hi_deg);
            e.camera.fov_deg = fov_deg;
            e.camera.width = res;
            e.camera.height = res;
            e.camera.rotation = normalized_quat(rotation_yaw_pitch(deg2rad(e.yaw_deg), deg2rad(e.pitch_deg)));
            e.camera.validate();
            plan.entries.push_back(e);
        }
    }
    return plan;
}

/// One JSON object per line: frame_index, quaternion [w,x,y,z], fov_deg, width, height, seed.
inline void write_crop_plan_jsonl(std::ostream& os, const CropPlan& plan) {
    for (const auto& e : plan.entries) {
        const Quat& q = e.camera.rotation;
        nlohmann::json j{{"frame_index", e.frame_index},
                         {"quaternion", {q.w(), q.x(), q.y(), q.z()}},
                         {"fov_deg", e.camera.fov_deg},
                         {"width", e.camera.width},
                         {"height", e.camera.height},
                         {"seed", plan.rng_seed},
                         {"yaw_deg", e.yaw_deg},
                         {"pitch_deg", e.pitch_deg}};
        os << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict) << '\n';
    }
}

inline CropPlan read_crop_plan_jsonl(std::istream& is, const std::string& source = "<plan>") {
    CropPlan plan;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            CropEntry e;
            e.frame_index = j.at("frame_index").get<int>();
            const auto& q = j.at("quaternion");
            e.camera.rotation = Quat(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                                     q.at(3).get<double>());
            e.camera.rotation.normalize();
            e.camera.fov_deg = j.at("fov_deg").get<double>();
            e.camera.width = j.at("width").get<int>();
            e.camera.height = j.at("height").get<int>();
            e.yaw_deg = j.value("yaw_deg", 0.0);
            e.pitch_deg = j.value("pitch_deg", 0.0);
            plan.rng_seed = j.at("seed").get<std::uint64_t>();
            e.camera.validate();
            plan.entries.push_back(e);
        } catch (const nlohmann::json::exception& ex) {
            throw ParseError(source, lineno, ex.what());
        } catch (const DomainError& ex) {
            throw ParseError(source, lineno, ex.what());
        }
    }
    if (!plan.entries.empty()) {
        int per_frame = 0;
        for (const auto& e : plan.entries)
            if (e.frame_index == plan.entries.front().frame_index) ++per_frame;
        plan.crops_per_frame = per_frame;
    }
    return plan;
}

}  // namespace pano3d
