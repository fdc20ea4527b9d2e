#pragma once

#include "pano3d/errors.hpp"
#include "pano3d/math.hpp"
#include "pano3d/splat/camera.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

namespace pano3d::splat {

/// Line through the camera centre: unit direction d and moment m = o x d.
struct PlueckerRay {
    Vec3 direction = Vec3::UnitZ();
    Vec3 moment = Vec3::Zero();
};

inline PlueckerRay pluecker_from_origin_direction(const Vec3& origin, const Vec3& dir) {
    PlueckerRay r;
    r.direction = dir.normalized();
    r.moment = origin.cross(r.direction);
    return r;
}

inline PlueckerRay pluecker_from_pixel(const CameraModel& cam, int u, int v) {
    if (u < 0 || v < 0 || u >= cam.width || v >= cam.height) throw DomainError("pluecker_from_pixel: pixel out of bounds");
    const Vec3 local((u + 0.5 - cam.cx) / cam.fx, (v + 0.5 - cam.cy) / cam.fy, 1.0);
    return pluecker_from_origin_direction(cam.position, cam.world_from_camera * local);
}

inline PlueckerRay pluecker_from_pixel(const PosedImage& img, int u, int v) { return pluecker_from_pixel(img.camera, u, v); }

/// Planar 6 x H x W float32 layout: dx, dy, dz, mx, my, mz.
inline std::vector<float> pluecker_map(const CameraModel& cam) {
    const std::size_t plane = static_cast<std::size_t>(cam.width) * cam.height;
    std::vector<float> out(6 * plane);
    for (int v = 0; v < cam.height; ++v)
        for (int u = 0; u < cam.width; ++u) {
            const PlueckerRay r = pluecker_from_pixel(cam, u, v);
            const std::size_t i = static_cast<std::size_t>(v) * cam.width + u;
            for (int k = 0; k < 3; ++k) {
                out[k * plane + i] = static_cast<float>(r.direction[k]);
                out[(3 + k) * plane + i] = static_cast<float>(r.moment[k]);
            }
        }
    return out;
}

inline void write_pluecker_map(const std::filesystem::path& path, const CameraModel& cam) {
    const auto data = pluecker_map(cam);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
}

}  // namespace pano3d::splat
