#pragma once

// Pinhole camera in the COLMAP/OpenCV convention: x right, y down, z forward,
// pixel (i, j) centred at continuous coordinates (i + 0.5, j + 0.5).

#include "pano3d/capture_prep.hpp"
#include "pano3d/errors.hpp"
#include "pano3d/image.hpp"
#include "pano3d/math.hpp"
#include "pano3d/pano_geometry.hpp"

#include <filesystem>
#include <string>

namespace pano3d::splat {

struct CameraModel {
    int width = 0;
    int height = 0;
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    Mat3 world_from_camera = Mat3::Identity();
    Vec3 position = Vec3::Zero();

    Mat3 camera_from_world() const { return world_from_camera.transpose(); }

    void validate() const {
        if (width < 1 || height < 1) throw DomainError("camera: empty image");
        if (!(fx > 0 && fy > 0)) throw DomainError("camera: focal length must be positive");
        const Mat3 rrt = world_from_camera * world_from_camera.transpose();
        if ((rrt - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 || world_from_camera.determinant() < 0)
            throw DomainError("camera: rotation not orthonormal");
    }
};

/// Camera with an image (loaded on demand) and an optional per-pixel loss weight.
struct PosedImage {
    std::string name;
    CameraModel camera;
    std::filesystem::path image_path;
    ImageD image;   // empty until loaded
    LossMask mask;  // empty = every pixel counts
};

/// y-flip between the panorama frame (x right, y up, z forward) and the COLMAP camera frame.
inline Mat3 flip_y() { return Vec3(1.0, -1.0, 1.0).asDiagonal(); }

/// COLMAP-convention camera for a crop taken at `position` with panorama-frame rotation `world_from_crop`.
/// Both world and camera frames are y-flipped so the result stays a proper rotation.
inline CameraModel camera_from_crop(const PerspectiveCamera& crop, const Mat3& world_from_crop, const Vec3& position) {
    CameraModel cam;
    cam.width = crop.width;
    cam.height = crop.height;
    cam.fx = cam.fy = crop.focal();
    cam.cx = crop.width / 2.0;
    cam.cy = crop.height / 2.0;
    cam.world_from_camera = flip_y() * world_from_crop * flip_y();
    cam.position = flip_y() * position;
    return cam;
}

}  // namespace pano3d::splat
