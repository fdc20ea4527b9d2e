#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <random>

namespace pano3d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

using Rng = std::mt19937_64;

inline constexpr double kPi = std::numbers::pi;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(rng);
}

/// Rotation about +Y that takes +Z to (sin yaw, 0, cos yaw).
inline Mat3 rotation_yaw(double yaw_rad) {
    const double c = std::cos(yaw_rad), s = std::sin(yaw_rad);
    Mat3 r;
    r << c, 0, s,
         0, 1, 0,
        -s, 0, c;
    return r;
}

/// Rotation about +X that takes +Z to (0, sin pitch, cos pitch), i.e. positive pitch looks up.
inline Mat3 rotation_pitch(double pitch_rad) {
    const double c = std::cos(pitch_rad), s = std::sin(pitch_rad);
    Mat3 r;
    r << 1, 0, 0,
         0, c, s,
         0, -s, c;
    return r;
}

/// Forward axis +Z mapped to the direction with the given yaw and pitch; roll is zero.
inline Mat3 rotation_yaw_pitch(double yaw_rad, double pitch_rad) {
    return rotation_yaw(yaw_rad) * rotation_pitch(pitch_rad);
}

inline Quat normalized_quat(const Mat3& r) {
    Quat q(r);
    q.normalize();
    if (q.w() < 0) q.coeffs() = -q.coeffs();
    return q;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace pano3d
