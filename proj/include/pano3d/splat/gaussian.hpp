#pragma once

#include "pano3d/errors.hpp"
#include "pano3d/math.hpp"

#include <Eigen/Core>

#include <cmath>
#include <vector>

namespace pano3d::splat {

using Vec4 = Eigen::Vector4d;  // quaternion stored w, x, y, z

struct Gaussian3D {
    Vec3 position = Vec3::Zero();
    Vec3 log_scale = Vec3::Constant(-3.0);
    Vec4 rotation{1.0, 0.0, 0.0, 0.0};
    double opacity_logit = 0.0;
    Vec3 color{0.5, 0.5, 0.5};

    double opacity() const { return sigmoid(opacity_logit); }
    Vec3 scale() const { return log_scale.array().exp(); }
    Vec4 unit_rotation() const { return rotation / rotation.norm(); }

    bool finite() const {
        return position.allFinite() && log_scale.allFinite() && rotation.allFinite() && std::isfinite(opacity_logit) &&
               color.allFinite() && rotation.norm() > 0.0;
    }
};

/// Same layout as Gaussian3D, holding d loss / d parameter.
struct GaussianGrad {
    Vec3 position = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Vec4 rotation = Vec4::Zero();
    double opacity_logit = 0.0;
    Vec3 color = Vec3::Zero();

    GaussianGrad& operator+=(const GaussianGrad& o) {
        position += o.position;
        log_scale += o.log_scale;
        rotation += o.rotation;
        opacity_logit += o.opacity_logit;
        color += o.color;
        return *this;
    }
};

struct GaussianScene {
    std::vector<Gaussian3D> gaussians;
    double scene_scale = 1.0;  // world units -> normalised units factor applied at ingestion

    std::size_t size() const noexcept { return gaussians.size(); }
    bool empty() const noexcept { return gaussians.empty(); }
    bool finite() const {
        for (const auto& g : gaussians)
            if (!g.finite()) return false;
        return true;
    }
};

/// Rotation matrix of the normalised quaternion (w, x, y, z).
inline Mat3 quat_to_matrix(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// Sigma = R S S^T R^T
inline Mat3 covariance3d(const Gaussian3D& g) {
    const Mat3 rs = quat_to_matrix(g.unit_rotation()) * g.scale().asDiagonal();
    return rs * rs.transpose();
}

}  // namespace pano3d::splat
