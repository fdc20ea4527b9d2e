#pragma once

// Reference implementations shared by the unit tests and the acceptance runner.

#include "pano3d/pano_geometry.hpp"
#include "pano3d/splat/camera.hpp"
#include "pano3d/splat/gaussian.hpp"
#include "pano3d/splat/rasterizer.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <vector>

namespace pano3d::oracle {

using namespace pano3d::splat;

inline CameraModel test_camera(int w = 16, int h = 16, double f = 14.0) {
    CameraModel c;
    c.width = w;
    c.height = h;
    c.fx = c.fy = f;
    c.cx = w / 2.0;
    c.cy = h / 2.0;
    return c;
}

inline Gaussian3D random_gaussian(Rng& rng, double spread, double depth_lo, double depth_hi) {
    Gaussian3D g;
    g.position = {uniform(rng, -spread, spread), uniform(rng, -spread, spread), uniform(rng, depth_lo, depth_hi)};
    g.log_scale = {std::log(uniform(rng, 0.12, 0.3)), std::log(uniform(rng, 0.12, 0.3)), std::log(uniform(rng, 0.12, 0.3))};
    g.rotation = {uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
    g.opacity_logit = logit(uniform(rng, 0.3, 0.75));
    g.color = {uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1)};
    return g;
}

inline double max_abs_diff(const ImageD& a, const ImageD& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

// Per pixel: evaluate every gaussian, sort by depth and iterate the compositing sum.
// With shared_projection the 2D mean and conic come from project_gaussian, so the
// result must agree bit for bit; otherwise they are recomputed here from scratch and
// agree up to rounding.
inline ImageD brute_force(const GaussianScene& scene, const CameraModel& cam, const Vec3& bg, bool shared_projection) {
    ImageD out(cam.width, cam.height, 3);
    struct Item { double depth; double alpha; Vec3 color; };
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            std::vector<Item> items;
            for (const auto& g : scene.gaussians) {
                const Mat3 w = cam.world_from_camera.transpose();
                const Vec3 t = w * (g.position - cam.position);
                if (t.z() <= kNearPlane) continue;
                Eigen::Matrix<double, 2, 3> J;
                J << cam.fx / t.z(), 0, -cam.fx * t.x() / (t.z() * t.z()), 0, cam.fy / t.z(),
                    -cam.fy * t.y() / (t.z() * t.z());
                Mat2 cov = J * w * covariance3d(g) * w.transpose() * J.transpose();
                cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
                cov += kCovarianceFloor * Mat2::Identity();
                const Vec2 mean(cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy);
                Vec2 d(x + 0.5 - mean.x(), y + 0.5 - mean.y());
                double q = d.dot(cov.inverse() * d);
                if (shared_projection) {
                    const auto p = project_gaussian(g, cam);
                    d = Vec2(x + 0.5 - p->mean.x(), y + 0.5 - p->mean.y());
                    q = p->conic(0, 0) * d.x() * d.x() + 2.0 * p->conic(0, 1) * d.x() * d.y() +
                        p->conic(1, 1) * d.y() * d.y();
                }
                const double a = std::min(0.99, g.opacity() * std::exp(-0.5 * q));
                if (a < 1.0 / 255.0) continue;
                items.push_back({t.z(), a, g.color});
            }
            std::stable_sort(items.begin(), items.end(), [](auto& a, auto& b) { return a.depth < b.depth; });
            Vec3 c = Vec3::Zero();
            double T = 1.0;
            for (const auto& it : items) {
                if (T * (1 - it.alpha) < 1e-4) break;
                c += it.color * (it.alpha * T);
                T *= 1 - it.alpha;
            }
            c += T * bg;
            for (int k = 0; k < 3; ++k) out.at(x, y, k) = c[k];
        }
    return out;
}

inline double weighted_loss(const ImageD& img, const ImageD& weights) {
    double s = 0;
    for (std::size_t i = 0; i < img.data().size(); ++i) s += img.data()[i] * weights.data()[i];
    return s;
}

inline ImageD random_weights(Rng& rng, int w, int h) {
    ImageD out(w, h, 3);
    for (auto& v : out.data()) v = uniform(rng, -1, 1);
    return out;
}

// Flat parameter view of one gaussian, 14 values.
inline double& param(Gaussian3D& g, int k) {
    if (k < 3) return g.position[k];
    if (k < 6) return g.log_scale[k - 3];
    if (k < 10) return g.rotation[k - 6];
    if (k == 10) return g.opacity_logit;
    return g.color[k - 11];
}

inline double grad_param(const GaussianGrad& g, int k) {
    if (k < 3) return g.position[k];
    if (k < 6) return g.log_scale[k - 3];
    if (k < 10) return g.rotation[k - 6];
    if (k == 10) return g.opacity_logit;
    return g.color[k - 11];
}

inline GaussianScene fd_scene(std::uint64_t seed, int n) {
    Rng rng(seed);
    GaussianScene s;
    for (int i = 0; i < n; ++i) s.gaussians.push_back(random_gaussian(rng, 0.35, 1.2, 2.2));
    return s;
}

struct FdEstimate {
    double value = 0.0;
    double step = 0.0;
    bool refined = false;  // the first step straddled a jump of the forward pass
};

// Central difference of f at x. The alpha cutoff makes the rendered image piecewise smooth
// with small jumps; when the two one-sided differences disagree the step straddles one, so
// it shrinks by 10x (at most twice).
inline FdEstimate central_difference(const std::function<double(double)>& f, double x, double h = 1e-4) {
    const double f0 = f(x);
    FdEstimate e;
    for (int round = 0; round < 3; ++round, h *= 0.1) {
        const double fp = f(x + h), fm = f(x - h);
        const double fwd = (fp - f0) / h, bwd = (f0 - fm) / h;
        e = {(fp - fm) / (2 * h), h, round > 0};
        if (std::abs(fwd - bwd) <= 0.1 * std::max({std::abs(fwd), std::abs(bwd), 1e-3})) break;
    }
    return e;
}

// d(weighted render loss)/d(parameter k of gaussian i) by central_difference.
inline FdEstimate render_partial(const GaussianScene& s, const CameraModel& cam, const Vec3& bg, const ImageD& wts,
                                 std::size_t i, int k) {
    GaussianScene probe = s;
    const double x0 = param(probe.gaussians[i], k);
    return central_difference(
        [&](double x) {
            param(probe.gaussians[i], k) = x;
            return weighted_loss(rasterize(probe, cam, {bg}).color, wts);
        },
        x0);
}

// Smooth function of direction used as a band-limited equirect image.
inline Vec3 smooth_color(const Vec3& d) {
    return {0.5 + 0.3 * d.x() + 0.1 * d.y() * d.z(), 0.5 + 0.25 * d.z() - 0.15 * d.x() * d.y(),
            0.5 + 0.2 * d.y() + 0.2 * (d.x() * d.x() - d.z() * d.z())};
}

inline EquirectFrame smooth_frame(int h) {
    ImageF img(2 * h, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < 2 * h; ++x) {
            const Vec3 c = smooth_color(dir_from_equirect(x, y, 2 * h, h).vec());
            for (int k = 0; k < 3; ++k) img.at(x, y, k) = static_cast<float>(c[k]);
        }
    return EquirectFrame(std::move(img));
}

}  // namespace pano3d::oracle
