#pragma once

// EWA splatting with front-to-back alpha compositing and its analytic
// gradient.
//
// Per pixel, gaussians are visited in global depth order and
//   alpha_i = min(0.99, opacity_i * exp(-0.5 * d^T conic_i d))
// contributes c_i * alpha_i * T_i with T_i = prod_{j<i} (1 - alpha_j).
// Contributions with alpha < 1/255 are skipped and a pixel stops accepting
// splats once its transmittance would fall below 1e-4.

#include "pano3d/errors.hpp"
#include "pano3d/image.hpp"
#include "pano3d/math.hpp"
#include "pano3d/splat/camera.hpp"
#include "pano3d/splat/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <tuple>
#include <vector>

namespace pano3d::splat {

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCovarianceFloor = 0.3;  // px^2 added to the 2D covariance diagonal
inline constexpr double kAlphaMax = 0.99;
inline constexpr double kAlphaMin = 1.0 / 255.0;
inline constexpr double kTransmittanceMin = 1e-4;
// The Jacobian is evaluated with the mean's view-plane slope clamped to this multiple of the
// half field of view, so gaussians far outside the frustum do not blow up laterally.
inline constexpr double kJacobianFovGuard = 1.3;

struct Projection {
    Vec3 cam_point = Vec3::Zero();  // camera-frame mean
    Vec2 mean = Vec2::Zero();       // pixel coordinates
    Mat2 cov = Mat2::Identity();    // with the diagonal floor
    Mat2 conic = Mat2::Identity();  // inverse of cov
    double depth = 0.0;
    Eigen::Matrix<double, 2, 3> jacobian = Eigen::Matrix<double, 2, 3>::Zero();
    Mat3 cov_cam = Mat3::Zero();  // W Sigma W^T
    bool clamped_x = false, clamped_y = false;
    double jx = 0.0, jy = 0.0;  // camera-frame x, y used for the Jacobian
};

/// Projects one gaussian. Returns nullopt when it is culled (depth <= near plane).
inline std::optional<Projection> project_gaussian(const Gaussian3D& g, const CameraModel& cam) {
    const Mat3 w = cam.camera_from_world();
    Projection p;
    p.cam_point = w * (g.position - cam.position);
    p.depth = p.cam_point.z();
    if (!(p.depth > kNearPlane)) return std::nullopt;
    const double tx = p.cam_point.x(), ty = p.cam_point.y(), tz = p.depth;
    p.mean = {cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy};
    const double lim_x = kJacobianFovGuard * std::max(cam.cx, cam.width - cam.cx) / cam.fx;
    const double lim_y = kJacobianFovGuard * std::max(cam.cy, cam.height - cam.cy) / cam.fy;
    p.clamped_x = std::abs(tx / tz) > lim_x;
    p.clamped_y = std::abs(ty / tz) > lim_y;
    p.jx = p.clamped_x ? std::copysign(lim_x, tx) * tz : tx;
    p.jy = p.clamped_y ? std::copysign(lim_y, ty) * tz : ty;
    p.jacobian << cam.fx / tz, 0.0, -cam.fx * p.jx / (tz * tz),
                  0.0, cam.fy / tz, -cam.fy * p.jy / (tz * tz);
    p.cov_cam = w * covariance3d(g) * w.transpose();
    p.cov = p.jacobian * p.cov_cam * p.jacobian.transpose();
    p.cov(0, 1) = p.cov(1, 0) = 0.5 * (p.cov(0, 1) + p.cov(1, 0));
    p.cov(0, 0) += kCovarianceFloor;
    p.cov(1, 1) += kCovarianceFloor;
    const double det = p.cov.determinant();
    if (!(det > 0.0)) return std::nullopt;
    p.conic << p.cov(1, 1) / det, -p.cov(0, 1) / det,
               -p.cov(1, 0) / det, p.cov(0, 0) / det;
    return p;
}

struct RasterOptions {
    Vec3 background = Vec3::Zero();
};

/// Screen-space footprint of one visible gaussian in a render.
struct Splat {
    int index = 0;  // into the scene
    Projection proj;
    double opacity = 0.0;
    double q_cut = 0.0;  // beyond this power alpha is certainly below 1/255
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds
};

struct RenderResult {
    ImageD color;
    ImageD alpha;  // accumulated opacity, 1 - T_final
    // State kept for the backward pass.
    std::vector<Splat> splats;       // front-to-back
    std::vector<double> final_T;     // per pixel
    std::vector<int> last_splat;     // per pixel, index into splats or -1
    Vec3 background = Vec3::Zero();
};

/// Power q = d^T conic d at pixel centre (x + 0.5, y + 0.5).
inline double splat_power(const Projection& p, int x, int y, double& dx, double& dy) {
    dx = x + 0.5 - p.mean.x();
    dy = y + 0.5 - p.mean.y();
    return p.conic(0, 0) * dx * dx + 2.0 * p.conic(0, 1) * dx * dy + p.conic(1, 1) * dy * dy;
}

namespace detail {

/// Total order on gaussians used to break exact depth ties, independent of input order.
inline bool gaussian_less(const Gaussian3D& a, const Gaussian3D& b) {
    auto key = [](const Gaussian3D& g) {
        return std::make_tuple(g.position.x(), g.position.y(), g.position.z(), g.log_scale.x(), g.log_scale.y(),
                               g.log_scale.z(), g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3],
                               g.opacity_logit, g.color.x(), g.color.y(), g.color.z());
    };
    return key(a) < key(b);
}

/// Visible splats sorted front to back, each with a pixel box guaranteed to contain every
/// pixel where its alpha can reach the 1/255 threshold.
inline std::vector<Splat> prepare_splats(const GaussianScene& scene, const CameraModel& cam) {
    std::vector<Splat> splats;
    splats.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Gaussian3D& g = scene.gaussians[i];
        auto proj = project_gaussian(g, cam);
        if (!proj) continue;
        const double opacity = g.opacity();
        const double peak = std::min(kAlphaMax, opacity);
        if (peak < kAlphaMin) continue;
        // alpha >= 1/255 requires q <= 2 ln(255 * opacity).
        const double qmax = 2.0 * std::log(opacity / kAlphaMin);
        const double rx = std::sqrt(qmax * proj->cov(0, 0)) + 1e-6;
        const double ry = std::sqrt(qmax * proj->cov(1, 1)) + 1e-6;
        Splat s;
        s.index = static_cast<int>(i);
        s.opacity = opacity;
        s.q_cut = qmax * (1.0 + 1e-9) + 1e-9;
        const double fx0 = std::ceil(proj->mean.x() - rx - 0.5), fx1 = std::floor(proj->mean.x() + rx - 0.5);
        const double fy0 = std::ceil(proj->mean.y() - ry - 0.5), fy1 = std::floor(proj->mean.y() + ry - 0.5);
        if (fx1 < 0 || fy1 < 0 || fx0 > cam.width - 1 || fy0 > cam.height - 1) continue;
        s.x0 = static_cast<int>(std::max(0.0, fx0));
        s.x1 = static_cast<int>(std::min<double>(cam.width - 1, fx1));
        s.y0 = static_cast<int>(std::max(0.0, fy0));
        s.y1 = static_cast<int>(std::min<double>(cam.height - 1, fy1));
        s.proj = *proj;
        splats.push_back(s);
    }
    std::sort(splats.begin(), splats.end(), [&](const Splat& a, const Splat& b) {
        if (a.proj.depth != b.proj.depth) return a.proj.depth < b.proj.depth;
        return gaussian_less(scene.gaussians[a.index], scene.gaussians[b.index]);
    });
    return splats;
}

}  // namespace detail

inline RenderResult rasterize(const GaussianScene& scene, const CameraModel& cam, const RasterOptions& opt = {}) {
    if (scene.empty()) throw DomainError("rasterize: empty scene");
    cam.validate();
    const int w = cam.width, h = cam.height;
    const std::size_t npix = static_cast<std::size_t>(w) * h;

    RenderResult r;
    r.background = opt.background;
    r.splats = detail::prepare_splats(scene, cam);
    r.final_T.assign(npix, 1.0);
    r.last_splat.assign(npix, -1);
    std::vector<double> accum(3 * npix, 0.0);
    std::vector<char> done(npix, 0);

    for (std::size_t si = 0; si < r.splats.size(); ++si) {
        const Splat& s = r.splats[si];
        const Vec3& c = scene.gaussians[s.index].color;
        for (int y = s.y0; y <= s.y1; ++y)
            for (int x = s.x0; x <= s.x1; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * w + x;
                if (done[p]) continue;
                double dx, dy;
                const double q = splat_power(s.proj, x, y, dx, dy);
                if (q > s.q_cut) continue;
                const double alpha = std::min(kAlphaMax, s.opacity * std::exp(-0.5 * q));
                if (alpha < kAlphaMin) continue;
                const double T = r.final_T[p];
                const double next_T = T * (1.0 - alpha);
                if (next_T < kTransmittanceMin) {
                    done[p] = 1;
                    continue;
                }
                const double wgt = alpha * T;
                accum[3 * p] += c.x() * wgt;
                accum[3 * p + 1] += c.y() * wgt;
                accum[3 * p + 2] += c.z() * wgt;
                r.final_T[p] = next_T;
                r.last_splat[p] = static_cast<int>(si);
            }
    }

    r.color = ImageD(w, h, 3);
    r.alpha = ImageD(w, h, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            const double T = r.final_T[p];
            for (int k = 0; k < 3; ++k) r.color.at(x, y, k) = accum[3 * p + k] + T * opt.background[k];
            r.alpha.at(x, y) = 1.0 - T;
        }
    return r;
}

/// Gradients of a scalar loss w.r.t. every gaussian parameter, given d loss / d colour (3 channels).
/// Gaussians that were culled or never touched a pixel get zero gradient.
inline std::vector<GaussianGrad> rasterize_backward(const GaussianScene& scene, const CameraModel& cam,
                                                    const RenderResult& fwd, const ImageD& grad_color) {
    const int w = cam.width, h = cam.height;
    if (grad_color.width() != w || grad_color.height() != h || grad_color.channels() != 3)
        throw DomainError("rasterize_backward: gradient image shape mismatch");
    const std::size_t npix = static_cast<std::size_t>(w) * h;
    std::vector<GaussianGrad> grads(scene.size());

    std::vector<double> T = fwd.final_T;
    std::vector<double> behind(3 * npix);  // colour composited behind the current splat, incl. background
    for (std::size_t p = 0; p < npix; ++p)
        for (int k = 0; k < 3; ++k) behind[3 * p + k] = fwd.final_T[p] * fwd.background[k];

    for (std::size_t si = fwd.splats.size(); si-- > 0;) {
        const Splat& s = fwd.splats[si];
        const Gaussian3D& g = scene.gaussians[s.index];
        const Vec3& c = g.color;
        const Projection& pr = s.proj;

        Vec2 g_mean = Vec2::Zero();
        double g_a = 0, g_b = 0, g_c = 0;  // conic entries (b shared by both off-diagonals)
        double g_opacity = 0;
        Vec3 g_color = Vec3::Zero();
        bool touched = false;

        for (int y = s.y0; y <= s.y1; ++y)
            for (int x = s.x0; x <= s.x1; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * w + x;
                if (fwd.last_splat[p] < static_cast<int>(si)) continue;
                double dx, dy;
                const double q = splat_power(pr, x, y, dx, dy);
                if (q > s.q_cut) continue;
                const double G = std::exp(-0.5 * q);
                const double raw = s.opacity * G;
                const double alpha = std::min(kAlphaMax, raw);
                if (alpha < kAlphaMin) continue;
                touched = true;

                const double Tk = T[p] / (1.0 - alpha);
                const Vec3 gc(grad_color.at(x, y, 0), grad_color.at(x, y, 1), grad_color.at(x, y, 2));
                const Vec3 back(behind[3 * p], behind[3 * p + 1], behind[3 * p + 2]);

                g_color += alpha * Tk * gc;
                const double g_alpha = gc.dot(c * Tk - back / (1.0 - alpha));

                for (int k = 0; k < 3; ++k) behind[3 * p + k] += c[k] * alpha * Tk;
                T[p] = Tk;

                if (raw > kAlphaMax) continue;  // clamped: no dependence on opacity or shape
                g_opacity += g_alpha * G;
                const double g_q = -0.5 * G * s.opacity * g_alpha;
                g_mean.x() += g_q * -(2.0 * pr.conic(0, 0) * dx + 2.0 * pr.conic(0, 1) * dy);
                g_mean.y() += g_q * -(2.0 * pr.conic(0, 1) * dx + 2.0 * pr.conic(1, 1) * dy);
                g_a += g_q * dx * dx;
                g_b += g_q * 2.0 * dx * dy;
                g_c += g_q * dy * dy;
            }
        if (!touched) continue;

        GaussianGrad& out = grads[s.index];
        out.color += g_color;
        const double op = s.opacity;
        out.opacity_logit += g_opacity * op * (1.0 - op);

        // conic -> 2D covariance: dL/dSigma' = -K G_K K
        Mat2 gK;
        gK << g_a, 0.5 * g_b, 0.5 * g_b, g_c;
        const Mat2 gcov = -pr.conic * gK * pr.conic;

        // Sigma' = J M J^T (+ floor)
        const Eigen::Matrix<double, 2, 3>& J = pr.jacobian;
        const Mat3 gM = J.transpose() * gcov * J;
        const Eigen::Matrix<double, 2, 3> gJ = 2.0 * gcov * J * pr.cov_cam;

        // M = W Sigma W^T
        const Mat3 W = cam.camera_from_world();
        const Mat3 gSigma = W.transpose() * gM * W;

        // Sigma = (R S)(R S)^T
        const Vec4 qn = g.unit_rotation();
        const Mat3 R = quat_to_matrix(qn);
        const Vec3 scale = g.scale();
        const Mat3 RS = R * scale.asDiagonal();
        const Mat3 gRS = 2.0 * gSigma * RS;
        Mat3 gR;
        for (int j = 0; j < 3; ++j) {
            out.log_scale[j] += R.col(j).dot(gRS.col(j)) * scale[j];
            gR.col(j) = gRS.col(j) * scale[j];
        }

        const double qw = qn[0], qx = qn[1], qy = qn[2], qz = qn[3];
        Mat3 dw, dxq, dyq, dzq;
        dw << 0, -2 * qz, 2 * qy, 2 * qz, 0, -2 * qx, -2 * qy, 2 * qx, 0;
        dxq << 0, 2 * qy, 2 * qz, 2 * qy, -4 * qx, -2 * qw, 2 * qz, 2 * qw, -4 * qx;
        dyq << -4 * qy, 2 * qx, 2 * qw, 2 * qx, 0, 2 * qz, -2 * qw, 2 * qz, -4 * qy;
        dzq << -4 * qz, -2 * qw, 2 * qx, 2 * qw, -4 * qz, 2 * qy, 2 * qx, 2 * qy, 0;
        const Vec4 g_qn(gR.cwiseProduct(dw).sum(), gR.cwiseProduct(dxq).sum(), gR.cwiseProduct(dyq).sum(),
                        gR.cwiseProduct(dzq).sum());
        const double qnorm = g.rotation.norm();
        out.rotation += (g_qn - qn * qn.dot(g_qn)) / qnorm;

        // Mean and Jacobian both depend on the camera-frame point t.
        const double tx = pr.cam_point.x(), ty = pr.cam_point.y(), tz = pr.cam_point.z();
        const double fx = cam.fx, fy = cam.fy;
        Vec3 gt;
        // d J / d t, with a clamped coordinate entering only through tz.
        const double tz2 = tz * tz, tz3 = tz2 * tz;
        gt.x() = g_mean.x() * fx / tz + (pr.clamped_x ? 0.0 : gJ(0, 2) * (-fx / tz2));
        gt.y() = g_mean.y() * fy / tz + (pr.clamped_y ? 0.0 : gJ(1, 2) * (-fy / tz2));
        gt.z() = -g_mean.x() * fx * tx / tz2 - g_mean.y() * fy * ty / tz2 + gJ(0, 0) * (-fx / tz2) +
                 gJ(1, 1) * (-fy / tz2) +
                 gJ(0, 2) * (pr.clamped_x ? fx * pr.jx / tz3 : 2.0 * fx * tx / tz3) +
                 gJ(1, 2) * (pr.clamped_y ? fy * pr.jy / tz3 : 2.0 * fy * ty / tz3);
        out.position += W.transpose() * gt;
    }
    return grads;
}

}  // namespace pano3d::splat
