#pragma once

// Per-scene gaussian fitting: view subsampling, initialisation and an Adam
// optimiser over the masked L2 photometric loss.

#include "pano3d/errors.hpp"
#include "pano3d/image.hpp"
#include "pano3d/math.hpp"
#include "pano3d/splat/camera.hpp"
#include "pano3d/splat/gaussian.hpp"
#include "pano3d/splat/rasterizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <vector>

namespace pano3d::splat {

/// Stratified pick: `k` contiguous segments of the path, one uniform index from each.
/// Returns sorted indices into the input.
inline std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k > n) throw DomainError("subsample_views: k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " views");
    if (k == 0) throw DomainError("subsample_views: k must be positive");
    Rng rng(seed);
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t s = 0; s < k; ++s) {
        const std::size_t lo = s * n / k, hi = (s + 1) * n / k;
        std::uniform_int_distribution<std::size_t> pick(lo, hi - 1);
        out.push_back(pick(rng));
    }
    return out;
}

template <typename View>
std::vector<View> subsample_views(const std::vector<View>& views, std::size_t k, std::uint64_t seed) {
    std::vector<View> out;
    for (std::size_t i : subsample_indices(views.size(), k, seed)) out.push_back(views[i]);
    return out;
}

/// Mean distance to the `k` nearest other points, via a uniform hash grid.
inline std::vector<double> knn_mean_distance(const std::vector<Vec3>& pts, int k = 3) {
    const std::size_t n = pts.size();
    std::vector<double> out(n, 0.0);
    if (n < 2) {
        std::fill(out.begin(), out.end(), 0.01);
        return out;
    }
    Vec3 lo = pts[0], hi = pts[0];
    for (const auto& p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const double extent = std::max((hi - lo).maxCoeff(), 1e-9);
    // Roughly a couple of points per occupied cell for surface-like clouds.
    const double cell = std::max(extent / std::cbrt(static_cast<double>(n)) * 0.5, 1e-9);
    auto key = [&](long x, long y, long z) { return (x * 73856093L) ^ (y * 19349663L) ^ (z * 83492791L); };
    auto coord = [&](const Vec3& p) {
        return std::array<long, 3>{std::lround(std::floor((p.x() - lo.x()) / cell)),
                                   std::lround(std::floor((p.y() - lo.y()) / cell)),
                                   std::lround(std::floor((p.z() - lo.z()) / cell))};
    };
    std::unordered_map<long, std::vector<std::size_t>> grid;
    grid.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = coord(pts[i]);
        grid[key(c[0], c[1], c[2])].push_back(i);
    }
    const int kk = static_cast<int>(std::min<std::size_t>(k, n - 1));
    std::vector<double> best;
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = coord(pts[i]);
        for (long r = 1;; ++r) {
            best.clear();
            for (long dx = -r; dx <= r; ++dx)
                for (long dy = -r; dy <= r; ++dy)
                    for (long dz = -r; dz <= r; ++dz) {
                        const auto it = grid.find(key(c[0] + dx, c[1] + dy, c[2] + dz));
                        if (it == grid.end()) continue;
                        for (std::size_t j : it->second)
                            if (j != i) best.push_back((pts[j] - pts[i]).squaredNorm());
                    }
            // Neighbours within r cells are exact only up to distance r * cell.
            if (static_cast<int>(best.size()) >= kk) {
                std::partial_sort(best.begin(), best.begin() + kk, best.end());
                if (best[kk - 1] <= (r * cell) * (r * cell) || r * cell > 2 * extent) break;
            } else if (r * cell > 2 * extent) {
                break;
            }
        }
        double s = 0;
        for (int j = 0; j < kk; ++j) s += std::sqrt(best[j]);
        out[i] = s / kk;
    }
    return out;
}

struct ReconstructConfig {
    std::size_t num_gaussians = 20000;
    int iterations = 4000;
    std::uint64_t seed = 0;
    double init_depth_min = 0.2;
    double init_depth_max = 2.0;
    double init_opacity = 0.1;
    double lr_position = 1.6e-4;
    double lr_position_final = 1.6e-6;
    double lr_log_scale = 5e-3;
    double lr_rotation = 1e-3;
    double lr_opacity = 0.05;
    double lr_color = 2.5e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-15;
    // Every `check_interval` iterations the loss over all views is measured; if it rose,
    // the last accepted state is restored and learning rates are halved.
    int check_interval = 100;
    double backoff = 0.5;
    Vec3 background = Vec3::Zero();
    std::function<void(int iteration, double full_loss)> on_check;
};

/// Initial gaussians. With sparse points, gaussians sit on (a subset of) the points; otherwise
/// random pixels of random views are back-projected to random depths. Scales come from
/// nearest-neighbour spacing.
inline GaussianScene initialize_scene(const std::vector<PosedImage>& views, const std::vector<Vec3>& points,
                                      const std::vector<Vec3>& point_colors, const ReconstructConfig& cfg) {
    if (cfg.num_gaussians == 0) throw DomainError("reconstruct: num_gaussians must be positive");
    Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
    std::vector<Vec3> pos;
    std::vector<Vec3> col;
    pos.reserve(cfg.num_gaussians);
    if (!points.empty()) {
        if (point_colors.size() != points.size()) throw DomainError("reconstruct: point colors size mismatch");
        std::vector<std::size_t> idx(points.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i = 0; i < std::min(idx.size(), cfg.num_gaussians); ++i) {
            pos.push_back(points[idx[i]]);
            col.push_back(point_colors[idx[i]]);
        }
    }
    const std::size_t from_points = pos.size();
    if (pos.size() < cfg.num_gaussians && from_points > 0) {
        // Too few points: duplicate with jitter on the scale of the local spacing.
        const auto spacing = knn_mean_distance(pos);
        while (pos.size() < cfg.num_gaussians) {
            const std::size_t j = std::uniform_int_distribution<std::size_t>(0, from_points - 1)(rng);
            pos.push_back(pos[j] + Vec3(gaussian(rng), gaussian(rng), gaussian(rng)) * 0.5 * spacing[j]);
            col.push_back(col[j]);
        }
    }
    while (pos.size() < cfg.num_gaussians) {
        const auto& v = views[std::uniform_int_distribution<std::size_t>(0, views.size() - 1)(rng)];
        const int u = std::uniform_int_distribution<int>(0, v.camera.width - 1)(rng);
        const int y = std::uniform_int_distribution<int>(0, v.camera.height - 1)(rng);
        const double depth = uniform(rng, cfg.init_depth_min, cfg.init_depth_max);
        const Vec3 local((u + 0.5 - v.camera.cx) / v.camera.fx, (y + 0.5 - v.camera.cy) / v.camera.fy, 1.0);
        pos.push_back(v.camera.position + v.camera.world_from_camera * (local * depth));
        col.push_back(Vec3(v.image.at(u, y, 0), v.image.at(u, y, 1), v.image.at(u, y, 2)));
    }
    const auto spacing = knn_mean_distance(pos);
    GaussianScene scene;
    scene.gaussians.resize(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i) {
        Gaussian3D& g = scene.gaussians[i];
        g.position = pos[i];
        g.log_scale = Vec3::Constant(std::log(std::clamp(spacing[i], 1e-4, 0.1)));
        g.rotation = Vec4(1, 0, 0, 0);
        g.opacity_logit = logit(cfg.init_opacity);
        g.color = col[i].cwiseMax(0.0).cwiseMin(1.0);
    }
    return scene;
}

/// Masked mean squared error over RGB, and its gradient w.r.t. the render.
inline double photometric_loss(const ImageD& render, const PosedImage& view, ImageD* grad) {
    const int w = render.width(), h = render.height();
    if (view.image.width() != w || view.image.height() != h || view.image.channels() != 3)
        throw DomainError("photometric_loss: target '" + view.name + "' does not match camera size");
    const bool masked = view.mask.width() > 0;
    if (masked && (view.mask.width() != w || view.mask.height() != h))
        throw DomainError("photometric_loss: mask '" + view.name + "' does not match camera size");
    std::size_t count = 0;
    double acc = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (!masked || view.mask.at(x, y)) ++count;
    if (grad) *grad = ImageD(w, h, 3);
    if (count == 0) return 0.0;
    const double norm = 1.0 / (3.0 * static_cast<double>(count));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (masked && !view.mask.at(x, y)) continue;
            for (int c = 0; c < 3; ++c) {
                const double r = render.at(x, y, c) - view.image.at(x, y, c);
                acc += r * r;
                if (grad) grad->at(x, y, c) = 2.0 * r * norm;
            }
        }
    return acc * norm;
}

/// Mean of the per-view losses.
inline double full_loss(const GaussianScene& scene, const std::vector<PosedImage>& views, const Vec3& background) {
    double s = 0;
    for (const auto& v : views) s += photometric_loss(rasterize(scene, v.camera, {background}).color, v, nullptr);
    return s / static_cast<double>(views.size());
}

/// Raised when the loss stops being finite; carries the last scene whose loss was finite.
class DivergenceError : public TrainingError {
public:
    DivergenceError(const std::string& what, GaussianScene last_valid, int iteration)
        : TrainingError(what), last_valid_(std::move(last_valid)), iteration_(iteration) {}
    const GaussianScene& last_valid() const noexcept { return last_valid_; }
    int iteration() const noexcept { return iteration_; }

private:
    GaussianScene last_valid_;
    int iteration_;
};

struct ReconstructResult {
    GaussianScene scene;
    std::vector<std::pair<int, double>> checks;  // (iteration, full loss) of accepted states
    int rejected_windows = 0;
    double final_lr_scale = 1.0;
};

namespace detail {

struct AdamState {
    std::vector<double> m, v;
    long step = 0;
};

constexpr int kParamsPerGaussian = 14;

inline void pack(const Gaussian3D& g, double* p) {
    for (int k = 0; k < 3; ++k) p[k] = g.position[k];
    for (int k = 0; k < 3; ++k) p[3 + k] = g.log_scale[k];
    for (int k = 0; k < 4; ++k) p[6 + k] = g.rotation[k];
    p[10] = g.opacity_logit;
    for (int k = 0; k < 3; ++k) p[11 + k] = g.color[k];
}

inline void pack(const GaussianGrad& g, double* p) {
    for (int k = 0; k < 3; ++k) p[k] = g.position[k];
    for (int k = 0; k < 3; ++k) p[3 + k] = g.log_scale[k];
    for (int k = 0; k < 4; ++k) p[6 + k] = g.rotation[k];
    p[10] = g.opacity_logit;
    for (int k = 0; k < 3; ++k) p[11 + k] = g.color[k];
}

inline void unpack(const double* p, Gaussian3D& g) {
    for (int k = 0; k < 3; ++k) g.position[k] = p[k];
    for (int k = 0; k < 3; ++k) g.log_scale[k] = p[3 + k];
    for (int k = 0; k < 4; ++k) g.rotation[k] = p[6 + k];
    g.opacity_logit = p[10];
    for (int k = 0; k < 3; ++k) g.color[k] = p[11 + k];
}

}  // namespace detail

/// Adam on every gaussian parameter, one view per iteration in a reshuffled cyclic order.
inline ReconstructResult optimize_scene(GaussianScene scene, const std::vector<PosedImage>& views,
                                        const ReconstructConfig& cfg) {
    if (views.size() < 2) throw DomainError("reconstruct: need at least 2 views, got " + std::to_string(views.size()));
    if (scene.empty()) throw DomainError("reconstruct: empty initial scene");
    if (cfg.iterations < 0 || cfg.check_interval < 1) throw DomainError("reconstruct: bad iteration settings");
    for (const auto& v : views) {
        v.camera.validate();
        if (v.image.width() != v.camera.width || v.image.height() != v.camera.height)
            throw DomainError("reconstruct: view '" + v.name + "' has no image of the camera size");
    }
    using detail::kParamsPerGaussian;
    const std::size_t n = scene.size();
    std::vector<double> params(n * kParamsPerGaussian), grad(n * kParamsPerGaussian);
    for (std::size_t i = 0; i < n; ++i) detail::pack(scene.gaussians[i], &params[i * kParamsPerGaussian]);
    detail::AdamState adam{std::vector<double>(params.size(), 0.0), std::vector<double>(params.size(), 0.0), 0};

    ReconstructResult res;
    double lr_scale = 1.0;
    double accepted_loss = full_loss(scene, views, cfg.background);
    if (!std::isfinite(accepted_loss)) throw DivergenceError("reconstruct: initial loss is not finite", scene, 0);
    res.checks.emplace_back(0, accepted_loss);
    if (cfg.on_check) cfg.on_check(0, accepted_loss);
    std::vector<double> saved_params = params;
    detail::AdamState saved_adam = adam;
    GaussianScene last_valid = scene;

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(views.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    const std::array<double, kParamsPerGaussian> group = {0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 3, 4, 4, 4};
    for (int it = 1; it <= cfg.iterations; ++it) {
        if (cursor == order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const PosedImage& view = views[order[cursor++]];
        const RenderResult fwd = rasterize(scene, view.camera, {cfg.background});
        ImageD g_img;
        const double loss = photometric_loss(fwd.color, view, &g_img);
        if (!std::isfinite(loss))
            throw DivergenceError("reconstruct: non-finite loss at iteration " + std::to_string(it), last_valid, it);
        const auto grads = rasterize_backward(scene, view.camera, fwd, g_img);
        for (std::size_t i = 0; i < n; ++i) detail::pack(grads[i], &grad[i * kParamsPerGaussian]);

        const double t = cfg.iterations > 1 ? static_cast<double>(it - 1) / (cfg.iterations - 1) : 0.0;
        const double lr_pos = std::exp((1 - t) * std::log(cfg.lr_position) + t * std::log(cfg.lr_position_final));
        const std::array<double, 5> lr = {lr_pos, cfg.lr_log_scale, cfg.lr_rotation, cfg.lr_opacity, cfg.lr_color};
        ++adam.step;
        const double bc1 = 1 - std::pow(cfg.adam_beta1, static_cast<double>(adam.step));
        const double bc2 = 1 - std::pow(cfg.adam_beta2, static_cast<double>(adam.step));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double gi = grad[i];
            adam.m[i] = cfg.adam_beta1 * adam.m[i] + (1 - cfg.adam_beta1) * gi;
            adam.v[i] = cfg.adam_beta2 * adam.v[i] + (1 - cfg.adam_beta2) * gi * gi;
            const double step = lr[static_cast<int>(group[i % kParamsPerGaussian])] * lr_scale;
            params[i] -= step * (adam.m[i] / bc1) / (std::sqrt(adam.v[i] / bc2) + cfg.adam_eps);
        }
        for (std::size_t i = 0; i < n; ++i) {
            double* p = &params[i * kParamsPerGaussian];
            for (int k = 11; k < 14; ++k) p[k] = std::clamp(p[k], 0.0, 1.0);
            const double qn = std::sqrt(p[6] * p[6] + p[7] * p[7] + p[8] * p[8] + p[9] * p[9]);
            if (qn > 0 && std::isfinite(qn) && std::abs(qn - 1.0) > 1e-12)
                for (int k = 6; k < 10; ++k) p[k] /= qn;
            detail::unpack(p, scene.gaussians[i]);
        }
        if (!scene.finite())
            throw DivergenceError("reconstruct: parameters became non-finite at iteration " + std::to_string(it),
                                  last_valid, it);

        if (it % cfg.check_interval == 0 || it == cfg.iterations) {
            const double fl = full_loss(scene, views, cfg.background);
            if (!std::isfinite(fl))
                throw DivergenceError("reconstruct: non-finite loss at iteration " + std::to_string(it), last_valid, it);
            if (fl <= accepted_loss) {
                accepted_loss = fl;
                saved_params = params;
                saved_adam = adam;
                last_valid = scene;
                res.checks.emplace_back(it, fl);
                if (cfg.on_check) cfg.on_check(it, fl);
            } else {
                params = saved_params;
                adam = saved_adam;
                for (std::size_t i = 0; i < n; ++i) detail::unpack(&params[i * kParamsPerGaussian], scene.gaussians[i]);
                lr_scale *= cfg.backoff;
                ++res.rejected_windows;
            }
        }
    }
    res.scene = last_valid;
    res.final_lr_scale = lr_scale;
    return res;
}

inline ReconstructResult reconstruct(const std::vector<PosedImage>& views, const ReconstructConfig& cfg,
                                     const std::vector<Vec3>& points = {}, const std::vector<Vec3>& point_colors = {}) {
    if (views.size() < 2) throw DomainError("reconstruct: need at least 2 views, got " + std::to_string(views.size()));
    return optimize_scene(initialize_scene(views, points, point_colors, cfg), views, cfg);
}

}  // namespace pano3d::splat
