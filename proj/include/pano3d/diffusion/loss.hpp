#pragma once

#include "pano3d/capture_prep.hpp"
#include "pano3d/diffusion/tensor.hpp"
#include "pano3d/errors.hpp"

#include <algorithm>
#include <cmath>

namespace pano3d::diffusion {

struct MaskedLoss {
    double value = 0.0;
    LatentSequence grad_pred;  // d value / d eps_pred
    std::size_t included = 0;  // elements counted in the denominator
};

/// Squared noise-prediction error over included elements, divided by their count.
/// The H x W mask is broadcast over channels and frames.
inline MaskedLoss masked_loss(const LatentSequence& eps_true, const LatentSequence& eps_pred, const LossMask& m) {
    if (!eps_true.same_shape(eps_pred))
        throw DomainError("masked_loss: shape mismatch " + eps_true.shape_string() + " vs " + eps_pred.shape_string());
    if (m.width() != eps_true.width || m.height() != eps_true.height)
        throw DomainError("masked_loss: mask does not match latent spatial dims");

    MaskedLoss out;
    out.grad_pred = LatentSequence(eps_pred.t_len, eps_pred.channels, eps_pred.height, eps_pred.width);
    out.included = m.count() * static_cast<std::size_t>(eps_true.channels) * eps_true.t_len;
    if (out.included == 0) return out;

    const double inv = 1.0 / static_cast<double>(out.included);
    double acc = 0.0;
    for (int t = 0; t < eps_true.t_len; ++t)
        for (int c = 0; c < eps_true.channels; ++c)
            for (int y = 0; y < eps_true.height; ++y)
                for (int x = 0; x < eps_true.width; ++x) {
                    if (!m.at(x, y)) continue;
                    const std::size_t i = eps_true.index(t, c, y, x);
                    const double r = eps_true.values[i] - eps_pred.values[i];
                    acc += r * r;
                    out.grad_pred.values[i] = -2.0 * r * inv;
                }
    out.value = acc / static_cast<double>(out.included);
    return out;
}

inline double mse(const LatentSequence& a, const LatentSequence& b) {
    if (!a.same_shape(b)) throw DomainError("mse: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double r = a.values[i] - b.values[i];
        acc += r * r;
    }
    return acc / static_cast<double>(a.values.size());
}

/// Nearest neighbour with pixel-centre alignment.
inline LossMask resize_mask_nearest(const LossMask& m, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw DomainError("resize_mask_nearest: output dims must be >= 1");
    if (m.width() < 1 || m.height() < 1) throw DomainError("resize_mask_nearest: empty source mask");
    LossMask out(out_w, out_h);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(m.height() - 1, static_cast<int>(std::floor((y + 0.5) * m.height() / out_h)));
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(m.width() - 1, static_cast<int>(std::floor((x + 0.5) * m.width() / out_w)));
            out.set(x, y, m.at(sx, sy) != 0);
        }
    }
    return out;
}

}  // namespace pano3d::diffusion
