#pragma once

#include "pano3d/diffusion/tensor.hpp"
#include "pano3d/errors.hpp"

#include <cmath>
#include <vector>

namespace pano3d::diffusion {

/// Cumulative signal fractions, alpha_bar[0] = 1 and strictly decreasing.
struct NoiseSchedule {
    std::vector<double> alpha_bar;

    int n_steps() const noexcept { return static_cast<int>(alpha_bar.size()); }

    /// alpha_bar linear in t from 1 down to `final_alpha_bar`.
    static NoiseSchedule linear(int n_steps = 1000, double final_alpha_bar = 1e-3) {
        if (n_steps < 1) throw DomainError("schedule needs at least one step");
        if (!(final_alpha_bar > 0.0 && final_alpha_bar < 1.0)) throw DomainError("final alpha_bar must be in (0,1)");
        NoiseSchedule s;
        s.alpha_bar.resize(n_steps);
        for (int t = 0; t < n_steps; ++t)
            s.alpha_bar[t] = n_steps == 1 ? 1.0 : 1.0 - (1.0 - final_alpha_bar) * t / (n_steps - 1);
        return s;
    }
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline LatentSequence forward_diffuse(const LatentSequence& x0, int t, const LatentSequence& eps,
                                      const NoiseSchedule& sched) {
    if (!x0.same_shape(eps)) throw DomainError("forward_diffuse: noise shape " + eps.shape_string() +
                                               " != latent shape " + x0.shape_string());
    if (t < 0 || t >= sched.n_steps()) throw DomainError("forward_diffuse: timestep out of range");
    const double a = std::sqrt(sched.alpha_bar[t]);
    const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
    LatentSequence xt = x0;
    for (std::size_t i = 0; i < xt.values.size(); ++i) xt.values[i] = a * x0.values[i] + b * eps.values[i];
    return xt;
}

}  // namespace pano3d::diffusion
