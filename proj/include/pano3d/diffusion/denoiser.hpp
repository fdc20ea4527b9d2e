#pragma once

// Toy noise predictor f(x_t; c, t) over patch tokens.
//
//   s    = W_t * temb(t) + W_c * c                (shared by all tokens)
//   h_0  = tanh(W_in * x + b_in + s)
//   h_l  = h_{l-1} + tanh(W_l * h_{l-1} + b_l)    l = 1 .. hidden_layers-1
//   out  = W_out * h_last + b_out
//
// Parameters live in one flat vector; backward() is hand derived.

#include "pano3d/diffusion/tensor.hpp"
#include "pano3d/errors.hpp"
#include "pano3d/math.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace pano3d::diffusion {

struct DenoiserConfig {
    int token_dim = 48;
    int hidden = 32;
    int hidden_layers = 2;
    int cond_dim = 8;
    int time_dim = 16;
};

/// Sinusoidal embedding of a timestep: [sin(t w_i), cos(t w_i)] with geometric w_i.
inline Eigen::VectorXd timestep_embedding(int t, int dim) {
    Eigen::VectorXd e(dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half));
        e[2 * i] = std::sin(t * freq);
        e[2 * i + 1] = std::cos(t * freq);
    }
    if (dim % 2) e[dim - 1] = 0.0;
    return e;
}

class Denoiser {
public:
    using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using CMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using VecMap = Eigen::Map<Eigen::VectorXd>;
    using CVecMap = Eigen::Map<const Eigen::VectorXd>;

    Denoiser() = default;
    explicit Denoiser(const DenoiserConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
        if (cfg.token_dim < 1 || cfg.hidden < 1 || cfg.hidden_layers < 1 || cfg.cond_dim < 0 || cfg.time_dim < 0)
            throw DomainError("denoiser: invalid dimensions");
        layout();
        theta_.assign(n_params_, 0.0);
        Rng rng(seed);
        auto fill = [&](std::size_t off, int rows, int cols, double scale) {
            for (int i = 0; i < rows * cols; ++i) theta_[off + i] = gaussian(rng, 0.0, scale / std::sqrt(cols));
        };
        fill(w_in_, cfg.hidden, cfg.token_dim, 1.0);
        fill(w_t_, cfg.hidden, cfg.time_dim, 1.0);
        if (cfg.cond_dim > 0) fill(w_c_, cfg.hidden, cfg.cond_dim, 1.0);
        for (std::size_t l = 0; l < w_res_.size(); ++l) fill(w_res_[l], cfg.hidden, cfg.hidden, 0.5);
        fill(w_out_, cfg.token_dim, cfg.hidden, 1.0);
    }

    const DenoiserConfig& config() const noexcept { return cfg_; }
    std::size_t n_params() const noexcept { return n_params_; }
    std::span<const double> params() const noexcept { return theta_; }
    std::span<double> params() noexcept { return theta_; }

    /// Activations kept for the backward pass.
    struct Cache {
        TokenGrid input;
        Eigen::VectorXd temb;
        Eigen::VectorXd cond;
        std::vector<Eigen::MatrixXd> h;  // per layer, hidden x K
    };

    TokenGrid forward(const TokenGrid& x, std::span<const double> cond, int t, Cache* cache = nullptr) const {
        check_input(x, cond);
        const int H = cfg_.hidden, K = x.k, D = x.d;
        const Eigen::VectorXd temb = timestep_embedding(t, cfg_.time_dim);
        const CVecMap c(cond.data(), static_cast<Eigen::Index>(cond.size()));
        Eigen::VectorXd shared = cmat(w_t_, H, cfg_.time_dim) * temb;
        if (cfg_.cond_dim > 0) shared += cmat(w_c_, H, cfg_.cond_dim) * c;

        // Column i is token i.
        const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>> X(x.values.data(),
                                                                                                        D, K);
        std::vector<Eigen::MatrixXd> h;
        Eigen::MatrixXd z = cmat(w_in_, H, D) * X;
        z.colwise() += cvec(b_in_, H) + shared;
        h.push_back(z.array().tanh().matrix());
        for (std::size_t l = 0; l < w_res_.size(); ++l) {
            Eigen::MatrixXd zl = cmat(w_res_[l], H, H) * h.back();
            zl.colwise() += cvec(b_res_[l], H);
            h.push_back(h.back() + zl.array().tanh().matrix());
        }
        Eigen::MatrixXd out = cmat(w_out_, D, H) * h.back();
        out.colwise() += cvec(b_out_, D);

        TokenGrid y = x;
        Eigen::Map<Eigen::MatrixXd>(y.values.data(), D, K) = out;
        if (cache) {
            cache->input = x;
            cache->temb = temb;
            cache->cond = c;
            cache->h = std::move(h);
        }
        return y;
    }

    /// Accumulates dL/dtheta into `grad` given dL/d(output tokens).
    void backward(const Cache& cache, const TokenGrid& grad_out, std::span<double> grad) const {
        if (grad.size() != n_params_) throw DomainError("denoiser backward: gradient buffer size mismatch");
        const int H = cfg_.hidden, K = cache.input.k, D = cache.input.d;
        const Eigen::Map<const Eigen::MatrixXd> G(grad_out.values.data(), D, K);
        const Eigen::Map<const Eigen::MatrixXd> X(cache.input.values.data(), D, K);

        mat(grad, w_out_, D, H) += G * cache.h.back().transpose();
        vec(grad, b_out_, D) += G.rowwise().sum();
        Eigen::MatrixXd gh = cmat(w_out_, D, H).transpose() * G;

        for (std::size_t l = w_res_.size(); l-- > 0;) {
            const Eigen::MatrixXd& hprev = cache.h[l];
            const Eigen::MatrixXd branch = cache.h[l + 1] - hprev;  // tanh(z_l)
            const Eigen::MatrixXd gz = (gh.array() * (1.0 - branch.array().square())).matrix();
            mat(grad, w_res_[l], H, H) += gz * hprev.transpose();
            vec(grad, b_res_[l], H) += gz.rowwise().sum();
            gh += cmat(w_res_[l], H, H).transpose() * gz;
        }

        const Eigen::MatrixXd gz0 = (gh.array() * (1.0 - cache.h[0].array().square())).matrix();
        mat(grad, w_in_, H, D) += gz0 * X.transpose();
        const Eigen::VectorXd gs = gz0.rowwise().sum();
        vec(grad, b_in_, H) += gs;
        mat(grad, w_t_, H, cfg_.time_dim) += gs * cache.temb.transpose();
        if (cfg_.cond_dim > 0) mat(grad, w_c_, H, cfg_.cond_dim) += gs * cache.cond.transpose();
    }

private:
    void layout() {
        const int H = cfg_.hidden, D = cfg_.token_dim;
        std::size_t off = 0;
        auto take = [&](std::size_t n) {
            const std::size_t o = off;
            off += n;
            return o;
        };
        w_in_ = take(static_cast<std::size_t>(H) * D);
        b_in_ = take(H);
        w_t_ = take(static_cast<std::size_t>(H) * cfg_.time_dim);
        w_c_ = take(static_cast<std::size_t>(H) * cfg_.cond_dim);
        for (int l = 1; l < cfg_.hidden_layers; ++l) {
            w_res_.push_back(take(static_cast<std::size_t>(H) * H));
            b_res_.push_back(take(H));
        }
        w_out_ = take(static_cast<std::size_t>(D) * H);
        b_out_ = take(D);
        n_params_ = off;
    }

    void check_input(const TokenGrid& x, std::span<const double> cond) const {
        if (x.d != cfg_.token_dim) throw DomainError("denoiser: token dim mismatch");
        if (static_cast<int>(cond.size()) != cfg_.cond_dim) throw DomainError("denoiser: condition dim mismatch");
    }

    CMatMap cmat(std::size_t off, int r, int c) const { return CMatMap(theta_.data() + off, r, c); }
    CVecMap cvec(std::size_t off, int n) const { return CVecMap(theta_.data() + off, n); }
    static MatMap mat(std::span<double> g, std::size_t off, int r, int c) { return MatMap(g.data() + off, r, c); }
    static VecMap vec(std::span<double> g, std::size_t off, int n) { return VecMap(g.data() + off, n); }

    DenoiserConfig cfg_;
    std::vector<double> theta_;
    std::size_t n_params_ = 0;
    std::size_t w_in_ = 0, b_in_ = 0, w_t_ = 0, w_c_ = 0, w_out_ = 0, b_out_ = 0;
    std::vector<std::size_t> w_res_, b_res_;
};

}  // namespace pano3d::diffusion
