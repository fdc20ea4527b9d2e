#pragma once

#include "pano3d/errors.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace pano3d::diffusion {

/// Dense T x C x H x W tensor. Images are T == 1.
struct LatentSequence {
    int t_len = 1;
    int channels = 3;
    int height = 8;
    int width = 8;
    std::vector<double> values;

    LatentSequence() = default;
    LatentSequence(int t, int c, int h, int w, double fill = 0.0) : t_len(t), channels(c), height(h), width(w) {
        if (t < 1 || c < 1 || h < 1 || w < 1) throw DomainError("latent dimensions must be >= 1");
        values.assign(static_cast<std::size_t>(t) * c * h * w, fill);
    }

    std::size_t size() const noexcept { return values.size(); }
    std::size_t index(int t, int c, int y, int x) const noexcept {
        return ((static_cast<std::size_t>(t) * channels + c) * height + y) * width + x;
    }
    double& at(int t, int c, int y, int x) { return values[index(t, c, y, x)]; }
    double at(int t, int c, int y, int x) const { return values[index(t, c, y, x)]; }

    bool same_shape(const LatentSequence& o) const noexcept {
        return t_len == o.t_len && channels == o.channels && height == o.height && width == o.width;
    }
    std::string shape_string() const {
        return std::to_string(t_len) + "x" + std::to_string(channels) + "x" + std::to_string(height) + "x" +
               std::to_string(width);
    }

    friend bool operator==(const LatentSequence&, const LatentSequence&) = default;
};

/// K x D token matrix, row-major. Remembers the latent shape it came from.
struct TokenGrid {
    int k = 0;
    int d = 0;
    int patch = 1;
    int t_len = 1, channels = 1, height = 1, width = 1;
    std::vector<double> values;

    double* row(int i) { return values.data() + static_cast<std::size_t>(i) * d; }
    const double* row(int i) const { return values.data() + static_cast<std::size_t>(i) * d; }
};

/// Tokens ordered (t, patch row, patch col); features ordered (c, dy, dx).
inline TokenGrid patchify(const LatentSequence& x, int p) {
    if (p < 1 || x.height % p != 0 || x.width % p != 0)
        throw DomainError("patchify: patch size " + std::to_string(p) + " does not divide " + x.shape_string());
    TokenGrid g;
    g.patch = p;
    g.t_len = x.t_len;
    g.channels = x.channels;
    g.height = x.height;
    g.width = x.width;
    const int ph = x.height / p, pw = x.width / p;
    g.k = x.t_len * ph * pw;
    g.d = x.channels * p * p;
    g.values.resize(static_cast<std::size_t>(g.k) * g.d);
    int tok = 0;
    for (int t = 0; t < x.t_len; ++t)
        for (int by = 0; by < ph; ++by)
            for (int bx = 0; bx < pw; ++bx, ++tok) {
                double* r = g.row(tok);
                int f = 0;
                for (int c = 0; c < x.channels; ++c)
                    for (int dy = 0; dy < p; ++dy)
                        for (int dx = 0; dx < p; ++dx) r[f++] = x.at(t, c, by * p + dy, bx * p + dx);
            }
    return g;
}

inline LatentSequence unpatchify(const TokenGrid& g) {
    LatentSequence x(g.t_len, g.channels, g.height, g.width);
    const int p = g.patch, ph = g.height / p, pw = g.width / p;
    if (g.k != g.t_len * ph * pw || g.d != g.channels * p * p ||
        g.values.size() != static_cast<std::size_t>(g.k) * g.d)
        throw DomainError("unpatchify: inconsistent token grid");
    int tok = 0;
    for (int t = 0; t < g.t_len; ++t)
        for (int by = 0; by < ph; ++by)
            for (int bx = 0; bx < pw; ++bx, ++tok) {
                const double* r = g.row(tok);
                int f = 0;
                for (int c = 0; c < g.channels; ++c)
                    for (int dy = 0; dy < p; ++dy)
                        for (int dx = 0; dx < p; ++dx) x.at(t, c, by * p + dy, bx * p + dx) = r[f++];
            }
    return x;
}

}  // namespace pano3d::diffusion
