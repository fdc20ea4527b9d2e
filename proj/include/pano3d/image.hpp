#pragma once

#include "pano3d/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace pano3d {

/// Row-major interleaved image. Colour images use three channels in [0,1].
template <typename T>
class Image {
public:
    using value_type = T;

    Image() = default;
    Image(int width, int height, int channels = 3, T fill = T{})
        : width_(width), height_(height), channels_(channels) {
        if (width < 0 || height < 0 || channels <= 0)
            throw DomainError("image dimensions must be non-negative");
        data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int channels() const noexcept { return channels_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
    const T& at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

    std::span<T> pixel(int x, int y) { return {data_.data() + index(x, y, 0), static_cast<std::size_t>(channels_)}; }
    std::span<const T> pixel(int x, int y) const {
        return {data_.data() + index(x, y, 0), static_cast<std::size_t>(channels_)};
    }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }

    bool same_shape(const Image& o) const noexcept {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }

    template <typename U>
    Image<U> cast() const {
        Image<U> out(width_, height_, channels_);
        std::transform(data_.begin(), data_.end(), out.data().begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int x, int y, int c) const noexcept {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<T> data_;
};

using ImageF = Image<float>;
using ImageD = Image<double>;

/// Bilinear sample at continuous pixel coordinates (integer = pixel centre).
/// Columns wrap when `wrap_x` is set, otherwise clamp; rows always clamp.
template <typename T>
void sample_bilinear(const Image<T>& img, double x, double y, bool wrap_x, std::span<double> out) {
    const int w = img.width(), h = img.height();
    const double fx = std::floor(x), fy = std::floor(y);
    const double ax = x - fx, ay = y - fy;
    int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    int x1 = x0 + 1, y1 = y0 + 1;
    if (wrap_x) {
        x0 = ((x0 % w) + w) % w;
        x1 = ((x1 % w) + w) % w;
    } else {
        x0 = std::clamp(x0, 0, w - 1);
        x1 = std::clamp(x1, 0, w - 1);
    }
    y0 = std::clamp(y0, 0, h - 1);
    y1 = std::clamp(y1, 0, h - 1);
    for (int c = 0; c < img.channels(); ++c) {
        const double top = (1 - ax) * img.at(x0, y0, c) + ax * img.at(x1, y0, c);
        const double bot = (1 - ax) * img.at(x0, y1, c) + ax * img.at(x1, y1, c);
        out[c] = (1 - ay) * top + ay * bot;
    }
}

/// Nearest-pixel sample, same boundary handling as sample_bilinear.
template <typename T>
void sample_nearest(const Image<T>& img, double x, double y, bool wrap_x, std::span<double> out) {
    const int w = img.width(), h = img.height();
    int xi = static_cast<int>(std::floor(x + 0.5));
    int yi = std::clamp(static_cast<int>(std::floor(y + 0.5)), 0, h - 1);
    xi = wrap_x ? ((xi % w) + w) % w : std::clamp(xi, 0, w - 1);
    for (int c = 0; c < img.channels(); ++c) out[c] = img.at(xi, yi, c);
}

template <typename T, typename U>
double mean_abs_diff(const Image<T>& a, const Image<U>& b) {
    if (a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels())
        throw DomainError("mean_abs_diff: image shape mismatch");
    if (a.size() == 0) return 0.0;
    double acc = 0.0;
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) acc += std::abs(static_cast<double>(da[i]) - static_cast<double>(db[i]));
    return acc / static_cast<double>(da.size());
}

}  // namespace pano3d
