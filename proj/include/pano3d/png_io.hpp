#pragma once

// 8-bit PNG reading and writing via libpng. Float images are quantised with
// round(v * 255) after clamping to [0,1].

#include "pano3d/errors.hpp"
#include "pano3d/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace pano3d::png {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline std::uint8_t quantize(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace detail

/// Writes 1- or 3-channel 8-bit data.
inline void write_u8(const std::filesystem::path& path, int width, int height, int channels,
                     const std::vector<std::uint8_t>& bytes) {
    if (channels != 1 && channels != 3) throw DomainError("png: only gray or RGB supported");
    detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw std::runtime_error("png: cannot open for writing: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 1);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(bytes.data() + y * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

template <typename T>
void write(const std::filesystem::path& path, const Image<T>& img) {
    std::vector<std::uint8_t> bytes(img.size());
    auto src = img.data();
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = detail::quantize(static_cast<double>(src[i]));
    write_u8(path, img.width(), img.height(), img.channels(), bytes);
}

struct RawImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> bytes;
};

/// Reads any PNG, expanding to 8-bit gray or RGB (alpha stripped).
inline RawImage read_u8(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw std::runtime_error("png: cannot open: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png: allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError(path.string(), 0, "invalid PNG data");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    RawImage out;
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    out.bytes.resize(stride * out.height);
    std::vector<png_bytep> rows(out.height);
    for (int y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

/// Reads a PNG as a float image scaled to [0,1]. Gray files are replicated to RGB when `channels` is 3.
inline ImageF read(const std::filesystem::path& path, int channels = 3) {
    const RawImage raw = read_u8(path);
    ImageF img(raw.width, raw.height, channels);
    for (int y = 0; y < raw.height; ++y)
        for (int x = 0; x < raw.width; ++x)
            for (int c = 0; c < channels; ++c) {
                const int src_c = raw.channels == 1 ? 0 : std::min(c, raw.channels - 1);
                const std::size_t i = (static_cast<std::size_t>(y) * raw.width + x) * raw.channels + src_c;
                img.at(x, y, c) = raw.bytes[i] / 255.0f;
            }
    return img;
}

}  // namespace pano3d::png
