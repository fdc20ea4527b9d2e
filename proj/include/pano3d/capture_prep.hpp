#pragma once

// Clip preparation: fixed-length chunking, loss-mask merging, bottom-band
// masking and caption ingestion.
//
// Mask polarity everywhere: 1 = pixel contributes to the loss, 0 = excluded.
// Mask PNGs store include as >= 128.

#include "pano3d/errors.hpp"
#include "pano3d/pano_geometry.hpp"
#include "pano3d/png_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace pano3d {

class LossMask {
public:
    LossMask() = default;
    LossMask(int width, int height, std::uint8_t fill = 1) : width_(width), height_(height) {
        if (width < 0 || height < 0) throw DomainError("mask dimensions must be non-negative");
        if (fill > 1) throw DomainError("mask values must be 0 or 1");
        bits_.assign(static_cast<std::size_t>(width) * height, fill);
    }

    static LossMask ones(int width, int height) { return LossMask(width, height, 1); }
    static LossMask zeros(int width, int height) { return LossMask(width, height, 0); }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }

    std::uint8_t at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x]; }
    void set(int x, int y, bool include) { bits_[static_cast<std::size_t>(y) * width_ + x] = include ? 1 : 0; }

    std::span<const std::uint8_t> bits() const noexcept { return bits_; }

    std::size_t count() const noexcept {
        return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
    }

    bool same_shape(const LossMask& o) const noexcept { return width_ == o.width_ && height_ == o.height_; }

    friend bool operator==(const LossMask&, const LossMask&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

inline LossMask read_mask_png(const std::filesystem::path& path) {
    const auto raw = png::read_u8(path);
    LossMask m(raw.width, raw.height);
    for (int y = 0; y < raw.height; ++y)
        for (int x = 0; x < raw.width; ++x)
            m.set(x, y, raw.bytes[(static_cast<std::size_t>(y) * raw.width + x) * raw.channels] >= 128);
    return m;
}

inline void write_mask_png(const std::filesystem::path& path, const LossMask& m) {
    std::vector<std::uint8_t> bytes(m.bits().size());
    std::transform(m.bits().begin(), m.bits().end(), bytes.begin(), [](std::uint8_t b) { return b ? 255 : 0; });
    png::write_u8(path, m.width(), m.height(), 1, bytes);
}

struct ClipWindow {
    std::size_t begin = 0;
    std::size_t length = 0;
};

/// Fully contained windows [i*stride, i*stride + clip_len); a trailing partial window is dropped.
inline std::vector<ClipWindow> chunk_windows(std::size_t n_frames, std::size_t clip_len, std::size_t stride) {
    if (clip_len < 1 || stride < 1) throw DomainError("chunk_video: clip_len and stride must be >= 1");
    std::vector<ClipWindow> out;
    for (std::size_t start = 0; start + clip_len <= n_frames; start += stride) out.push_back({start, clip_len});
    return out;
}

template <typename T>
std::vector<std::span<const T>> chunk_video(std::span<const T> frames, std::size_t clip_len, std::size_t stride) {
    std::vector<std::span<const T>> out;
    for (const auto& w : chunk_windows(frames.size(), clip_len, stride)) out.push_back(frames.subspan(w.begin, w.length));
    return out;
}

/// Pointwise AND: a pixel stays included only if every frame includes it.
inline LossMask merge_masks(std::span<const LossMask> masks) {
    if (masks.empty()) throw DomainError("merge_masks: empty mask list");
    LossMask out = masks.front();
    for (const auto& m : masks.subspan(1)) {
        if (!m.same_shape(out)) throw DomainError("merge_masks: dimension mismatch");
        for (int y = 0; y < out.height(); ++y)
            for (int x = 0; x < out.width(); ++x)
                if (!m.at(x, y)) out.set(x, y, false);
    }
    return out;
}

/// Zeroes the bottom ceil(band_fraction * height) rows.
inline LossMask apply_bottom_band(LossMask mask, double band_fraction) {
    if (!(band_fraction >= 0.0 && band_fraction < 1.0)) throw DomainError("bottom band fraction must be in [0, 1)");
    const int rows = std::min(mask.height(), static_cast<int>(std::ceil(band_fraction * mask.height())));
    for (int y = mask.height() - rows; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x) mask.set(x, y, false);
    return mask;
}

struct CaptureClip {
    std::string id;
    std::size_t first_frame = 0;
    std::vector<std::filesystem::path> frame_paths;
    std::vector<EquirectFrame> frames;  // empty unless loaded
    double fps = 12.0;
    std::string caption;
    LossMask merged_mask;

    std::size_t length() const noexcept { return frame_paths.empty() ? frames.size() : frame_paths.size(); }
    double duration_s() const { return static_cast<double>(length()) / fps; }
};

/// Clip id -> caption, as stored in captions.json.
using CaptionSource = std::map<std::string, std::string>;

inline CaptionSource read_captions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingMetadataError("captions file not found: " + path.string());
    CaptionSource out;
    try {
        const auto j = nlohmann::json::parse(in);
        for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = it.value().get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string(), 0, e.what());
    }
    return out;
}

inline std::string strip(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n\f\v");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n\f\v");
    return s.substr(first, last - first + 1);
}

inline CaptureClip attach_caption(CaptureClip clip, const CaptionSource& captions) {
    const auto it = captions.find(clip.id);
    if (it == captions.end()) throw MissingMetadataError("no caption for clip '" + clip.id + "'");
    std::string text = strip(it->second);
    if (text.empty()) throw MissingMetadataError("empty caption for clip '" + clip.id + "'");
    clip.caption = std::move(text);
    return clip;
}

inline std::string frame_filename(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%06zu.png", i);
    return buf;
}

inline std::string mask_filename(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "mask_%06zu.png", i);
    return buf;
}

inline std::string clip_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip_%04zu", index);
    return buf;
}

struct ScanOptions {
    std::size_t clip_len = 128;
    std::size_t stride = 128;
    double fps = 12.0;
    double bottom_band = 0.125;
    bool load_frames = false;
};

/// Counts consecutive frame_%06d.png files starting at index 0.
inline std::size_t count_frames(const std::filesystem::path& dir) {
    std::size_t n = 0;
    while (std::filesystem::exists(dir / frame_filename(n))) ++n;
    return n;
}

/// Builds captioned clips from one video directory. Missing mask files count as all-include.
inline std::vector<CaptureClip> scan_video_dir(const std::filesystem::path& dir, const ScanOptions& opt) {
    const std::size_t n = count_frames(dir);
    const auto windows = chunk_windows(n, opt.clip_len, opt.stride);
    if (windows.empty()) return {};
    const CaptionSource captions = read_captions(dir / "captions.json");

    std::vector<CaptureClip> clips;
    for (std::size_t ci = 0; ci < windows.size(); ++ci) {
        CaptureClip clip;
        clip.id = clip_id(ci);
        clip.first_frame = windows[ci].begin;
        clip.fps = opt.fps;
        std::vector<LossMask> masks;
        int fw = -1, fh = -1;
        for (std::size_t f = windows[ci].begin; f < windows[ci].begin + windows[ci].length; ++f) {
            const auto fpath = dir / frame_filename(f);
            clip.frame_paths.push_back(fpath);
            if (opt.load_frames || fw < 0) {
                EquirectFrame frame(png::read(fpath));
                if (fw >= 0 && (frame.width() != fw || frame.height() != fh))
                    throw DomainError("frames in a clip must share dimensions: " + fpath.string());
                fw = frame.width();
                fh = frame.height();
                if (opt.load_frames) clip.frames.push_back(std::move(frame));
            }
            const auto mpath = dir / mask_filename(f);
            masks.push_back(std::filesystem::exists(mpath) ? read_mask_png(mpath) : LossMask::ones(fw, fh));
        }
        clip.merged_mask = apply_bottom_band(merge_masks(masks), opt.bottom_band);
        clips.push_back(attach_caption(std::move(clip), captions));
    }
    return clips;
}

inline nlohmann::json clip_manifest(const std::vector<CaptureClip>& clips) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : clips) {
        arr.push_back({{"id", c.id},
                       {"first_frame", c.first_frame},
                       {"n_frames", c.length()},
                       {"fps", c.fps},
                       {"duration_s", std::round(c.duration_s() * 100.0) / 100.0},
                       {"caption", c.caption},
                       {"mask_include_fraction",
                        c.merged_mask.bits().empty()
                            ? 1.0
                            : static_cast<double>(c.merged_mask.count()) / c.merged_mask.bits().size()},
                       {"mask_polarity", "1=include"}});
    }
    return {{"clips", arr}};
}

}  // namespace pano3d
