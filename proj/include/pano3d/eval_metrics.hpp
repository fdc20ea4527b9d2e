#pragma once

// Matching/failure rates over scene batches, PSNR, and multi-view colour
// consistency of equirect captures against the synthetic ground truth.

#include "pano3d/capture_prep.hpp"
#include "pano3d/errors.hpp"
#include "pano3d/image.hpp"
#include "pano3d/math.hpp"
#include "pano3d/pano_geometry.hpp"
#include "pano3d/synthetic_world.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace pano3d::eval {

inline constexpr double kPsnrSentinel = 99.0;
inline constexpr double kDefaultFailureThreshold = 0.10;

struct SceneEvalRecord {
    std::string scene_id;
    std::size_t total_images = 0;
    std::size_t registered_images = 0;  // in the largest model
    bool colmap_succeeded = false;
    std::optional<double> psnr_heldout;

    void validate() const {
        if (registered_images > total_images)
            throw DomainError("scene " + scene_id + ": registered images exceed total");
    }
};

/// A scene fails when there is no model or its largest model registers fewer than
/// `threshold` of the images.
inline SceneEvalRecord make_record(std::string scene_id, std::size_t total, std::optional<std::size_t> largest_model,
                                   double threshold = kDefaultFailureThreshold) {
    SceneEvalRecord r;
    r.scene_id = std::move(scene_id);
    r.total_images = total;
    r.registered_images = largest_model.value_or(0);
    r.validate();
    r.colmap_succeeded = largest_model.has_value() && total > 0 &&
                         static_cast<double>(*largest_model) >= threshold * static_cast<double>(total);
    return r;
}

inline double matching_rate(const SceneEvalRecord& r) {
    r.validate();
    if (!r.colmap_succeeded) throw UndefinedMetricError("matching rate undefined: scene " + r.scene_id + " failed");
    if (r.total_images == 0) throw UndefinedMetricError("matching rate undefined: scene " + r.scene_id + " has no images");
    return static_cast<double>(r.registered_images) / static_cast<double>(r.total_images);
}

inline double failure_rate(std::span<const SceneEvalRecord> records) {
    if (records.empty()) throw DomainError("failure_rate: empty batch");
    std::size_t failed = 0;
    for (const auto& r : records) failed += r.colmap_succeeded ? 0 : 1;
    return static_cast<double>(failed) / static_cast<double>(records.size());
}

struct BatchSummary {
    std::size_t scenes = 0;
    std::size_t succeeded = 0;
    double failure_rate = 0.0;
    std::optional<double> mr_scene_mean;  // mean of per-scene rates over succeeded scenes
    std::optional<double> mr_pooled;      // registered / total over succeeded scenes
    std::optional<double> psnr_mean;
};

inline BatchSummary summarize(std::span<const SceneEvalRecord> records) {
    BatchSummary s;
    s.failure_rate = failure_rate(records);
    s.scenes = records.size();
    double mr_sum = 0, psnr_sum = 0;
    std::size_t reg = 0, tot = 0, npsnr = 0;
    for (const auto& r : records) {
        if (r.psnr_heldout) {
            psnr_sum += *r.psnr_heldout;
            ++npsnr;
        }
        if (!r.colmap_succeeded) continue;
        ++s.succeeded;
        mr_sum += matching_rate(r);
        reg += r.registered_images;
        tot += r.total_images;
    }
    if (s.succeeded > 0) {
        s.mr_scene_mean = mr_sum / static_cast<double>(s.succeeded);
        s.mr_pooled = static_cast<double>(reg) / static_cast<double>(tot);
    }
    if (npsnr > 0) s.psnr_mean = psnr_sum / static_cast<double>(npsnr);
    return s;
}

inline nlohmann::json to_json(const SceneEvalRecord& r) {
    nlohmann::json j{{"scene_id", r.scene_id},
                     {"total_images", r.total_images},
                     {"registered_images", r.registered_images},
                     {"colmap_succeeded", r.colmap_succeeded}};
    j["matching_rate"] = r.colmap_succeeded && r.total_images > 0 ? nlohmann::json(matching_rate(r)) : nlohmann::json();
    j["psnr_heldout"] = r.psnr_heldout ? nlohmann::json(*r.psnr_heldout) : nlohmann::json();
    return j;
}

inline SceneEvalRecord record_from_json(const nlohmann::json& j) {
    SceneEvalRecord r;
    r.scene_id = j.at("scene_id").get<std::string>();
    r.total_images = j.at("total_images").get<std::size_t>();
    r.registered_images = j.at("registered_images").get<std::size_t>();
    r.colmap_succeeded = j.at("colmap_succeeded").get<bool>();
    if (j.contains("psnr_heldout") && !j["psnr_heldout"].is_null()) r.psnr_heldout = j["psnr_heldout"].get<double>();
    r.validate();
    return r;
}

inline nlohmann::json report_json(std::span<const SceneEvalRecord> records) {
    const BatchSummary s = summarize(records);
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
    nlohmann::json scenes = nlohmann::json::array();
    for (const auto& r : records) scenes.push_back(to_json(r));
    return {{"scenes", scenes},
            {"summary",
             {{"scenes", s.scenes},
              {"succeeded", s.succeeded},
              {"failure_rate", s.failure_rate},
              {"matching_rate_scene_mean", opt(s.mr_scene_mean)},
              {"matching_rate_pooled", opt(s.mr_pooled)},
              {"psnr_heldout_mean", opt(s.psnr_mean)}}}};
}

/// Fixed-width table, one row per scene plus the batch summary.
inline void print_report(std::ostream& os, std::span<const SceneEvalRecord> records) {
    const BatchSummary s = summarize(records);
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %8s %10s %8s %9s %10s\n", "scene", "images", "registered", "status", "MR",
                  "PSNR(dB)");
    os << line;
    for (const auto& r : records) {
        const std::string mr = r.colmap_succeeded ? std::to_string(100.0 * matching_rate(r)).substr(0, 6) + "%" : "-";
        const std::string ps = r.psnr_heldout ? std::to_string(*r.psnr_heldout).substr(0, 6) : "-";
        std::snprintf(line, sizeof line, "%-20s %8zu %10zu %8s %9s %10s\n", r.scene_id.c_str(), r.total_images,
                      r.registered_images, r.colmap_succeeded ? "ok" : "FAILED", mr.c_str(), ps.c_str());
        os << line;
    }
    auto pct = [](const std::optional<double>& v) {
        if (!v) return std::string("n/a");
        char b[32];
        std::snprintf(b, sizeof b, "%.2f%%", 100.0 * *v);
        return std::string(b);
    };
    char fr[32];
    std::snprintf(fr, sizeof fr, "%.2f%%", 100.0 * s.failure_rate);
    os << "failure rate " << fr << " (" << s.scenes - s.succeeded << "/" << s.scenes << ")"
       << ", MR scene mean " << pct(s.mr_scene_mean) << ", MR pooled " << pct(s.mr_pooled) << "\n";
}

/// 10 log10(1 / MSE) for images in [0, 1]; identical images give the 99 dB sentinel.
template <typename A, typename B>
double psnr(const Image<A>& render, const Image<B>& reference) {
    if (render.width() != reference.width() || render.height() != reference.height() ||
        render.channels() != reference.channels())
        throw DomainError("psnr: image dimensions differ");
    if (render.data().empty()) throw DomainError("psnr: empty images");
    double se = 0;
    const auto a = render.data();
    const auto b = reference.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.size());
    if (mse == 0.0) return kPsnrSentinel;
    return std::min(kPsnrSentinel, 10.0 * std::log10(1.0 / mse));
}

inline double psnr_from_mse(double mse) {
    if (!(mse >= 0)) throw DomainError("psnr: negative or NaN MSE");
    return mse == 0.0 ? kPsnrSentinel : std::min(kPsnrSentinel, 10.0 * std::log10(1.0 / mse));
}

struct ConsistencyResult {
    double mean_error = 0.0;  // mean abs colour difference over channels
    std::size_t samples = 0;  // mutually visible points used
    std::size_t attempts = 0;
};

/// Samples surface points seen by a random pixel of one frame, keeps those also visible
/// (unoccluded, unmasked) from a second frame, and compares the two frames' colours there.
/// The source colour is the pixel itself; the second frame is sampled bilinearly.
inline ConsistencyResult reprojection_consistency(std::span<const EquirectFrame> frames, std::span<const CapturePose> poses,
                                                  const SceneSpec& scene, std::size_t n_samples, std::uint64_t seed,
                                                  std::span<const LossMask> masks = {}) {
    if (n_samples == 0) throw DomainError("reprojection_consistency: zero samples requested");
    if (frames.size() != poses.size()) throw DomainError("reprojection_consistency: frames and poses differ in count");
    if (frames.size() < 2) throw DomainError("reprojection_consistency: need at least two frames");
    if (!masks.empty() && masks.size() != frames.size())
        throw DomainError("reprojection_consistency: masks and frames differ in count");
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick_frame(0, frames.size() - 1);
    ConsistencyResult out;
    double acc = 0;
    std::array<double, 4> sample{};
    // Bounded effort: points may be hidden from the partner frame.
    const std::size_t max_attempts = 20 * n_samples;
    while (out.samples < n_samples && out.attempts < max_attempts) {
        ++out.attempts;
        const std::size_t i = pick_frame(rng);
        std::size_t j = pick_frame(rng);
        while (j == i) j = pick_frame(rng);
        const ImageF& fi = frames[i].image();
        const ImageF& fj = frames[j].image();
        const int x = std::uniform_int_distribution<int>(0, fi.width() - 1)(rng);
        const int y = std::uniform_int_distribution<int>(0, fi.height() - 1)(rng);
        if (!masks.empty() && !masks[i].at(x, y)) continue;
        const Vec3 di = poses[i].rotation() * dir_from_equirect(x, y, fi.width(), fi.height()).vec();
        const Hit hi = intersect(scene, poses[i].position, di);
        const Vec3 toj = hi.point - poses[j].position;
        const double dist = toj.norm();
        if (dist < 1e-9) continue;
        const Vec3 dj = toj / dist;
        const Hit hj = intersect(scene, poses[j].position, dj);
        if (std::abs(hj.t - dist) > 1e-6 * std::max(1.0, dist)) continue;  // occluded from frame j
        const Vec2 uv = equirect_from_dir(SphericalDirection::from_vector(poses[j].rotation().transpose() * dj),
                                          fj.width(), fj.height());
        if (!masks.empty()) {
            const int mx = static_cast<int>(std::lround(uv.x())) % fj.width();
            const int my = std::clamp(static_cast<int>(std::lround(uv.y())), 0, fj.height() - 1);
            if (!masks[j].at(mx < 0 ? mx + fj.width() : mx, my)) continue;
        }
        std::span<double> s(sample.data(), static_cast<std::size_t>(fj.channels()));
        sample_bilinear(fj, uv.x(), uv.y(), true, s);
        double e = 0;
        for (int c = 0; c < fi.channels(); ++c) e += std::abs(static_cast<double>(fi.at(x, y, c)) - sample[c]);
        acc += e / fi.channels();
        ++out.samples;
    }
    if (out.samples == 0)
        throw DomainError("reprojection_consistency: no mutually visible points after " + std::to_string(out.attempts) +
                          " attempts (check poses, masks and scene geometry)");
    out.mean_error = acc / static_cast<double>(out.samples);
    return out;
}

}  // namespace pano3d::eval
