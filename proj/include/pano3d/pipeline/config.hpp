#pragma once

#include "pano3d/errors.hpp"
#include "pano3d/diffusion/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace pano3d::pipeline {

enum class ColmapMode { external, ground_truth_poses };

inline std::string to_string(ColmapMode m) { return m == ColmapMode::external ? "external" : "ground-truth-poses"; }

inline ColmapMode colmap_mode_from_string(const std::string& s) {
    if (s == "external") return ColmapMode::external;
    if (s == "ground-truth-poses") return ColmapMode::ground_truth_poses;
    throw DomainError("colmap_mode must be \"external\" or \"ground-truth-poses\", got \"" + s + "\"");
}

/// Per-stage seeds. Unset entries derive from the master seed.
struct Seeds {
    std::uint64_t master = 0;
    std::optional<std::uint64_t> walk, crops, points, subsample, reconstruct, train;

    static std::uint64_t derive(std::uint64_t master, std::uint64_t stage) {
        // splitmix64 finaliser
        std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stage + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    std::uint64_t walk_seed() const { return walk.value_or(derive(master, 0)); }
    std::uint64_t crop_seed() const { return crops.value_or(derive(master, 1)); }
    std::uint64_t point_seed() const { return points.value_or(derive(master, 2)); }
    std::uint64_t subsample_seed() const { return subsample.value_or(derive(master, 3)); }
    std::uint64_t reconstruct_seed() const { return reconstruct.value_or(derive(master, 4)); }
    std::uint64_t train_seed() const { return train.value_or(derive(master, 5)); }
};

struct PipelineConfig {
    std::filesystem::path workspace = "workspace";
    Seeds seeds;

    // capture
    int n_frames = 128;
    int clip_len = 128;
    int clip_stride = 128;
    double fps = 12.0;
    int equirect_height = 352;
    bool photographer = true;
    std::optional<std::filesystem::path> scene_file;  // SceneSpec JSON; default room when absent

    // crops
    int crops_per_frame = 3;
    double crop_fov_deg = 120.0;
    int crop_resolution = 512;
    double pitch_min_deg = -20.0;
    double pitch_max_deg = 20.0;

    // poses
    ColmapMode colmap_mode = ColmapMode::ground_truth_poses;
    std::string colmap_binary = "colmap";
    std::string colmap_matcher = "sequential";
    int points_per_image = 64;

    // reconstruction
    int subsample_k = 32;
    int iterations = 4000;
    int num_gaussians = 20000;
    bool write_pluecker = true;

    // eval / serve
    std::vector<std::filesystem::path> eval_workspaces;
    double failure_threshold = 0.10;
    std::string serve_host = "127.0.0.1";
    int serve_port = 8080;

    diffusion::TrainConfig train;

    void validate() const {
        auto positive = [](int v, const char* name) {
            if (v < 1) throw DomainError(std::string("config: ") + name + " must be positive");
        };
        positive(n_frames, "n_frames");
        positive(clip_len, "clip_len");
        positive(clip_stride, "clip_stride");
        positive(equirect_height, "equirect_height");
        positive(crops_per_frame, "crops_per_frame");
        positive(crop_resolution, "crop_resolution");
        positive(subsample_k, "subsample_k");
        positive(num_gaussians, "num_gaussians");
        if (iterations < 0) throw DomainError("config: iterations must be >= 0");
        if (points_per_image < 0) throw DomainError("config: points_per_image must be >= 0");
        if (!(fps > 0)) throw DomainError("config: fps must be positive");
        if (!(crop_fov_deg > 0 && crop_fov_deg < 180)) throw DomainError("config: crop_fov_deg must be in (0, 180)");
        if (equirect_height % 2 != 0) throw DomainError("config: equirect_height must be even");
        if (pitch_min_deg > pitch_max_deg) throw DomainError("config: pitch_min_deg > pitch_max_deg");
        if (colmap_matcher != "sequential" && colmap_matcher != "exhaustive")
            throw DomainError("config: colmap_matcher must be sequential or exhaustive");
        if (!(failure_threshold >= 0 && failure_threshold <= 1)) throw DomainError("config: failure_threshold in [0,1]");
    }
};

inline PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
    PipelineConfig c;
    if (!j.is_object()) throw DomainError("config: top level must be an object");
    auto path = [&](const std::string& s) {
        std::filesystem::path p(s);
        return p.is_relative() && !base.empty() ? base / p : p;
    };
    if (j.contains("workspace")) c.workspace = path(j["workspace"].get<std::string>());
    c.seeds.master = j.value("seed", c.seeds.master);
    if (j.contains("seeds")) {
        const auto& s = j["seeds"];
        auto opt = [&](const char* k, std::optional<std::uint64_t>& out) {
            if (s.contains(k)) out = s[k].get<std::uint64_t>();
        };
        opt("walk", c.seeds.walk);
        opt("crops", c.seeds.crops);
        opt("points", c.seeds.points);
        opt("subsample", c.seeds.subsample);
        opt("reconstruct", c.seeds.reconstruct);
        opt("train", c.seeds.train);
    }
    c.n_frames = j.value("n_frames", c.n_frames);
    c.clip_len = j.value("clip_len", c.clip_len);
    c.clip_stride = j.value("clip_stride", c.clip_stride);
    c.fps = j.value("fps", c.fps);
    c.equirect_height = j.value("equirect_height", c.equirect_height);
    c.photographer = j.value("photographer", c.photographer);
    if (j.contains("scene_file")) c.scene_file = path(j["scene_file"].get<std::string>());
    c.crops_per_frame = j.value("crops_per_frame", c.crops_per_frame);
    c.crop_fov_deg = j.value("crop_fov_deg", c.crop_fov_deg);
    c.crop_resolution = j.value("crop_resolution", c.crop_resolution);
    c.pitch_min_deg = j.value("pitch_min_deg", c.pitch_min_deg);
    c.pitch_max_deg = j.value("pitch_max_deg", c.pitch_max_deg);
    if (j.contains("colmap_mode")) c.colmap_mode = colmap_mode_from_string(j["colmap_mode"].get<std::string>());
    c.colmap_binary = j.value("colmap_binary", c.colmap_binary);
    c.colmap_matcher = j.value("colmap_matcher", c.colmap_matcher);
    c.points_per_image = j.value("points_per_image", c.points_per_image);
    c.subsample_k = j.value("subsample_k", c.subsample_k);
    c.iterations = j.value("iterations", c.iterations);
    c.num_gaussians = j.value("num_gaussians", c.num_gaussians);
    c.write_pluecker = j.value("write_pluecker", c.write_pluecker);
    if (j.contains("eval_workspaces"))
        for (const auto& w : j["eval_workspaces"]) c.eval_workspaces.push_back(path(w.get<std::string>()));
    c.failure_threshold = j.value("failure_threshold", c.failure_threshold);
    c.serve_host = j.value("serve_host", c.serve_host);
    c.serve_port = j.value("serve_port", c.serve_port);
    if (j.contains("train")) c.train = diffusion::train_config_from_json(j["train"]);
    c.validate();
    return c;
}

/// Reads a JSON config; relative paths inside it resolve against the file's directory.
inline PipelineConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw WorkspaceError("cannot open config " + file.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(file.string(), 0, e.what());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(file.string(), 0, e.what());
    }
    try {
        return config_from_json(j, file.parent_path());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(file.string(), 0, e.what());
    }
}

inline nlohmann::json to_json(const PipelineConfig& c) {
    nlohmann::json j{{"workspace", c.workspace.string()},
                     {"seed", c.seeds.master},
                     {"n_frames", c.n_frames},
                     {"clip_len", c.clip_len},
                     {"clip_stride", c.clip_stride},
                     {"fps", c.fps},
                     {"equirect_height", c.equirect_height},
                     {"photographer", c.photographer},
                     {"crops_per_frame", c.crops_per_frame},
                     {"crop_fov_deg", c.crop_fov_deg},
                     {"crop_resolution", c.crop_resolution},
                     {"pitch_min_deg", c.pitch_min_deg},
                     {"pitch_max_deg", c.pitch_max_deg},
                     {"colmap_mode", to_string(c.colmap_mode)},
                     {"colmap_binary", c.colmap_binary},
                     {"colmap_matcher", c.colmap_matcher},
                     {"points_per_image", c.points_per_image},
                     {"subsample_k", c.subsample_k},
                     {"iterations", c.iterations},
                     {"num_gaussians", c.num_gaussians},
                     {"write_pluecker", c.write_pluecker},
                     {"failure_threshold", c.failure_threshold},
                     {"serve_host", c.serve_host},
                     {"serve_port", c.serve_port},
                     {"train", diffusion::to_json(c.train)}};
    if (c.scene_file) j["scene_file"] = c.scene_file->string();
    nlohmann::json seeds = nlohmann::json::object();
    if (c.seeds.walk) seeds["walk"] = *c.seeds.walk;
    if (c.seeds.crops) seeds["crops"] = *c.seeds.crops;
    if (c.seeds.points) seeds["points"] = *c.seeds.points;
    if (c.seeds.subsample) seeds["subsample"] = *c.seeds.subsample;
    if (c.seeds.reconstruct) seeds["reconstruct"] = *c.seeds.reconstruct;
    if (c.seeds.train) seeds["train"] = *c.seeds.train;
    if (!seeds.empty()) j["seeds"] = seeds;
    nlohmann::json ws = nlohmann::json::array();
    for (const auto& w : c.eval_workspaces) ws.push_back(w.string());
    if (!ws.empty()) j["eval_workspaces"] = ws;
    return j;
}

}  // namespace pano3d::pipeline
