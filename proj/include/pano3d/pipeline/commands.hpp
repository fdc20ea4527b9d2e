#pragma once

// Pipeline stages over a workspace directory:
//   capture/  frame_%06d.png, mask_%06d.png, captions.json, walk.json, scene.json, manifest.json
//   crops/    crop_%06d.png, cropmask_%06d.png, plan.jsonl
//   sparse/   cameras.txt, images.txt, points3D.txt
//   scene/    scene.bin, scene.json, metrics.json, views.json, pluecker/*.f32
//   reports/  eval.json
//   train/    denoiser.ckpt, loss.csv

#include "pano3d/capture_prep.hpp"
#include "pano3d/diffusion/loss.hpp"
#include "pano3d/diffusion/schedule.hpp"
#include "pano3d/diffusion/trainer.hpp"
#include "pano3d/errors.hpp"
#include "pano3d/eval_metrics.hpp"
#include "pano3d/pano_geometry.hpp"
#include "pano3d/pipeline/config.hpp"
#include "pano3d/png_io.hpp"
#include "pano3d/splat/colmap_io.hpp"
#include "pano3d/splat/export.hpp"
#include "pano3d/splat/pluecker.hpp"
#include "pano3d/splat/reconstruct.hpp"
#include "pano3d/synthetic_world.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace pano3d::pipeline {

namespace fs = std::filesystem;

struct Workspace {
    fs::path root;

    fs::path capture() const { return root / "capture"; }
    fs::path crops() const { return root / "crops"; }
    fs::path sparse() const { return root / "sparse"; }
    fs::path scene() const { return root / "scene"; }
    fs::path reports() const { return root / "reports"; }
    fs::path train() const { return root / "train"; }
};

inline std::string crop_filename(std::size_t i) {
    char b[32];
    std::snprintf(b, sizeof b, "crop_%06zu.png", i);
    return b;
}

inline std::string crop_mask_filename(std::size_t i) {
    char b[32];
    std::snprintf(b, sizeof b, "cropmask_%06zu.png", i);
    return b;
}

/// "crop_000123.png" -> "cropmask_000123.png"
inline std::string mask_name_for_crop(const std::string& crop) {
    return crop.rfind("crop_", 0) == 0 ? "cropmask_" + crop.substr(5) : "mask_" + crop;
}

inline void write_json(const fs::path& p, const nlohmann::json& j) {
    std::ofstream out(p);
    if (!out) throw WorkspaceError("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw WorkspaceError("missing " + p.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(p.string(), 0, e.what());
    }
}

inline void reset_dir(const fs::path& p) {
    fs::remove_all(p);
    fs::create_directories(p);
}

inline SceneSpec load_scene_spec(const PipelineConfig& cfg) {
    if (!cfg.scene_file) return default_scene();
    return scene_from_json(read_json(*cfg.scene_file));
}

inline std::size_t count_crops(const fs::path& dir) {
    std::size_t n = 0;
    while (fs::exists(dir / crop_filename(n))) ++n;
    return n;
}

// ---------------------------------------------------------------- synthesize

struct SynthesizeResult {
    int n_frames = 0;
    double duration_s = 0.0;  // rounded to 2 decimals
    std::size_t clips = 0;
};

inline SynthesizeResult cmd_synthesize(const PipelineConfig& cfg, std::ostream& log = std::cout) {
    cfg.validate();
    const Workspace ws{cfg.workspace};
    const SceneSpec scene = load_scene_spec(cfg);
    WalkOptions wo;
    wo.fps = cfg.fps;
    const WalkPath walk = make_walk(scene, cfg.n_frames, cfg.seeds.walk_seed(), wo);

    reset_dir(ws.capture());
    for (std::size_t i = 0; i < walk.size(); ++i) {
        EquirectFrame frame = render_equirect(scene, walk.poses[i], cfg.equirect_height);
        LossMask mask = LossMask::ones(frame.width(), frame.height());
        if (cfg.photographer) {
            auto comp = composite_photographer(frame, scene, walk.poses[i], BlobSpec{});
            frame = std::move(comp.frame);
            mask = std::move(comp.mask);
        }
        png::write(ws.capture() / frame_filename(i), frame.image());
        write_mask_png(ws.capture() / mask_filename(i), mask);
    }
    nlohmann::json captions = nlohmann::json::object();
    const auto windows = chunk_windows(walk.size(), cfg.clip_len, cfg.clip_stride);
    for (std::size_t c = 0; c < windows.size(); ++c) captions[clip_id(c)] = scene.caption;
    write_json(ws.capture() / "captions.json", captions);
    write_json(ws.capture() / "walk.json", to_json(walk));
    write_json(ws.capture() / "scene.json", to_json(scene));

    ScanOptions so;
    so.clip_len = cfg.clip_len;
    so.stride = cfg.clip_stride;
    so.fps = cfg.fps;
    const auto clips = scan_video_dir(ws.capture(), so);
    nlohmann::json manifest = clip_manifest(clips);
    manifest["n_frames"] = walk.size();
    manifest["fps"] = cfg.fps;
    manifest["equirect_height"] = cfg.equirect_height;
    write_json(ws.capture() / "manifest.json", manifest);

    SynthesizeResult r;
    r.n_frames = static_cast<int>(walk.size());
    r.duration_s = std::round(walk.size() / cfg.fps * 100.0) / 100.0;
    r.clips = clips.size();
    log << "synthesize: " << r.n_frames << " frames at " << cfg.fps << " fps (" << r.duration_s << " s), " << r.clips
        << " clip(s) in " << ws.capture().string() << "\n";
    return r;
}

// ---------------------------------------------------------------- crop

struct CropResult {
    std::size_t n_crops = 0;
    CropPlan plan;
};

inline CropResult cmd_crop(const PipelineConfig& cfg, std::ostream& log = std::cout) {
    cfg.validate();
    const Workspace ws{cfg.workspace};
    const std::size_t n = count_frames(ws.capture());
    if (n == 0)
        throw WorkspaceError("crop: no frames in " + ws.capture().string() + "; run `pipeline synthesize` first");
    CropResult r;
    r.plan = make_crop_plan(static_cast<int>(n), cfg.crops_per_frame, cfg.crop_fov_deg, cfg.crop_resolution,
                            {cfg.pitch_min_deg, cfg.pitch_max_deg}, cfg.seeds.crop_seed());
    reset_dir(ws.crops());
    std::size_t idx = 0;
    for (std::size_t f = 0; f < n; ++f) {
        const EquirectFrame frame(png::read(ws.capture() / frame_filename(f)));
        const fs::path mpath = ws.capture() / mask_filename(f);
        const std::optional<LossMask> mask =
            fs::exists(mpath) ? std::optional<LossMask>(read_mask_png(mpath)) : std::nullopt;
        if (mask && (mask->width() != frame.width() || mask->height() != frame.height()))
            throw WorkspaceError("crop: " + mpath.string() + " does not match its frame size");
        for (; idx < r.plan.size() && r.plan.entries[idx].frame_index == static_cast<int>(f); ++idx) {
            const auto& cam = r.plan.entries[idx].camera;
            const auto uv = crop_coordinates(cam, frame.width(), frame.height());
            png::write(ws.crops() / crop_filename(idx),
                       sample_at(frame.image(), std::span<const Vec2>(uv), cam.width, cam.height, Sampling::bilinear));
            LossMask cm = LossMask::ones(cam.width, cam.height);
            if (mask) {
                // nearest sampling, same rounding and wrap as sample_nearest
                const int w = mask->width(), h = mask->height();
                for (int y = 0, i = 0; y < cam.height; ++y)
                    for (int x = 0; x < cam.width; ++x, ++i) {
                        const int xi = ((static_cast<int>(std::floor(uv[i].x() + 0.5)) % w) + w) % w;
                        const int yi = std::clamp(static_cast<int>(std::floor(uv[i].y() + 0.5)), 0, h - 1);
                        cm.set(x, y, mask->at(xi, yi) != 0);
                    }
            }
            write_mask_png(ws.crops() / crop_mask_filename(idx), cm);
        }
    }
    std::ofstream plan_out(ws.crops() / "plan.jsonl");
    write_crop_plan_jsonl(plan_out, r.plan);
    r.n_crops = r.plan.size();
    log << "crop: " << r.n_crops << " perspective images (" << n << " frames x " << cfg.crops_per_frame << ", "
        << cfg.crop_fov_deg << " deg, " << cfg.crop_resolution << " px)\n";
    return r;
}

// ---------------------------------------------------------------- pose

struct PoseResult {
    std::size_t total_images = 0;
    std::optional<std::size_t> registered;  // absent when no model was produced
    std::vector<splat::CameraModel> cameras;  // ground-truth mode: world-frame cameras, crop order
};

inline CropPlan load_crop_plan(const Workspace& ws) {
    const fs::path p = ws.crops() / "plan.jsonl";
    std::ifstream in(p);
    if (!in) throw WorkspaceError("pose: missing " + p.string() + "; run `pipeline crop` first");
    return read_crop_plan_jsonl(in, p.string());
}

/// COLMAP-convention cameras of every planned crop, from the walk and the plan.
inline std::vector<splat::CameraModel> ground_truth_cameras(const WalkPath& walk, const CropPlan& plan) {
    std::vector<splat::CameraModel> cams;
    cams.reserve(plan.size());
    for (const auto& e : plan.entries) {
        if (e.frame_index < 0 || static_cast<std::size_t>(e.frame_index) >= walk.size())
            throw WorkspaceError("pose: crop plan references frame " + std::to_string(e.frame_index) +
                                 " beyond the walk");
        const CapturePose& pose = walk.poses[e.frame_index];
        cams.push_back(
            splat::camera_from_crop(e.camera, pose.rotation() * e.camera.rotation.toRotationMatrix(), pose.position));
    }
    return cams;
}

namespace detail {

inline std::optional<fs::path> find_executable(const std::string& name) {
    if (name.find('/') != std::string::npos) return fs::exists(name) ? std::optional<fs::path>(name) : std::nullopt;
    const char* path = std::getenv("PATH");
    if (!path) return std::nullopt;
    std::stringstream ss(path);
    std::string dir;
    while (std::getline(ss, dir, ':')) {
        if (dir.empty()) continue;
        const fs::path cand = fs::path(dir) / name;
        std::error_code ec;
        if (fs::is_regular_file(cand, ec)) return cand;
    }
    return std::nullopt;
}

inline std::string quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return out + "'";
}

inline void run_or_throw(const std::string& cmd, const fs::path& logfile) {
    const int rc = std::system((cmd + " >> " + quote(logfile.string()) + " 2>&1").c_str());
    if (rc != 0) throw WorkspaceError("command failed (exit " + std::to_string(rc) + "): " + cmd + "; see " + logfile.string());
}

inline PoseResult pose_ground_truth(const PipelineConfig& cfg, const Workspace& ws, const CropPlan& plan) {
    const WalkPath walk = walk_from_json(read_json(ws.capture() / "walk.json"));
    const SceneSpec scene = scene_from_json(read_json(ws.capture() / "scene.json"));
    PoseResult r;
    r.total_images = plan.size();
    r.cameras = ground_truth_cameras(walk, plan);

    splat::SparseModel model;
    model.cameras[1] = splat::colmap_camera_from_model(1, r.cameras.front());
    Rng rng(cfg.seeds.point_seed());
    std::int64_t next_point = 1;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        const auto& e = plan.entries[i];
        const int image_id = static_cast<int>(i) + 1;
        model.images.push_back(splat::colmap_image_from_camera(image_id, 1, crop_filename(i), r.cameras[i]));
        if (cfg.points_per_image == 0) continue;
        auto& im = model.images.back();
        const fs::path crop_path = ws.crops() / crop_filename(i);
        if (!fs::exists(crop_path)) throw WorkspaceError("pose: missing " + crop_path.string());
        const png::RawImage pixels = png::read_u8(crop_path);
        const fs::path mpath = ws.crops() / crop_mask_filename(i);
        const LossMask mask = fs::exists(mpath) ? read_mask_png(mpath) : LossMask::ones(pixels.width, pixels.height);
        const CapturePose& pose = walk.poses[e.frame_index];
        const Mat3 rot = pose.rotation() * e.camera.rotation.toRotationMatrix();
        std::uniform_int_distribution<int> px(0, e.camera.width - 1), py(0, e.camera.height - 1);
        int placed = 0;
        for (int tries = 0; placed < cfg.points_per_image && tries < 8 * cfg.points_per_image; ++tries) {
            const int x = px(rng), y = py(rng);
            if (!mask.at(x, y)) continue;
            const Vec3 d = (rot * e.camera.camera_ray(x, y)).normalized();
            const Hit hit = intersect(scene, pose.position, d);
            splat::ColmapPoint p;
            p.id = next_point++;
            p.xyz = splat::flip_y() * hit.point;
            const std::size_t o = (static_cast<std::size_t>(y) * pixels.width + x) * pixels.channels;
            for (int c = 0; c < 3; ++c) p.rgb[c] = pixels.bytes[o + (pixels.channels >= 3 ? c : 0)];
            p.track.emplace_back(image_id, static_cast<int>(im.points2d.size()));
            im.points2d.push_back({x + 0.5, y + 0.5, p.id});
            model.points.push_back(std::move(p));
            ++placed;
        }
    }
    reset_dir(ws.sparse());
    splat::write_sparse_model(ws.sparse(), model);
    r.registered = plan.size();
    return r;
}

inline PoseResult pose_external(const PipelineConfig& cfg, const Workspace& ws, const CropPlan& plan, std::ostream& log) {
    const auto exe = find_executable(cfg.colmap_binary);
    if (!exe)
        throw WorkspaceError("pose: COLMAP binary '" + cfg.colmap_binary +
                             "' not found on PATH. Install COLMAP, point \"colmap_binary\" at it, or set "
                             "\"colmap_mode\": \"ground-truth-poses\" in the config to use the analytic poses of a "
                             "synthetic capture");
    reset_dir(ws.sparse());
    const fs::path db = ws.sparse() / "database.db";
    const fs::path list = ws.sparse() / "image_list.txt";
    const fs::path logfile = ws.sparse() / "colmap.log";
    {
        std::ofstream l(list);
        for (std::size_t i = 0; i < plan.size(); ++i) l << crop_filename(i) << '\n';
    }
    const std::string bin = quote(exe->string());
    const auto& cam = plan.entries.front().camera;
    char params[128];
    std::snprintf(params, sizeof params, "%.17g,%.17g,%.17g,%.17g", cam.focal(), cam.focal(), cam.width / 2.0,
                  cam.height / 2.0);
    log << "pose: running COLMAP (" << cfg.colmap_matcher << " matcher), log in " << logfile.string() << "\n";
    run_or_throw(bin + " feature_extractor --database_path " + quote(db.string()) + " --image_path " +
                     quote(ws.crops().string()) + " --image_list_path " + quote(list.string()) +
                     " --ImageReader.camera_model PINHOLE --ImageReader.single_camera 1 --ImageReader.camera_params " +
                     params,
                 logfile);
    run_or_throw(bin + " " + cfg.colmap_matcher + "_matcher --database_path " + quote(db.string()), logfile);
    const fs::path models = ws.sparse() / "models";
    fs::create_directories(models);
    run_or_throw(bin + " mapper --database_path " + quote(db.string()) + " --image_path " + quote(ws.crops().string()) +
                     " --image_list_path " + quote(list.string()) + " --output_path " + quote(models.string()),
                 logfile);
    PoseResult r;
    r.total_images = plan.size();
    std::optional<fs::path> best;
    std::size_t best_n = 0;
    for (const auto& e : fs::directory_iterator(models)) {
        if (!e.is_directory()) continue;
        run_or_throw(bin + " model_converter --input_path " + quote(e.path().string()) + " --output_path " +
                         quote(e.path().string()) + " --output_type TXT",
                     logfile);
        const std::size_t n = splat::read_images_txt(e.path() / "images.txt").size();
        if (!best || n > best_n) {
            best = e.path();
            best_n = n;
        }
    }
    if (best) {
        for (const char* f : {"cameras.txt", "images.txt", "points3D.txt"})
            fs::copy_file(*best / f, ws.sparse() / f, fs::copy_options::overwrite_existing);
        r.registered = best_n;
    }
    return r;
}

}  // namespace detail

inline PoseResult cmd_pose(const PipelineConfig& cfg, std::ostream& log = std::cout) {
    cfg.validate();
    const Workspace ws{cfg.workspace};
    const CropPlan plan = load_crop_plan(ws);
    if (plan.size() == 0) throw WorkspaceError("pose: crop plan is empty");
    const std::size_t on_disk = count_crops(ws.crops());
    if (on_disk != plan.size())
        throw WorkspaceError("pose: plan lists " + std::to_string(plan.size()) + " crops but " +
                             std::to_string(on_disk) + " are on disk; rerun `pipeline crop`");
    PoseResult r = cfg.colmap_mode == ColmapMode::ground_truth_poses ? detail::pose_ground_truth(cfg, ws, plan)
                                                                     : detail::pose_external(cfg, ws, plan, log);
    write_json(ws.sparse() / "status.json", {{"mode", to_string(cfg.colmap_mode)},
                                             {"total_images", r.total_images},
                                             {"registered_images", r.registered ? nlohmann::json(*r.registered) : nlohmann::json()}});
    if (r.registered)
        log << "pose (" << to_string(cfg.colmap_mode) << "): " << *r.registered << "/" << r.total_images
            << " images registered\n";
    else
        log << "pose (" << to_string(cfg.colmap_mode) << "): no sparse model produced\n";
    return r;
}

// ---------------------------------------------------------------- reconstruct

struct ReconstructSummary {
    std::size_t views_total = 0;
    std::size_t views_used = 0;
    std::optional<double> heldout_psnr;  // pooled over masked pixels of every unused view
    std::optional<double> heldout_psnr_view_mean;
    double train_loss = 0.0;
    double seconds = 0.0;
    splat::GaussianScene scene;
};

/// Loads crop pixels and masks for ingested views.
inline void load_view_images(std::vector<splat::PosedImage>& views) {
    for (auto& v : views) {
        if (!fs::exists(v.image_path)) throw WorkspaceError("reconstruct: missing image " + v.image_path.string());
        v.image = png::read(v.image_path).cast<double>();
        if (v.image.width() != v.camera.width || v.image.height() != v.camera.height)
            throw WorkspaceError("reconstruct: " + v.image_path.string() + " does not match its camera size");
        const fs::path mp = v.image_path.parent_path() / mask_name_for_crop(v.name);
        if (fs::exists(mp)) v.mask = read_mask_png(mp);
    }
}

inline ReconstructSummary cmd_reconstruct(const PipelineConfig& cfg, std::ostream& log = std::cout) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const Workspace ws{cfg.workspace};
    if (!fs::exists(ws.sparse() / "images.txt"))
        throw WorkspaceError("reconstruct: no poses in " + ws.sparse().string() + "; run `pipeline pose` first");
    splat::IngestResult ing = splat::ingest_colmap_poses(ws.sparse(), ws.crops());
    if (ing.views.size() < 2)
        throw WorkspaceError("reconstruct: need at least 2 registered views, found " + std::to_string(ing.views.size()));
    if (!ing.unregistered.empty())
        log << "reconstruct: " << ing.unregistered.size() << " crop(s) without a registered pose are ignored\n";
    load_view_images(ing.views);

    ReconstructSummary s;
    s.views_total = ing.views.size();
    const auto idx = splat::subsample_indices(ing.views.size(), static_cast<std::size_t>(cfg.subsample_k),
                                              cfg.seeds.subsample_seed());
    std::vector<bool> used(ing.views.size(), false);
    std::vector<splat::PosedImage> train;
    for (std::size_t i : idx) {
        used[i] = true;
        train.push_back(ing.views[i]);
    }
    s.views_used = train.size();

    splat::ReconstructConfig rc;
    rc.num_gaussians = static_cast<std::size_t>(cfg.num_gaussians);
    rc.iterations = cfg.iterations;
    rc.seed = cfg.seeds.reconstruct_seed();
    rc.on_check = [&](int it, double loss) {
        log << "reconstruct: iteration " << it << " loss " << loss << "\n" << std::flush;
    };
    log << "reconstruct: " << train.size() << " of " << ing.views.size() << " views, " << rc.num_gaussians
        << " gaussians, " << rc.iterations << " iterations\n";
    splat::ReconstructResult res = splat::reconstruct(train, rc, ing.points, ing.point_colors);
    res.scene.scene_scale = ing.normalization.scale;
    s.scene = res.scene;
    s.train_loss = res.checks.back().second;

    reset_dir(ws.scene());
    splat::export_scene(res.scene, ws.scene() / "scene.bin", ws.scene() / "scene.json");
    nlohmann::json views_json = nlohmann::json::array();
    if (cfg.write_pluecker) fs::create_directories(ws.scene() / "pluecker");
    for (const auto& v : train) {
        nlohmann::json vj{{"name", v.name}};
        if (cfg.write_pluecker) {
            const std::string f = fs::path(v.name).stem().string() + ".f32";
            splat::write_pluecker_map(ws.scene() / "pluecker" / f, v.camera);
            vj["pluecker"] = "pluecker/" + f;
            vj["pluecker_shape"] = {6, v.camera.height, v.camera.width};
        }
        views_json.push_back(vj);
    }
    write_json(ws.scene() / "views.json", views_json);

    double se = 0, view_psnr_sum = 0;
    std::size_t count = 0, nviews = 0;
    for (std::size_t i = 0; i < ing.views.size(); ++i) {
        if (used[i]) continue;
        const auto& v = ing.views[i];
        const ImageD r = splat::rasterize(res.scene, v.camera, {rc.background}).color;
        const double l = splat::photometric_loss(r, v, nullptr);
        std::size_t n = v.mask.width() > 0 ? v.mask.count() : static_cast<std::size_t>(v.camera.width) * v.camera.height;
        if (n == 0) continue;
        se += l * 3.0 * static_cast<double>(n);
        count += 3 * n;
        view_psnr_sum += eval::psnr_from_mse(l);
        ++nviews;
    }
    if (count > 0) {
        s.heldout_psnr = eval::psnr_from_mse(se / static_cast<double>(count));
        s.heldout_psnr_view_mean = view_psnr_sum / static_cast<double>(nviews);
    }
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    nlohmann::json checks = nlohmann::json::array();
    for (const auto& [it, l] : res.checks) checks.push_back({it, l});
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
    write_json(ws.scene() / "metrics.json", {{"heldout_psnr", opt(s.heldout_psnr)},
                                             {"heldout_psnr_view_mean", opt(s.heldout_psnr_view_mean)},
                                             {"heldout_views", nviews},
                                             {"train_views", s.views_used},
                                             {"registered_views", s.views_total},
                                             {"train_loss", s.train_loss},
                                             {"iterations", cfg.iterations},
                                             {"num_gaussians", res.scene.size()},
                                             {"rejected_windows", res.rejected_windows},
                                             {"loss_checks", checks}});
    log << "reconstruct: train loss " << s.train_loss;
    if (s.heldout_psnr) log << ", held-out PSNR " << *s.heldout_psnr << " dB over " << nviews << " views";
    log << " (" << s.seconds << " s)\n";
    return s;
}

// ---------------------------------------------------------------- eval

inline eval::SceneEvalRecord evaluate_workspace(const fs::path& root, double failure_threshold) {
    const Workspace ws{root};
    if (!fs::is_directory(root)) throw WorkspaceError("eval: workspace " + root.string() + " does not exist");
    const std::size_t total = count_crops(ws.crops());
    if (total == 0) throw WorkspaceError("eval: workspace " + root.string() + " has no crops");
    std::optional<std::size_t> registered;
    if (fs::exists(ws.sparse() / "images.txt")) registered = splat::read_images_txt(ws.sparse() / "images.txt").size();
    std::string id = root.filename().string();
    if (id.empty() || id == ".") id = fs::absolute(root).lexically_normal().parent_path().filename().string();
    eval::SceneEvalRecord r = eval::make_record(id, total, registered, failure_threshold);
    const fs::path metrics = ws.scene() / "metrics.json";
    if (fs::exists(metrics)) {
        const auto j = read_json(metrics);
        if (j.contains("heldout_psnr") && !j["heldout_psnr"].is_null()) r.psnr_heldout = j["heldout_psnr"].get<double>();
    }
    return r;
}

struct EvalResult {
    std::vector<eval::SceneEvalRecord> records;
    nlohmann::json report;
};

inline EvalResult cmd_eval(const PipelineConfig& cfg, std::ostream& log = std::cout) {
    cfg.validate();
    const std::vector<fs::path> roots = cfg.eval_workspaces.empty() ? std::vector<fs::path>{cfg.workspace}
                                                                    : cfg.eval_workspaces;
    EvalResult r;
    for (const auto& w : roots) r.records.push_back(evaluate_workspace(w, cfg.failure_threshold));
    if (r.records.empty()) throw WorkspaceError("eval: no scenes to evaluate");
    r.report = eval::report_json(r.records);
    const Workspace ws{cfg.workspace};
    fs::create_directories(ws.reports());
    write_json(ws.reports() / "eval.json", r.report);
    eval::print_report(log, r.records);
    return r;
}

// ---------------------------------------------------------------- train (toy masked diffusion)

struct TrainResult {
    std::vector<double> losses;
    fs::path checkpoint;
};

/// Trains the toy denoiser on the capture: each clip as a masked video sample, evenly spaced
/// single frames as image samples.
inline TrainResult cmd_train(const PipelineConfig& cfg, std::ostream& log = std::cout) {
    cfg.validate();
    const Workspace ws{cfg.workspace};
    const auto& tc = cfg.train;
    ScanOptions so;
    so.clip_len = cfg.clip_len;
    so.stride = cfg.clip_stride;
    so.fps = cfg.fps;
    so.load_frames = true;
    const auto clips = scan_video_dir(ws.capture(), so);
    if (clips.empty())
        throw WorkspaceError("train: " + ws.capture().string() + " holds no complete clip of " +
                             std::to_string(cfg.clip_len) + " frames; synthesize more frames or lower clip_len");

    const diffusion::TagVocabulary vocab(tc.cond_dim);
    std::vector<diffusion::TrainingSample> videos, images;
    for (const auto& clip : clips) {
        std::vector<ImageF> frames;
        for (const auto& f : clip.frames) frames.push_back(f.image());
        diffusion::TrainingSample v;
        v.latent = diffusion::latent_from_frames(frames, tc.latent_frames, tc.latent_height, tc.latent_width);
        v.mask = diffusion::resize_mask_nearest(clip.merged_mask, tc.latent_height, tc.latent_width);
        v.condition = vocab.embed(clip.caption);
        videos.push_back(v);
        for (int k = 0; k < 4; ++k) {
            const std::size_t fi = static_cast<std::size_t>(k) * (frames.size() - 1) / 3;
            diffusion::TrainingSample im;
            im.latent = diffusion::latent_from_frames(std::span<const ImageF>(&frames[fi], 1), 1, tc.latent_height,
                                                      tc.latent_width);
            im.mask = LossMask::ones(tc.latent_width, tc.latent_height);
            im.condition = v.condition;
            im.kind = diffusion::SampleKind::image;
            images.push_back(im);
        }
    }
    const std::uint64_t seed = cfg.seeds.train_seed();
    diffusion::MixedBatchSampler sampler(images, videos, seed, tc.image_fraction);
    diffusion::Denoiser net(tc.denoiser(), seed);
    const auto sched = diffusion::NoiseSchedule::linear(tc.n_steps, tc.final_alpha_bar);
    Rng rng(seed + 1);
    TrainResult r;
    for (int step = 0; step < tc.steps; ++step) {
        const auto st = diffusion::train_step(net, sampler.next(tc.batch_size), sched, tc.lr, tc.patch_size, rng);
        r.losses.push_back(st.loss);
        if (step % 50 == 0 || step + 1 == tc.steps) log << "train: step " << step << " loss " << st.loss << "\n";
    }
    fs::create_directories(ws.train());
    r.checkpoint = ws.train() / "denoiser.ckpt";
    diffusion::save_checkpoint(r.checkpoint, net, tc.steps, diffusion::to_json(tc));
    diffusion::write_loss_csv(ws.train() / "loss.csv", r.losses);
    return r;
}

}  // namespace pano3d::pipeline
