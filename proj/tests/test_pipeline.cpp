#include "pano3d/pipeline/commands.hpp"
#include "pano3d/pipeline/serve.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

using namespace pano3d;
using namespace pano3d::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("pano3d_pipeline_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Small but complete settings so every stage runs in well under a second.
PipelineConfig tiny(const fs::path& ws) {
    PipelineConfig c;
    c.workspace = ws;
    c.seeds.master = 11;
    c.n_frames = 6;
    c.clip_len = 6;
    c.clip_stride = 6;
    c.equirect_height = 48;
    c.crop_resolution = 24;
    c.points_per_image = 16;
    c.subsample_k = 6;
    c.iterations = 60;
    c.num_gaussians = 300;
    c.train.steps = 5;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
    return out;
}

std::ostringstream sink;

void run_through_reconstruct(const PipelineConfig& c) {
    cmd_synthesize(c, sink);
    cmd_crop(c, sink);
    cmd_pose(c, sink);
    cmd_reconstruct(c, sink);
}

}  // namespace

TEST(PipelineConfig, DefaultsMatchCaptureSetup) {
    const PipelineConfig c;
    EXPECT_EQ(c.clip_len, 128);
    EXPECT_DOUBLE_EQ(c.fps, 12.0);
    EXPECT_EQ(c.crops_per_frame, 3);
    EXPECT_DOUBLE_EQ(c.crop_fov_deg, 120.0);
    EXPECT_EQ(c.subsample_k, 32);
    EXPECT_EQ(c.colmap_mode, ColmapMode::ground_truth_poses);
    EXPECT_NO_THROW(c.validate());
}

TEST(PipelineConfig, RejectsInvalidValues) {
    EXPECT_THROW(config_from_json({{"crop_fov_deg", 180.0}}), DomainError);
    EXPECT_THROW(config_from_json({{"crop_fov_deg", 0.0}}), DomainError);
    EXPECT_THROW(config_from_json({{"crops_per_frame", 0}}), DomainError);
    EXPECT_THROW(config_from_json({{"subsample_k", -1}}), DomainError);
    EXPECT_THROW(config_from_json({{"colmap_mode", "magic"}}), DomainError);
    EXPECT_THROW(config_from_json(nlohmann::json::array()), DomainError);
}

TEST(PipelineConfig, FileRoundTripAndRelativePaths) {
    const fs::path dir = scratch("config");
    PipelineConfig c = tiny("ws");
    c.colmap_mode = ColmapMode::external;
    c.seeds.crops = 99;
    {
        std::ofstream out(dir / "cfg.json");
        out << to_json(c).dump(2);
    }
    const PipelineConfig back = load_config(dir / "cfg.json");
    EXPECT_EQ(back.workspace, dir / "ws");
    EXPECT_EQ(back.n_frames, c.n_frames);
    EXPECT_EQ(back.colmap_mode, ColmapMode::external);
    EXPECT_EQ(back.seeds.crop_seed(), 99u);
    EXPECT_EQ(back.seeds.walk_seed(), c.seeds.walk_seed());
    EXPECT_EQ(back.train.steps, c.train.steps);
}

TEST(PipelineConfig, MalformedFileIsParseError) {
    const fs::path dir = scratch("config_bad");
    {
        std::ofstream out(dir / "cfg.json");
        out << "{ \"n_frames\": 3,";
    }
    try {
        load_config(dir / "cfg.json");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.file(), (dir / "cfg.json").string());
    }
    EXPECT_THROW(load_config(dir / "missing.json"), WorkspaceError);
}

TEST(PipelineConfig, StageSeedsDifferAndFollowMaster) {
    Seeds a, b;
    b.master = 1;
    EXPECT_NE(a.walk_seed(), a.crop_seed());
    EXPECT_NE(a.walk_seed(), b.walk_seed());
    a.walk = 5;
    EXPECT_EQ(a.walk_seed(), 5u);
}

TEST(Synthesize, DefaultClipIs128FramesOf10_67Seconds) {
    const fs::path ws = scratch("synth_default");
    PipelineConfig c;
    c.workspace = ws;
    c.equirect_height = 16;  // frame count and timing do not depend on resolution
    const SynthesizeResult r = cmd_synthesize(c, sink);
    EXPECT_EQ(r.n_frames, 128);
    EXPECT_DOUBLE_EQ(r.duration_s, 10.67);
    EXPECT_EQ(r.clips, 1u);
    EXPECT_EQ(count_frames(ws / "capture"), 128u);
    const auto manifest = read_json(ws / "capture" / "manifest.json");
    EXPECT_DOUBLE_EQ(manifest["clips"][0]["duration_s"].get<double>(), 10.67);
    EXPECT_EQ(manifest["clips"][0]["caption"], default_scene().caption);
}

TEST(Crop, DefaultPlanGives384ImagesOnDisk) {
    const fs::path ws = scratch("crop_default");
    PipelineConfig c;
    c.workspace = ws;
    c.equirect_height = 16;
    c.crop_resolution = 8;
    cmd_synthesize(c, sink);
    const CropResult r = cmd_crop(c, sink);
    EXPECT_EQ(r.n_crops, 384u);
    EXPECT_EQ(count_crops(ws / "crops"), 384u);
    EXPECT_TRUE(fs::exists(ws / "crops" / crop_mask_filename(383)));
    std::ifstream in(ws / "crops" / "plan.jsonl");
    EXPECT_EQ(read_crop_plan_jsonl(in).size(), 384u);
}

TEST(Synthesize, SingleFrameCapture) {
    const fs::path ws = scratch("synth_single");
    PipelineConfig c = tiny(ws);
    c.n_frames = 1;
    const SynthesizeResult r = cmd_synthesize(c, sink);
    EXPECT_EQ(r.n_frames, 1);
    EXPECT_EQ(r.clips, 0u);  // shorter than a clip: still a valid image capture
    EXPECT_EQ(count_frames(ws / "capture"), 1u);
    EXPECT_EQ(cmd_crop(c, sink).n_crops, 3u);
}

TEST(Synthesize, PhotographerMaskExcludesPixels) {
    const fs::path ws = scratch("synth_mask");
    const PipelineConfig c = tiny(ws);
    cmd_synthesize(c, sink);
    const LossMask m = read_mask_png(ws / "capture" / mask_filename(0));
    EXPECT_LT(m.count(), m.bits().size());
    EXPECT_GT(m.count(), m.bits().size() / 2);
}

TEST(Crop, NoFramesIsWorkspaceError) {
    const fs::path ws = scratch("crop_empty");
    EXPECT_THROW(cmd_crop(tiny(ws), sink), WorkspaceError);
    fs::create_directories(ws / "capture");
    EXPECT_THROW(cmd_crop(tiny(ws), sink), WorkspaceError);
}

TEST(Pipeline, RerunIsByteIdentical) {
    const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
    run_through_reconstruct(tiny(a));
    run_through_reconstruct(tiny(b));
    const auto ta = tree(a), tb = tree(b);
    ASSERT_EQ(ta.size(), tb.size());
    for (const auto& [name, bytes] : ta) {
        ASSERT_TRUE(tb.count(name)) << name;
        EXPECT_TRUE(bytes == tb.at(name)) << name;
    }
    // rerunning in place rewrites the same bytes too
    run_through_reconstruct(tiny(a));
    EXPECT_TRUE(tree(a) == ta);
}

TEST(Pipeline, DifferentSeedChangesCapture) {
    const fs::path a = scratch("seed_a"), b = scratch("seed_b");
    PipelineConfig ca = tiny(a), cb = tiny(b);
    cb.seeds.master = 12;
    cmd_synthesize(ca, sink);
    cmd_synthesize(cb, sink);
    EXPECT_NE(slurp(a / "capture" / "walk.json"), slurp(b / "capture" / "walk.json"));
}

TEST(Pose, GroundTruthRoundTripMatchesWalkWithinTolerance) {
    const fs::path ws = scratch("pose_gt");
    const PipelineConfig c = tiny(ws);
    cmd_synthesize(c, sink);
    cmd_crop(c, sink);
    const PoseResult pr = cmd_pose(c, sink);
    ASSERT_EQ(pr.registered, std::optional<std::size_t>(18));

    // independent expectation: flip_y(walk position), unit-box normalised, and crop rotation
    const WalkPath walk = walk_from_json(read_json(ws / "capture" / "walk.json"));
    std::ifstream plan_in(ws / "crops" / "plan.jsonl");
    const CropPlan plan = read_crop_plan_jsonl(plan_in);
    std::vector<Vec3> centres;
    for (const auto& e : plan.entries) {
        const Vec3 p = walk.poses[e.frame_index].position;
        centres.emplace_back(p.x(), -p.y(), p.z());
    }
    Vec3 lo = centres[0], hi = centres[0];
    for (const auto& p : centres) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Vec3 mid = 0.5 * (lo + hi);
    const double extent = (hi - lo).maxCoeff();

    const auto ing = splat::ingest_colmap_poses(ws / "sparse", ws / "crops");
    ASSERT_EQ(ing.views.size(), plan.size());
    EXPECT_TRUE(ing.unregistered.empty());
    for (std::size_t i = 0; i < plan.size(); ++i) {
        EXPECT_EQ(ing.views[i].name, crop_filename(i));
        const Vec3 expect = (centres[i] - mid) / extent;
        EXPECT_LT((ing.views[i].camera.position - expect).norm(), 1e-6) << i;
        // optical axis: +z of the crop camera in the panorama frame, y-flipped
        const Mat3 r = walk.poses[plan.entries[i].frame_index].rotation() *
                       plan.entries[i].camera.rotation.toRotationMatrix();
        Vec3 axis = r.col(2);
        axis.y() = -axis.y();
        EXPECT_LT((ing.views[i].camera.world_from_camera.col(2) - axis).norm(), 1e-9) << i;
        EXPECT_NEAR(ing.views[i].camera.fx, plan.entries[i].camera.focal(), 1e-9);
    }
}

TEST(Pose, GroundTruthPointsProjectOntoTheirObservations) {
    const fs::path ws = scratch("pose_points");
    const PipelineConfig c = tiny(ws);
    cmd_synthesize(c, sink);
    cmd_crop(c, sink);
    cmd_pose(c, sink);
    const auto model = splat::read_sparse_model(ws / "sparse");
    ASSERT_FALSE(model.points.empty());
    std::map<std::int64_t, Vec3> pts;
    for (const auto& p : model.points) pts[p.id] = p.xyz;
    const auto& cam = model.cameras.at(1);
    std::size_t checked = 0;
    for (const auto& im : model.images) {
        const Mat3 r = im.rotation.toRotationMatrix();
        for (const auto& o : im.points2d) {
            const Vec3 pc = r * pts.at(o.point3d_id) + im.translation;
            ASSERT_GT(pc.z(), 0);
            EXPECT_NEAR(cam.params[0] * pc.x() / pc.z() + cam.params[2], o.x, 1e-6);
            EXPECT_NEAR(cam.params[1] * pc.y() / pc.z() + cam.params[3], o.y, 1e-6);
            ++checked;
        }
    }
    EXPECT_GT(checked, 0u);
}

TEST(Pose, MissingColmapBinaryNamesFallback) {
    const fs::path ws = scratch("pose_external");
    PipelineConfig c = tiny(ws);
    cmd_synthesize(c, sink);
    cmd_crop(c, sink);
    c.colmap_mode = ColmapMode::external;
    c.colmap_binary = "pano3d-no-such-colmap-binary";
    try {
        cmd_pose(c, sink);
        FAIL() << "expected WorkspaceError";
    } catch (const WorkspaceError& e) {
        EXPECT_NE(std::string(e.what()).find("ground-truth-poses"), std::string::npos) << e.what();
    }
}

TEST(Pose, NoCropsIsWorkspaceError) {
    const fs::path ws = scratch("pose_nocrops");
    EXPECT_THROW(cmd_pose(tiny(ws), sink), WorkspaceError);
}

TEST(Reconstruct, MissingPosesIsWorkspaceError) {
    const fs::path ws = scratch("recon_noposes");
    const PipelineConfig c = tiny(ws);
    cmd_synthesize(c, sink);
    cmd_crop(c, sink);
    EXPECT_THROW(cmd_reconstruct(c, sink), WorkspaceError);
}

TEST(Reconstruct, CorruptSparseModelReportsFileAndLine) {
    const fs::path ws = scratch("recon_corrupt");
    fs::create_directories(ws / "sparse");
    for (const auto& e : fs::directory_iterator(fs::path(PANO3D_TEST_DATA_DIR) / "colmap_corrupt"))
        fs::copy_file(e.path(), ws / "sparse" / e.path().filename());
    try {
        cmd_reconstruct(tiny(ws), sink);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(fs::path(e.file()).filename(), "images.txt");
        EXPECT_EQ(e.line(), 4u);
    }
}

TEST(Reconstruct, ExportsSceneMetricsAndPluecker) {
    const fs::path ws = scratch("recon_outputs");
    PipelineConfig c = tiny(ws);
    c.subsample_k = 4;
    run_through_reconstruct(c);
    const auto sidecar = read_json(ws / "scene" / "scene.json");
    EXPECT_EQ(sidecar["version"], splat::kSceneFormatVersion);
    EXPECT_EQ(sidecar["count"], 300);
    EXPECT_EQ(fs::file_size(ws / "scene" / "scene.bin"), 300 * splat::kSplatRecordBytes);
    const auto scene = splat::import_scene(ws / "scene" / "scene.bin", ws / "scene" / "scene.json");
    EXPECT_EQ(scene.size(), 300u);

    const auto metrics = read_json(ws / "scene" / "metrics.json");
    EXPECT_EQ(metrics["train_views"], 4);
    EXPECT_EQ(metrics["heldout_views"], 14);
    EXPECT_TRUE(metrics["heldout_psnr"].is_number());
    const auto& checks = metrics["loss_checks"];
    for (std::size_t i = 1; i < checks.size(); ++i)
        EXPECT_LE(checks[i][1].get<double>(), checks[i - 1][1].get<double>());

    const auto views = read_json(ws / "scene" / "views.json");
    ASSERT_EQ(views.size(), 4u);
    for (const auto& v : views)
        EXPECT_EQ(fs::file_size(ws / "scene" / v["pluecker"].get<std::string>()), 6u * 24 * 24 * sizeof(float));
}

TEST(Reconstruct, KEqualToViewCountUsesAllViews) {
    const fs::path ws = scratch("recon_all");
    PipelineConfig c = tiny(ws);
    c.subsample_k = 18;
    c.iterations = 10;
    run_through_reconstruct(c);
    const auto metrics = read_json(ws / "scene" / "metrics.json");
    EXPECT_EQ(metrics["train_views"], 18);
    EXPECT_EQ(metrics["heldout_views"], 0);
    EXPECT_TRUE(metrics["heldout_psnr"].is_null());
    c.subsample_k = 19;
    EXPECT_THROW(cmd_reconstruct(c, sink), DomainError);
}

namespace {

// Workspace with `total` crop files and a sparse model registering `registered` of them.
fs::path eval_fixture(const std::string& name, std::size_t total, std::optional<std::size_t> registered) {
    const fs::path ws = scratch(name);
    fs::create_directories(ws / "crops");
    for (std::size_t i = 0; i < total; ++i) std::ofstream(ws / "crops" / crop_filename(i)).put('x');
    if (registered) {
        splat::SparseModel m;
        splat::CameraModel cam;
        cam.width = cam.height = 8;
        cam.fx = cam.fy = 4;
        m.cameras[1] = splat::colmap_camera_from_model(1, cam);
        for (std::size_t i = 0; i < *registered; ++i)
            m.images.push_back(splat::colmap_image_from_camera(static_cast<int>(i) + 1, 1, crop_filename(i), cam));
        fs::create_directories(ws / "sparse");
        splat::write_sparse_model(ws / "sparse", m);
    }
    return ws;
}

}  // namespace

TEST(Eval, FullyRegisteredSceneHasRateOneAndNoFailures) {
    const fs::path ws = eval_fixture("eval_full", 384, 384);
    PipelineConfig c;
    c.workspace = ws;
    std::ostringstream out;
    const EvalResult r = cmd_eval(c, out);
    ASSERT_EQ(r.records.size(), 1u);
    EXPECT_DOUBLE_EQ(eval::matching_rate(r.records[0]), 1.0);
    EXPECT_DOUBLE_EQ(r.report["summary"]["failure_rate"].get<double>(), 0.0);
    EXPECT_TRUE(fs::exists(ws / "reports" / "eval.json"));
    EXPECT_NE(out.str().find("100.00"), std::string::npos);
}

TEST(Eval, BatchRatesMatchHandArithmetic) {
    PipelineConfig c;
    c.workspace = scratch("eval_batch_out");
    c.eval_workspaces = {eval_fixture("eval_b1", 384, 384), eval_fixture("eval_b2", 384, 363),
                         eval_fixture("eval_b3", 384, 30),  // 7.8% registered: below the threshold
                         eval_fixture("eval_b4", 384, std::nullopt)};
    const EvalResult r = cmd_eval(c, sink);
    const auto& s = r.report["summary"];
    EXPECT_DOUBLE_EQ(s["failure_rate"].get<double>(), 2.0 / 4.0);
    EXPECT_DOUBLE_EQ(s["matching_rate_scene_mean"].get<double>(), (1.0 + 363.0 / 384.0) / 2.0);
    EXPECT_DOUBLE_EQ(s["matching_rate_pooled"].get<double>(), (384.0 + 363.0) / 768.0);
    EXPECT_EQ(r.records[0].scene_id, "pano3d_pipeline_eval_b1");
}

TEST(Eval, NoScenesIsError) {
    PipelineConfig c;
    c.workspace = scratch("eval_none");
    EXPECT_THROW(cmd_eval(c, sink), WorkspaceError);
    c.eval_workspaces = {c.workspace / "does-not-exist"};
    EXPECT_THROW(cmd_eval(c, sink), WorkspaceError);
}

TEST(Eval, PicksUpHeldOutPsnr) {
    const fs::path ws = scratch("eval_psnr");
    PipelineConfig c = tiny(ws);
    run_through_reconstruct(c);
    const EvalResult r = cmd_eval(c, sink);
    ASSERT_TRUE(r.records[0].psnr_heldout.has_value());
    EXPECT_DOUBLE_EQ(*r.records[0].psnr_heldout, read_json(ws / "scene" / "metrics.json")["heldout_psnr"].get<double>());
}

TEST(Train, WritesCheckpointAndLossCurve) {
    const fs::path ws = scratch("train");
    const PipelineConfig c = tiny(ws);
    cmd_synthesize(c, sink);
    const TrainResult r = cmd_train(c, sink);
    EXPECT_EQ(r.losses.size(), 5u);
    for (double l : r.losses) EXPECT_TRUE(std::isfinite(l));
    const auto ck = diffusion::load_checkpoint(r.checkpoint);
    EXPECT_EQ(ck.step, 5);
    EXPECT_TRUE(fs::exists(ws / "train" / "loss.csv"));
}

TEST(Train, CaptureShorterThanClipIsWorkspaceError) {
    const fs::path ws = scratch("train_short");
    PipelineConfig c = tiny(ws);
    c.n_frames = 3;
    cmd_synthesize(c, sink);
    EXPECT_THROW(cmd_train(c, sink), WorkspaceError);
}

namespace {

void write_scene(const fs::path& dir, const std::string& stem, std::size_t n) {
    splat::GaussianScene s;
    for (std::size_t i = 0; i < n; ++i) {
        splat::Gaussian3D g;
        g.position = Vec3(static_cast<double>(i), 0.5, -1.0);
        s.gaussians.push_back(g);
    }
    fs::create_directories(dir);
    splat::export_scene(s, dir / (stem + ".bin"), dir / (stem + ".json"));
}

}  // namespace

TEST(Serve, SceneIndexListsOnlyConsistentScenes) {
    const fs::path ws = scratch("serve_index");
    write_scene(ws / "scene", "scene", 3);
    write_scene(ws / "other", "b", 2);
    write_scene(ws / "broken", "c", 2);
    std::ofstream(ws / "broken" / "c.bin", std::ios::app).put('\0');  // 65 bytes for count 2
    std::ofstream(ws / "scene" / "metrics.json") << "{\"count\": 1}";  // no .bin next to it
    const auto idx = scene_index(ws);
    ASSERT_EQ(idx.size(), 2u);
    EXPECT_EQ(idx[0]["id"], "other/b");
    EXPECT_EQ(idx[1]["id"], "scene/scene");
    EXPECT_EQ(idx[1]["count"], 3);
    EXPECT_EQ(idx[1]["bin"], "/scene/scene.bin");
    EXPECT_EQ(idx[1]["version"], 1);
    EXPECT_TRUE(scene_index(ws / "missing").empty());
}

TEST(Serve, HttpScenesEndpointAndStaticFiles) {
    const fs::path ws = scratch("serve_http");
    write_scene(ws / "scene", "scene", 3);
    httplib::Server server;
    configure_server(server, ws);
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client cli("127.0.0.1", port);
    auto res = cli.Get("/scenes");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
    const auto idx = nlohmann::json::parse(res->body);
    ASSERT_EQ(idx.size(), 1u);

    auto bin = cli.Get(idx[0]["bin"].get<std::string>());
    ASSERT_TRUE(bin);
    EXPECT_EQ(bin->status, 200);
    EXPECT_EQ(bin->body, slurp(ws / "scene" / "scene.bin"));
    const auto records = splat::decode_scene(std::vector<std::uint8_t>(bin->body.begin(), bin->body.end()), 3);
    EXPECT_FLOAT_EQ(records[2].position[0], 2.0f);

    auto missing = cli.Get("/scene/nothing.bin");
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 404);

    server.stop();
    t.join();
}

TEST(Serve, MissingWorkspaceIsError) {
    httplib::Server server;
    EXPECT_THROW(configure_server(server, scratch("serve_missing") / "nope"), WorkspaceError);
}

TEST(Crop, MasksFollowNearestSampledFrameMask) {
    const fs::path ws = scratch("crop_masks");
    PipelineConfig c = tiny(ws);
    c.n_frames = 2;
    cmd_synthesize(c, sink);
    const CropResult r = cmd_crop(c, sink);
    std::size_t excluded = 0;
    for (std::size_t i = 0; i < r.n_crops; ++i) {
        const auto& e = r.plan.entries[i];
        const LossMask fm = read_mask_png(ws / "capture" / mask_filename(e.frame_index));
        ImageF as_image(fm.width(), fm.height(), 1);
        for (int y = 0; y < fm.height(); ++y)
            for (int x = 0; x < fm.width(); ++x) as_image.at(x, y) = fm.at(x, y);
        const ImageF expect = render_crop(EquirectFrame(as_image), e.camera, Sampling::nearest);
        const LossMask got = read_mask_png(ws / "crops" / crop_mask_filename(i));
        for (int y = 0; y < got.height(); ++y)
            for (int x = 0; x < got.width(); ++x) {
                ASSERT_EQ(got.at(x, y), expect.at(x, y) > 0.5f) << i << " " << x << "," << y;
                excluded += got.at(x, y) ? 0 : 1;
            }
        const ImageF stored = png::read(ws / "crops" / crop_filename(i));
        const ImageF direct =
            render_crop(EquirectFrame(png::read(ws / "capture" / frame_filename(e.frame_index))), e.camera);
        for (std::size_t k = 0; k < stored.size(); ++k)
            ASSERT_LE(std::abs(stored.data()[k] - direct.data()[k]), 0.5f / 255.0f + 1e-6f);
    }
    EXPECT_GT(excluded, 0u);
}
