#include "pano3d/pipeline/commands.hpp"
#include "pano3d/pipeline/serve.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

namespace {

using namespace pano3d;
using namespace pano3d::pipeline;

struct CommonArgs {
    std::string config;
    std::string workspace;
    std::optional<std::uint64_t> seed;
};

PipelineConfig resolve(const CommonArgs& a) {
    PipelineConfig cfg = a.config.empty() ? PipelineConfig{} : load_config(a.config);
    if (!a.workspace.empty()) cfg.workspace = a.workspace;
    if (a.seed) cfg.seeds.master = *a.seed;
    return cfg;
}

httplib::Server* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Panorama walk-through to gaussian splat scene pipeline"};
    app.require_subcommand(1);
    CommonArgs args;
    app.add_option("-c,--config", args.config, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("-w,--workspace", args.workspace, "workspace directory (overrides the config)");
    app.add_option("-s,--seed", args.seed, "master seed (overrides the config)");

    auto* synth = app.add_subcommand("synthesize", "render a synthetic 360 walk-through into capture/");
    int frames = 0;
    synth->add_option("--frames", frames, "number of frames")->check(CLI::PositiveNumber);
    app.add_subcommand("crop", "cut perspective crops from every frame into crops/");
    auto* pose = app.add_subcommand("pose", "recover camera poses into sparse/");
    std::string mode;
    pose->add_option("--mode", mode, "external or ground-truth-poses");
    auto* recon = app.add_subcommand("reconstruct", "optimise gaussians from posed crops into scene/");
    int iterations = -1;
    recon->add_option("--iterations", iterations, "optimisation iterations")->check(CLI::NonNegativeNumber);
    auto* ev = app.add_subcommand("eval", "matching rate, failure rate and held-out PSNR report");
    std::vector<std::string> eval_ws;
    ev->add_option("workspaces", eval_ws, "workspaces to evaluate (default: --workspace)");
    auto* serve = app.add_subcommand("serve", "serve workspace files and GET /scenes");
    std::string host;
    int port = 0;
    serve->add_option("--host", host, "bind address");
    serve->add_option("--port", port, "port")->check(CLI::Range(1, 65535));
    app.add_subcommand("train", "train the toy masked video denoiser on capture/");

    CLI11_PARSE(app, argc, argv);

    try {
        PipelineConfig cfg = resolve(args);
        if (frames > 0) cfg.n_frames = frames;
        if (!mode.empty()) cfg.colmap_mode = colmap_mode_from_string(mode);
        if (iterations >= 0) cfg.iterations = iterations;
        for (const auto& w : eval_ws) cfg.eval_workspaces.emplace_back(w);
        if (!host.empty()) cfg.serve_host = host;
        if (port > 0) cfg.serve_port = port;

        if (synth->parsed()) cmd_synthesize(cfg);
        else if (app.got_subcommand("crop")) cmd_crop(cfg);
        else if (pose->parsed()) cmd_pose(cfg);
        else if (recon->parsed()) cmd_reconstruct(cfg);
        else if (ev->parsed()) cmd_eval(cfg);
        else if (serve->parsed()) {
            httplib::Server server;
            configure_server(server, cfg.workspace);
            g_server = &server;
            std::signal(SIGINT, [](int) {
                if (g_server) g_server->stop();
            });
            std::cout << "serving " << cfg.workspace.string() << " on http://" << cfg.serve_host << ":" << cfg.serve_port
                      << " (GET /scenes)" << std::endl;
            if (!server.listen(cfg.serve_host, cfg.serve_port)) {
                std::cerr << "error: cannot listen on " << cfg.serve_host << ":" << cfg.serve_port << "\n";
                return 1;
            }
        } else if (app.got_subcommand("train")) cmd_train(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
