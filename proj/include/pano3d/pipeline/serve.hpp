#pragma once

// Static HTTP server for a workspace: GET /scenes lists exported splat scenes, every other
// path is served from the workspace directory.

#include "pano3d/errors.hpp"
#include "pano3d/splat/export.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

namespace pano3d::pipeline {

/// Scenes under `workspace`: every `<dir>/<stem>.json` sidecar with a version field and a
/// `<stem>.bin` whose size matches the stated count.
inline nlohmann::json scene_index(const std::filesystem::path& workspace) {
    namespace fs = std::filesystem;
    nlohmann::json out = nlohmann::json::array();
    if (!fs::is_directory(workspace)) return out;
    std::vector<fs::path> sidecars;
    for (const auto& e : fs::recursive_directory_iterator(workspace)) {
        if (e.is_regular_file() && e.path().extension() == ".json" && fs::exists(fs::path(e.path()).replace_extension(".bin")))
            sidecars.push_back(e.path());
    }
    std::sort(sidecars.begin(), sidecars.end());
    for (const auto& p : sidecars) {
        nlohmann::json j;
        try {
            std::ifstream in(p);
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception&) {
            continue;
        }
        if (!j.is_object() || !j.contains("version") || !j.contains("count")) continue;
        const fs::path bin = fs::path(p).replace_extension(".bin");
        const auto count = j["count"].get<std::uint64_t>();
        if (fs::file_size(bin) != count * splat::kSplatRecordBytes) continue;
        const std::string rel_bin = fs::relative(bin, workspace).generic_string();
        const std::string rel_json = fs::relative(p, workspace).generic_string();
        out.push_back({{"id", fs::relative(p.parent_path(), workspace).generic_string() + "/" + p.stem().string()},
                       {"bin", "/" + rel_bin},
                       {"sidecar", "/" + rel_json},
                       {"count", count},
                       {"scene_scale", j.value("scene_scale", 1.0)},
                       {"version", j["version"]}});
    }
    return out;
}

/// Registers the routes on `server`. Throws WorkspaceError when the workspace is missing.
inline void configure_server(httplib::Server& server, const std::filesystem::path& workspace) {
    if (!std::filesystem::is_directory(workspace))
        throw WorkspaceError("serve: workspace " + workspace.string() + " does not exist");
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Get("/scenes", [workspace](const httplib::Request&, httplib::Response& res) {
        res.set_content(scene_index(workspace).dump(2), "application/json");
    });
    server.set_file_extension_and_mimetype_mapping("bin", "application/octet-stream");
    server.set_file_extension_and_mimetype_mapping("f32", "application/octet-stream");
    server.set_mount_point("/", workspace.string());
}

}  // namespace pano3d::pipeline
