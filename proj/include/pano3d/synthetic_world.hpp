#pragma once

// Procedural indoor scene used as ground truth: an axis-aligned room with
// soft checker textures on every face plus a few spheres and boxes, rendered
// by ray casting into equirect or pinhole images.

#include "pano3d/capture_prep.hpp"
#include "pano3d/errors.hpp"
#include "pano3d/math.hpp"
#include "pano3d/pano_geometry.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace pano3d {

struct CheckerTexture {
    double cell = 0.5;
    Vec3 color_a{0.8, 0.8, 0.8};
    Vec3 color_b{0.3, 0.3, 0.3};
};

enum class RoomFace { neg_x = 0, pos_x, floor, ceiling, neg_z, pos_z };

struct Room {
    Vec3 min{-2.0, 0.0, -2.5};
    Vec3 max{2.0, 2.6, 2.5};
    std::array<CheckerTexture, 6> faces{};

    bool contains(const Vec3& p, double margin = 0.0) const {
        return (p.array() > min.array() + margin).all() && (p.array() < max.array() - margin).all();
    }
};

struct Primitive {
    enum class Kind { sphere, box };
    Kind kind = Kind::sphere;
    Vec3 center = Vec3::Zero();
    Vec3 size{0.3, 0.3, 0.3};  // sphere: radius in x; box: half extents
    Vec3 albedo{0.7, 0.2, 0.2};

    double bounding_radius() const { return kind == Kind::sphere ? size.x() : size.norm(); }
};

struct SceneSpec {
    Room room;
    std::vector<Primitive> primitives;
    double ambient = 0.45;
    Vec3 light_dir = Vec3(0.35, 0.85, 0.4).normalized();  // towards the light
    double checker_sharpness = 3.0;  // larger = harder checker edges
    std::string caption = "a small checkered room with a red ball, a green crate and a blue lamp";

    void validate() const {
        if (!(room.min.array() < room.max.array()).all()) throw DomainError("room min must be below max");
        for (const auto& p : primitives)
            if (!room.contains(p.center)) throw DomainError("primitive centre outside room");
        for (const auto& f : room.faces)
            if (!(f.cell > 0)) throw DomainError("checker cell must be positive");
    }
};

/// The reference room used across tests and the default pipeline config.
inline SceneSpec default_scene() {
    SceneSpec s;
    auto& f = s.room.faces;
    f[0] = {0.5, {0.86, 0.74, 0.52}, {0.46, 0.34, 0.22}};
    f[1] = {0.5, {0.55, 0.75, 0.88}, {0.18, 0.32, 0.52}};
    f[2] = {0.6, {0.78, 0.78, 0.74}, {0.32, 0.30, 0.28}};
    f[3] = {0.7, {0.92, 0.92, 0.90}, {0.62, 0.62, 0.66}};
    f[4] = {0.5, {0.70, 0.86, 0.62}, {0.30, 0.46, 0.24}};
    f[5] = {0.5, {0.90, 0.66, 0.70}, {0.50, 0.22, 0.30}};
    s.primitives = {
        {Primitive::Kind::sphere, {1.05, 0.45, 1.35}, {0.45, 0.45, 0.45}, {0.85, 0.25, 0.2}},
        {Primitive::Kind::box, {-1.2, 0.4, -1.55}, {0.4, 0.4, 0.35}, {0.25, 0.7, 0.3}},
        {Primitive::Kind::sphere, {-1.55, 1.9, 2.05}, {0.25, 0.25, 0.25}, {0.3, 0.4, 0.9}},
    };
    return s;
}

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::Zero();
    int object = -1;  // 0..5 room faces, 6+ primitives
};

namespace detail {

inline std::optional<std::pair<double, Vec3>> hit_sphere(const Primitive& p, const Vec3& o, const Vec3& d) {
    const Vec3 oc = o - p.center;
    const double b = oc.dot(d);
    const double c = oc.squaredNorm() - p.size.x() * p.size.x();
    const double disc = b * b - c;
    if (disc < 0) return std::nullopt;
    const double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t <= 1e-9) t = -b + sq;
    if (t <= 1e-9) return std::nullopt;
    return std::pair{t, ((o + t * d) - p.center).normalized()};
}

inline std::optional<std::pair<double, Vec3>> hit_box(const Primitive& p, const Vec3& o, const Vec3& d) {
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    int axis = -1;
    double sign = 0;
    for (int a = 0; a < 3; ++a) {
        const double lo = p.center[a] - p.size[a], hi = p.center[a] + p.size[a];
        if (std::abs(d[a]) < 1e-15) {
            if (o[a] < lo || o[a] > hi) return std::nullopt;
            continue;
        }
        double ta = (lo - o[a]) / d[a], tb = (hi - o[a]) / d[a];
        double s = -1;
        if (ta > tb) {
            std::swap(ta, tb);
            s = 1;
        }
        if (ta > t0) {
            t0 = ta;
            axis = a;
            sign = s;
        }
        t1 = std::min(t1, tb);
    }
    if (t0 > t1 || t0 <= 1e-9 || axis < 0) return std::nullopt;
    Vec3 n = Vec3::Zero();
    n[axis] = sign;
    return std::pair{t0, n};
}

}  // namespace detail

/// Nearest surface along the unit ray o + t d (t > 0). The room always yields a hit for interior origins.
inline Hit intersect(const SceneSpec& scene, const Vec3& o, const Vec3& d) {
    Hit best;
    const Room& r = scene.room;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) continue;
        const bool pos = d[a] > 0;
        const double t = ((pos ? r.max[a] : r.min[a]) - o[a]) / d[a];
        if (t > 0 && t < best.t) {
            best.t = t;
            best.normal = Vec3::Zero();
            best.normal[a] = pos ? -1.0 : 1.0;
            best.object = 2 * a + (pos ? 1 : 0);
        }
    }
    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        const auto& p = scene.primitives[i];
        const auto h = p.kind == Primitive::Kind::sphere ? detail::hit_sphere(p, o, d) : detail::hit_box(p, o, d);
        if (h && h->first < best.t) {
            best.t = h->first;
            best.normal = h->second;
            best.object = 6 + static_cast<int>(i);
        }
    }
    if (best.object >= 0) best.point = o + best.t * d;
    return best;
}

/// Albedo at a surface point; room faces use the soft checker over the two in-plane axes.
inline Vec3 surface_albedo(const SceneSpec& scene, const Hit& hit) {
    if (hit.object >= 6) return scene.primitives[hit.object - 6].albedo;
    const CheckerTexture& tex = scene.room.faces[hit.object];
    const int axis = hit.object / 2;
    const int ia = axis == 0 ? 1 : 0;
    const int ib = axis == 2 ? 1 : 2;
    const double sa = std::sin(kPi * hit.point[ia] / tex.cell);
    const double sb = std::sin(kPi * hit.point[ib] / tex.cell);
    const double s = 0.5 + 0.5 * std::clamp(scene.checker_sharpness * sa * sb, -1.0, 1.0);
    return tex.color_a * s + tex.color_b * (1.0 - s);
}

inline Vec3 shade(const SceneSpec& scene, const Hit& hit) {
    if (hit.object < 0) return Vec3::Zero();
    const double lambert = std::max(0.0, hit.normal.dot(scene.light_dir));
    return surface_albedo(scene, hit) * (scene.ambient + (1.0 - scene.ambient) * lambert);
}

inline Vec3 trace(const SceneSpec& scene, const Vec3& o, const Vec3& d) { return shade(scene, intersect(scene, o, d)); }

struct CapturePose {
    Vec3 position = Vec3::Zero();
    double yaw_deg = 0.0;

    /// World-from-rig rotation of the panoramic camera.
    Mat3 rotation() const { return rotation_yaw(deg2rad(yaw_deg)); }
};

inline EquirectFrame render_equirect(const SceneSpec& scene, const CapturePose& pose, int h) {
    if (h < 2 || h % 2 != 0) throw DomainError("render_equirect: height must be even and >= 2");
    if (!scene.room.contains(pose.position)) throw DomainError("render_equirect: pose outside room");
    const int w = 2 * h;
    const Mat3 rot = pose.rotation();
    ImageF img(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Vec3 d = rot * dir_from_equirect(x, y, w, h).vec();
            const Vec3 c = trace(scene, pose.position, d);
            for (int k = 0; k < 3; ++k) img.at(x, y, k) = static_cast<float>(c[k]);
        }
    return EquirectFrame(std::move(img));
}

/// Direct ray-cast of a pinhole camera (camera position and rotation both used).
inline ImageF render_perspective(const SceneSpec& scene, const PerspectiveCamera& cam) {
    cam.validate();
    if (!scene.room.contains(cam.position)) throw DomainError("render_perspective: camera outside room");
    const Mat3 rot = cam.rotation.toRotationMatrix();
    ImageF img(cam.width, cam.height, 3);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const Vec3 c = trace(scene, cam.position, (rot * cam.camera_ray(x, y)).normalized());
            for (int k = 0; k < 3; ++k) img.at(x, y, k) = static_cast<float>(c[k]);
        }
    return img;
}

struct WalkPath {
    std::vector<CapturePose> poses;
    double fps = 12.0;

    std::size_t size() const noexcept { return poses.size(); }
};

struct WalkOptions {
    double max_step = 0.03;
    double eye_height = 1.5;
    double wall_margin = 0.6;
    double obstacle_clearance = 0.25;
    int waypoints = 5;
    double fps = 12.0;
};

namespace detail {

inline Vec3 catmull_rom(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3, double t) {
    const double t2 = t * t, t3 = t2 * t;
    return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                  (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3);
}

inline bool clear_of_primitives(const SceneSpec& scene, const Vec3& p, double clearance) {
    return std::all_of(scene.primitives.begin(), scene.primitives.end(), [&](const Primitive& prim) {
        return (p - prim.center).norm() > prim.bounding_radius() + clearance;
    });
}

}  // namespace detail

/// Smooth walk through random waypoints, resampled at uniform arc length so every step is
/// at most 0.9 * max_step. Positions stay inside the room and away from primitives.
inline WalkPath make_walk(const SceneSpec& scene, int n_frames, std::uint64_t seed, const WalkOptions& opt = {}) {
    if (n_frames < 1) throw DomainError("make_walk: need at least one frame");
    const Room& room = scene.room;
    Vec3 lo = room.min.array() + opt.wall_margin, hi = room.max.array() - opt.wall_margin;
    lo.y() = hi.y() = std::clamp(opt.eye_height, room.min.y() + 0.05, room.max.y() - 0.05);
    if (!(lo.x() < hi.x() && lo.z() < hi.z())) throw DomainError("make_walk: room too small for margin");

    Rng rng(seed);
    for (int attempt = 0; attempt < 200; ++attempt) {
        std::vector<Vec3> way;
        for (int i = 0; i < std::max(2, opt.waypoints); ++i)
            way.emplace_back(uniform(rng, lo.x(), hi.x()), lo.y(), uniform(rng, lo.z(), hi.z()));

        // Dense polyline through the waypoints.
        std::vector<Vec3> dense;
        const int per_seg = 400;
        for (std::size_t s = 0; s + 1 < way.size(); ++s) {
            const Vec3& p0 = way[s == 0 ? 0 : s - 1];
            const Vec3& p3 = way[std::min(s + 2, way.size() - 1)];
            for (int k = 0; k < per_seg; ++k)
                dense.push_back(detail::catmull_rom(p0, way[s], way[s + 1], p3, static_cast<double>(k) / per_seg));
        }
        dense.push_back(way.back());
        for (auto& p : dense) p = p.cwiseMax(lo).cwiseMin(hi);

        std::vector<double> arc(dense.size(), 0.0);
        for (std::size_t i = 1; i < dense.size(); ++i) arc[i] = arc[i - 1] + (dense[i] - dense[i - 1]).norm();
        const double total = n_frames > 1 ? std::min(arc.back(), 0.9 * opt.max_step * (n_frames - 1)) : 0.0;

        WalkPath path;
        path.fps = opt.fps;
        std::size_t seg = 0;
        bool ok = true;
        for (int i = 0; i < n_frames; ++i) {
            const double s = n_frames > 1 ? total * i / (n_frames - 1) : 0.0;
            while (seg + 2 < dense.size() && arc[seg + 1] < s) ++seg;
            const double len = arc[seg + 1] - arc[seg];
            const double a = len > 0 ? std::clamp((s - arc[seg]) / len, 0.0, 1.0) : 0.0;
            CapturePose pose;
            pose.position = dense[seg] + a * (dense[seg + 1] - dense[seg]);
            if (!detail::clear_of_primitives(scene, pose.position, opt.obstacle_clearance)) {
                ok = false;
                break;
            }
            path.poses.push_back(pose);
        }
        if (!ok) continue;

        // Heading follows the path tangent.
        for (std::size_t i = 0; i < path.poses.size(); ++i) {
            const std::size_t a = i == 0 ? 0 : i - 1;
            const std::size_t b = std::min(i + 1, path.poses.size() - 1);
            const Vec3 t = path.poses[b].position - path.poses[a].position;
            path.poses[i].yaw_deg =
                t.norm() > 1e-12 ? rad2deg(std::atan2(t.x(), t.z())) : (i > 0 ? path.poses[i - 1].yaw_deg : 0.0);
        }
        return path;
    }
    throw DomainError("make_walk: could not find a collision-free path");
}

/// Ellipsoid carried below and behind the capture rig, axes aligned with the rig heading.
struct BlobSpec {
    Vec3 offset{0.0, -0.55, -0.25};  // rig frame: x right, y up, z forward
    Vec3 radii{0.18, 0.4, 0.14};
    Vec3 color{0.35, 0.25, 0.2};
};

struct CompositeResult {
    EquirectFrame frame;
    LossMask mask;
};

/// Ray parameter of the first intersection with the blob ellipsoid, if any.
inline std::optional<double> hit_blob(const BlobSpec& blob, const CapturePose& pose, const Vec3& d) {
    if ((blob.radii.array() <= 0.0).any()) return std::nullopt;
    const Mat3 rot = pose.rotation();
    const Vec3 center = pose.position + rot * blob.offset;
    const Vec3 o = (rot.transpose() * (pose.position - center)).cwiseQuotient(blob.radii);
    const Vec3 dl = (rot.transpose() * d).cwiseQuotient(blob.radii);
    const double a = dl.squaredNorm(), b = o.dot(dl), c = o.squaredNorm() - 1.0;
    const double disc = b * b - a * c;
    if (disc < 0) return std::nullopt;
    const double sq = std::sqrt(disc);
    double t = (-b - sq) / a;
    if (t <= 0) t = (-b + sq) / a;
    if (t <= 0) return std::nullopt;
    return t;
}

/// Paints the blob where it is hit before the scene; mask is 0 exactly on painted pixels.
inline CompositeResult composite_photographer(const EquirectFrame& frame, const SceneSpec& scene,
                                              const CapturePose& pose, const BlobSpec& blob) {
    CompositeResult out{frame, LossMask::ones(frame.width(), frame.height())};
    if ((blob.radii.array() <= 0.0).any()) return out;
    const Mat3 rot = pose.rotation();
    const int w = frame.width(), h = frame.height();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Vec3 d = rot * dir_from_equirect(x, y, w, h).vec();
            const auto tb = hit_blob(blob, pose, d);
            if (!tb) continue;
            if (*tb >= intersect(scene, pose.position, d).t) continue;
            for (int k = 0; k < 3; ++k) out.frame.image().at(x, y, k) = static_cast<float>(blob.color[k]);
            out.mask.set(x, y, false);
        }
    return out;
}

// JSON round trip for scene specs and walk paths.

inline nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
inline Vec3 json_vec(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

inline nlohmann::json to_json(const SceneSpec& s) {
    nlohmann::json faces = nlohmann::json::array();
    for (const auto& f : s.room.faces)
        faces.push_back({{"cell", f.cell}, {"color_a", vec_json(f.color_a)}, {"color_b", vec_json(f.color_b)}});
    nlohmann::json prims = nlohmann::json::array();
    for (const auto& p : s.primitives)
        prims.push_back({{"kind", p.kind == Primitive::Kind::sphere ? "sphere" : "box"},
                         {"center", vec_json(p.center)},
                         {"size", vec_json(p.size)},
                         {"albedo", vec_json(p.albedo)}});
    return {{"room", {{"min", vec_json(s.room.min)}, {"max", vec_json(s.room.max)}, {"faces", faces}}},
            {"primitives", prims},
            {"ambient", s.ambient},
            {"light_dir", vec_json(s.light_dir)},
            {"checker_sharpness", s.checker_sharpness},
            {"caption", s.caption}};
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
    SceneSpec s;
    const auto& room = j.at("room");
    s.room.min = json_vec(room.at("min"));
    s.room.max = json_vec(room.at("max"));
    const auto& faces = room.at("faces");
    if (faces.size() != 6) throw DomainError("scene: room needs exactly 6 faces");
    for (std::size_t i = 0; i < 6; ++i)
        s.room.faces[i] = {faces[i].at("cell").get<double>(), json_vec(faces[i].at("color_a")),
                           json_vec(faces[i].at("color_b"))};
    s.primitives.clear();
    for (const auto& p : j.value("primitives", nlohmann::json::array())) {
        Primitive prim;
        const auto kind = p.at("kind").get<std::string>();
        if (kind == "sphere")
            prim.kind = Primitive::Kind::sphere;
        else if (kind == "box")
            prim.kind = Primitive::Kind::box;
        else
            throw DomainError("scene: unknown primitive kind '" + kind + "'");
        prim.center = json_vec(p.at("center"));
        prim.size = json_vec(p.at("size"));
        prim.albedo = json_vec(p.at("albedo"));
        s.primitives.push_back(prim);
    }
    s.ambient = j.value("ambient", s.ambient);
    if (j.contains("light_dir")) s.light_dir = json_vec(j.at("light_dir")).normalized();
    s.checker_sharpness = j.value("checker_sharpness", s.checker_sharpness);
    s.caption = j.value("caption", s.caption);
    s.validate();
    return s;
}

inline nlohmann::json to_json(const WalkPath& w) {
    nlohmann::json poses = nlohmann::json::array();
    for (const auto& p : w.poses) poses.push_back({{"position", vec_json(p.position)}, {"yaw_deg", p.yaw_deg}});
    return {{"fps", w.fps}, {"poses", poses}};
}

inline WalkPath walk_from_json(const nlohmann::json& j) {
    WalkPath w;
    w.fps = j.at("fps").get<double>();
    for (const auto& p : j.at("poses")) w.poses.push_back({json_vec(p.at("position")), p.at("yaw_deg").get<double>()});
    return w;
}

}  // namespace pano3d
