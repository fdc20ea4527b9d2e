#pragma once

// COLMAP sparse model, text format (cameras.txt, images.txt, points3D.txt).
//
// images.txt holds two lines per image:
//   IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME
//   X Y POINT3D_ID ...            (may be empty)
// where (q, t) maps world to camera: x_cam = R(q) x_world + t.

#include "pano3d/errors.hpp"
#include "pano3d/math.hpp"
#include "pano3d/splat/camera.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace pano3d::splat {

struct ColmapCamera {
    int id = 0;
    std::string model = "PINHOLE";
    int width = 0, height = 0;
    std::vector<double> params;
};

struct ColmapImage {
    int id = 0;
    Quat rotation = Quat::Identity();  // camera from world
    Vec3 translation = Vec3::Zero();
    int camera_id = 0;
    std::string name;
    struct Obs {
        double x, y;
        std::int64_t point3d_id;
    };
    std::vector<Obs> points2d;

    Mat3 world_from_camera() const { return rotation.normalized().toRotationMatrix().transpose(); }
    Vec3 center() const { return -(world_from_camera() * translation); }
};

struct ColmapPoint {
    std::int64_t id = 0;
    Vec3 xyz = Vec3::Zero();
    std::array<int, 3> rgb{128, 128, 128};
    double error = 0.0;
    std::vector<std::pair<int, int>> track;  // (image id, point2d index)
};

struct SparseModel {
    std::map<int, ColmapCamera> cameras;
    std::vector<ColmapImage> images;
    std::vector<ColmapPoint> points;
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <typename T>
T parse_num(std::string_view tok, const std::string& file, std::size_t line) {
    T v{};
    const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size())
        throw ParseError(file, line, "expected a number, got '" + std::string(tok) + "'");
    if constexpr (std::is_floating_point_v<T>)
        if (!std::isfinite(v)) throw ParseError(file, line, "non-finite value '" + std::string(tok) + "'");
    return v;
}

inline bool blank_or_comment(const std::string& s) {
    const auto p = s.find_first_not_of(" \t\r");
    return p == std::string::npos || s[p] == '#';
}

inline std::ifstream open_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open file");
    return in;
}

inline std::size_t params_for_model(const std::string& model) {
    static const std::map<std::string, std::size_t> n{
        {"SIMPLE_PINHOLE", 3}, {"PINHOLE", 4}, {"SIMPLE_RADIAL", 4}, {"RADIAL", 5}, {"OPENCV", 8}};
    const auto it = n.find(model);
    return it == n.end() ? 0 : it->second;
}

}  // namespace detail

inline std::map<int, ColmapCamera> read_cameras_txt(const std::filesystem::path& path) {
    auto in = detail::open_text(path);
    const std::string file = path.string();
    std::map<int, ColmapCamera> cams;
    std::string line;
    for (std::size_t ln = 1; std::getline(in, line); ++ln) {
        if (detail::blank_or_comment(line)) continue;
        const auto tok = detail::split_ws(line);
        if (tok.size() < 4) throw ParseError(file, ln, "camera line needs CAMERA_ID MODEL WIDTH HEIGHT PARAMS");
        ColmapCamera c;
        c.id = detail::parse_num<int>(tok[0], file, ln);
        c.model = std::string(tok[1]);
        c.width = detail::parse_num<int>(tok[2], file, ln);
        c.height = detail::parse_num<int>(tok[3], file, ln);
        const std::size_t np = detail::params_for_model(c.model);
        if (np == 0) throw ParseError(file, ln, "unsupported camera model " + c.model);
        if (tok.size() != 4 + np)
            throw ParseError(file, ln, c.model + " expects " + std::to_string(np) + " parameters");
        for (std::size_t i = 4; i < tok.size(); ++i) c.params.push_back(detail::parse_num<double>(tok[i], file, ln));
        if (c.width < 1 || c.height < 1) throw ParseError(file, ln, "camera size must be positive");
        if (!cams.emplace(c.id, c).second) throw ParseError(file, ln, "duplicate camera id");
    }
    return cams;
}

inline std::vector<ColmapImage> read_images_txt(const std::filesystem::path& path) {
    auto in = detail::open_text(path);
    const std::string file = path.string();
    std::vector<ColmapImage> images;
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        if (detail::blank_or_comment(line)) continue;
        const auto tok = detail::split_ws(line);
        if (tok.size() != 10) throw ParseError(file, ln, "image line needs IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME");
        ColmapImage im;
        im.id = detail::parse_num<int>(tok[0], file, ln);
        const double qw = detail::parse_num<double>(tok[1], file, ln), qx = detail::parse_num<double>(tok[2], file, ln),
                     qy = detail::parse_num<double>(tok[3], file, ln), qz = detail::parse_num<double>(tok[4], file, ln);
        im.rotation = Quat(qw, qx, qy, qz);
        if (!(im.rotation.norm() > 1e-12)) throw ParseError(file, ln, "zero quaternion");
        for (int k = 0; k < 3; ++k) im.translation[k] = detail::parse_num<double>(tok[5 + k], file, ln);
        im.camera_id = detail::parse_num<int>(tok[8], file, ln);
        im.name = std::string(tok[9]);

        // The observation line always follows, even when empty.
        std::string obs;
        if (!std::getline(in, obs)) throw ParseError(file, ln, "missing 2D point line");
        ++ln;
        const auto ot = detail::split_ws(obs);
        if (ot.size() % 3 != 0) throw ParseError(file, ln, "2D point line must hold triples X Y POINT3D_ID");
        for (std::size_t i = 0; i < ot.size(); i += 3)
            im.points2d.push_back({detail::parse_num<double>(ot[i], file, ln), detail::parse_num<double>(ot[i + 1], file, ln),
                                   detail::parse_num<std::int64_t>(ot[i + 2], file, ln)});
        images.push_back(std::move(im));
    }
    return images;
}

inline std::vector<ColmapPoint> read_points3d_txt(const std::filesystem::path& path) {
    auto in = detail::open_text(path);
    const std::string file = path.string();
    std::vector<ColmapPoint> pts;
    std::string line;
    for (std::size_t ln = 1; std::getline(in, line); ++ln) {
        if (detail::blank_or_comment(line)) continue;
        const auto tok = detail::split_ws(line);
        if (tok.size() < 8 || (tok.size() - 8) % 2 != 0)
            throw ParseError(file, ln, "point line needs POINT3D_ID X Y Z R G B ERROR TRACK[]");
        ColmapPoint p;
        p.id = detail::parse_num<std::int64_t>(tok[0], file, ln);
        for (int k = 0; k < 3; ++k) p.xyz[k] = detail::parse_num<double>(tok[1 + k], file, ln);
        for (int k = 0; k < 3; ++k) {
            p.rgb[k] = detail::parse_num<int>(tok[4 + k], file, ln);
            if (p.rgb[k] < 0 || p.rgb[k] > 255) throw ParseError(file, ln, "color out of range");
        }
        p.error = detail::parse_num<double>(tok[7], file, ln);
        for (std::size_t i = 8; i < tok.size(); i += 2)
            p.track.emplace_back(detail::parse_num<int>(tok[i], file, ln), detail::parse_num<int>(tok[i + 1], file, ln));
        pts.push_back(std::move(p));
    }
    return pts;
}

/// Reads all three files; every image must reference a known camera.
inline SparseModel read_sparse_model(const std::filesystem::path& dir) {
    SparseModel m;
    for (const char* f : {"cameras.txt", "images.txt", "points3D.txt"})
        if (!std::filesystem::exists(dir / f)) throw ParseError((dir / f).string(), 0, "missing file");
    m.cameras = read_cameras_txt(dir / "cameras.txt");
    m.images = read_images_txt(dir / "images.txt");
    m.points = read_points3d_txt(dir / "points3D.txt");
    for (const auto& im : m.images)
        if (!m.cameras.count(im.camera_id))
            throw ParseError((dir / "images.txt").string(), 0,
                             "image " + im.name + " references unknown camera " + std::to_string(im.camera_id));
    return m;
}

namespace detail {
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace detail

inline void write_sparse_model(const std::filesystem::path& dir, const SparseModel& m) {
    std::filesystem::create_directories(dir);
    using detail::fmt17;
    {
        std::ofstream out(dir / "cameras.txt");
        out << "# Camera list with one line of data per camera:\n"
            << "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n"
            << "# Number of cameras: " << m.cameras.size() << "\n";
        for (const auto& [id, c] : m.cameras) {
            out << id << ' ' << c.model << ' ' << c.width << ' ' << c.height;
            for (double p : c.params) out << ' ' << fmt17(p);
            out << '\n';
        }
    }
    {
        std::ofstream out(dir / "images.txt");
        out << "# Image list with two lines of data per image:\n"
            << "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
            << "#   POINTS2D[] as (X, Y, POINT3D_ID)\n"
            << "# Number of images: " << m.images.size() << "\n";
        for (const auto& im : m.images) {
            const Quat& q = im.rotation;
            out << im.id << ' ' << fmt17(q.w()) << ' ' << fmt17(q.x()) << ' ' << fmt17(q.y()) << ' ' << fmt17(q.z()) << ' '
                << fmt17(im.translation.x()) << ' ' << fmt17(im.translation.y()) << ' ' << fmt17(im.translation.z()) << ' '
                << im.camera_id << ' ' << im.name << '\n';
            for (std::size_t i = 0; i < im.points2d.size(); ++i)
                out << (i ? " " : "") << fmt17(im.points2d[i].x) << ' ' << fmt17(im.points2d[i].y) << ' '
                    << im.points2d[i].point3d_id;
            out << '\n';
        }
    }
    {
        std::ofstream out(dir / "points3D.txt");
        out << "# 3D point list with one line of data per point:\n"
            << "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n"
            << "# Number of points: " << m.points.size() << "\n";
        for (const auto& p : m.points) {
            out << p.id << ' ' << fmt17(p.xyz.x()) << ' ' << fmt17(p.xyz.y()) << ' ' << fmt17(p.xyz.z()) << ' ' << p.rgb[0]
                << ' ' << p.rgb[1] << ' ' << p.rgb[2] << ' ' << fmt17(p.error);
            for (const auto& [i, j] : p.track) out << ' ' << i << ' ' << j;
            out << '\n';
        }
    }
}

/// COLMAP image entry for a camera model. Only the pose is converted; intrinsics live in cameras.txt.
inline ColmapImage colmap_image_from_camera(int id, int camera_id, const std::string& name, const CameraModel& cam) {
    ColmapImage im;
    im.id = id;
    im.camera_id = camera_id;
    im.name = name;
    const Mat3 r = cam.camera_from_world();
    im.rotation = normalized_quat(r);
    im.translation = -(r * cam.position);
    return im;
}

inline ColmapCamera colmap_camera_from_model(int id, const CameraModel& cam) {
    return {id, "PINHOLE", cam.width, cam.height, {cam.fx, cam.fy, cam.cx, cam.cy}};
}

/// Intrinsics from any supported model; distortion terms are dropped.
inline void apply_intrinsics(const ColmapCamera& c, CameraModel& cam) {
    cam.width = c.width;
    cam.height = c.height;
    if (c.model == "PINHOLE" || c.model == "OPENCV") {
        cam.fx = c.params[0];
        cam.fy = c.params[1];
        cam.cx = c.params[2];
        cam.cy = c.params[3];
    } else {
        cam.fx = cam.fy = c.params[0];
        cam.cx = c.params[1];
        cam.cy = c.params[2];
    }
}

/// Maps world points into the unit-extent frame: p' = (p - center) * scale.
struct Normalization {
    Vec3 center = Vec3::Zero();
    double scale = 1.0;

    Vec3 apply(const Vec3& p) const { return (p - center) * scale; }
    Vec3 invert(const Vec3& p) const { return p / scale + center; }
};

/// Centre of the bounding box of `pts` and 1 / its largest side (1 when degenerate).
inline Normalization unit_box_normalization(const std::vector<Vec3>& pts) {
    Normalization n;
    if (pts.empty()) return n;
    Vec3 lo = pts.front(), hi = pts.front();
    for (const auto& p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    n.center = 0.5 * (lo + hi);
    const double extent = (hi - lo).maxCoeff();
    n.scale = extent > 1e-12 ? 1.0 / extent : 1.0;
    return n;
}

struct IngestResult {
    std::vector<PosedImage> views;            // in images.txt order
    std::vector<std::string> unregistered;    // images present on disk without a pose
    std::vector<Vec3> points;                 // sparse points, normalised
    std::vector<Vec3> point_colors;           // in [0, 1]
    Normalization normalization;
};

/// Parses a sparse model, inverts poses to world-from-camera and normalises positions so the
/// camera-centre bounding box has max extent 1. When `image_dir` is given, image paths are
/// resolved against it and every image file without a pose is listed in `unregistered`.
inline IngestResult ingest_colmap_poses(const std::filesystem::path& sparse_dir,
                                        const std::optional<std::filesystem::path>& image_dir = std::nullopt) {
    const SparseModel m = read_sparse_model(sparse_dir);
    IngestResult r;
    std::vector<Vec3> centers;
    for (const auto& im : m.images) centers.push_back(im.center());
    r.normalization = unit_box_normalization(centers);

    std::set<std::string> registered;
    for (const auto& im : m.images) {
        PosedImage v;
        v.name = im.name;
        apply_intrinsics(m.cameras.at(im.camera_id), v.camera);
        v.camera.world_from_camera = im.world_from_camera();
        v.camera.position = r.normalization.apply(im.center());
        if (image_dir) v.image_path = *image_dir / im.name;
        registered.insert(im.name);
        r.views.push_back(std::move(v));
    }
    for (const auto& p : m.points) {
        r.points.push_back(r.normalization.apply(p.xyz));
        r.point_colors.push_back(Vec3(p.rgb[0], p.rgb[1], p.rgb[2]) / 255.0);
    }
    if (image_dir && std::filesystem::is_directory(*image_dir)) {
        std::vector<std::string> names;
        for (const auto& e : std::filesystem::directory_iterator(*image_dir)) {
            const std::string n = e.path().filename().string();
            if (e.is_regular_file() && n.rfind("crop_", 0) == 0 && e.path().extension() == ".png") names.push_back(n);
        }
        std::sort(names.begin(), names.end());
        for (const auto& n : names)
            if (!registered.count(n)) r.unregistered.push_back(n);
    }
    return r;
}

}  // namespace pano3d::splat
