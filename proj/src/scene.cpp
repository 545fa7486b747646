#include "trifield/scene.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace trifield::scene {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// max |d/ds (1-s^2)^2| on [0,1], attained at s = 1/sqrt(3)
constexpr double kKernelSlope = 1.5396007178390018;

double kernel(double s) {
    if (s >= 1.0) return 0.0;
    double q = 1.0 - s * s;
    return q * q;
}

double kernel_slope(double s) {
    if (s >= 1.0) return 0.0;
    return -4.0 * s * (1.0 - s * s);
}

double bump(Vec3 x, Vec3 center, double radius, double amp) {
    if (amp == 0.0) return 0.0;
    return amp * kernel(norm(x - center) / radius);
}

Vec3 bump_gradient(Vec3 x, Vec3 center, double radius, double amp) {
    Vec3 d = x - center;
    double r = norm(d);
    if (amp == 0.0 || r >= radius || r < 1e-12) return Vec3{};
    double s = r / radius;
    return (amp * kernel_slope(s) / (radius * r)) * d;
}

Ray pixel_ray(const CameraIntrinsics& cam, const HeadPose& pose, double px, double py) {
    Vec3 dir_cam{(px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0};
    return Ray{pose.t, normalized(pose.R * dir_cam), 0.0, 1e9};
}

}  // namespace

SyntheticScene::SyntheticScene() {
    // fixed mouth response direction, scaled so |w.a| <= 0.016 for a in [-1,1]^32
    double l1 = 0.0;
    for (int k = 0; k < regionattn::kAudioDim; ++k) {
        w[static_cast<std::size_t>(k)] = std::cos(0.7 + 2.0 * M_PI * k / regionattn::kAudioDim);
        l1 += std::abs(w[static_cast<std::size_t>(k)]);
    }
    for (auto& v : w) v *= 0.016 / l1;
    light = normalized(light);
    validate();
}

double SyntheticScene::mouth_amplitude(const double* a) const {
    double amp = 0.0;
    for (int k = 0; k < regionattn::kAudioDim; ++k) amp += w[static_cast<std::size_t>(k)] * a[k];
    return amp;
}

double SyntheticScene::lipschitz_bound() const {
    double wl1 = 0.0;
    for (double v : w) wl1 += std::abs(v);
    double mouth_slope = wl1 * kKernelSlope / mouth_radius;
    double eye_slope = eye_amp * kKernelSlope / eye_radius;
    return 1.0 + std::max(mouth_slope, eye_slope);
}

void SyntheticScene::validate() const {
    if (sphere_radius <= 0.0 || mouth_radius <= 0.0 || eye_radius <= 0.0)
        throw std::logic_error("scene: radii must be positive");
    if (std::abs(norm(mouth_dir) - 1.0) > 1e-9 || std::abs(norm(eye_dir) - 1.0) > 1e-9)
        throw std::logic_error("scene: region directions must be unit vectors");
    if (lipschitz_bound() > 1.1 + 1e-12)
        throw std::logic_error("scene: deformation breaks the Lipschitz bound");
    double gap = norm(mouth().center - eye().center);
    if (gap < mouth_radius + eye_radius)
        throw std::logic_error("scene: mouth and eye regions overlap");
}

double SyntheticScene::sdf(Vec3 x, const double* a, double e) const {
    double d = norm(x - sphere_center) - sphere_radius;
    d -= bump(x, mouth().center, mouth_radius, mouth_amplitude(a));
    d -= bump(x, eye().center, eye_radius, eye_amp * e);
    return d;
}

Vec3 SyntheticScene::sdf_gradient(Vec3 x, const double* a, double e) const {
    Vec3 d = x - sphere_center;
    double r = std::max(norm(d), 1e-12);
    Vec3 g = (1.0 / r) * d;
    g = g - bump_gradient(x, mouth().center, mouth_radius, mouth_amplitude(a));
    g = g - bump_gradient(x, eye().center, eye_radius, eye_amp * e);
    return g;
}

Vec3 SyntheticScene::albedo(Vec3 x) const {
    return {0.5 + 0.3 * std::sin(3.0 * x.x + 5.0 * x.y + 1.0),
            0.5 + 0.3 * std::sin(4.0 * x.y + 2.0 * x.z + 2.0),
            0.5 + 0.3 * std::sin(5.0 * x.z + 3.0 * x.x + 3.0)};
}

Vec3 SyntheticScene::shade(Vec3 x, Vec3 normal) const {
    double lambert = std::max(0.0, dot(normal, light));
    return (0.25 + 0.75 * lambert) * albedo(x);
}

Vec3 SyntheticScene::torso_texture(double u, double v) const {
    return {0.5 + 0.3 * std::sin(6.2 * u + 1.0), 0.5 + 0.3 * std::sin(5.1 * v + 2.0),
            0.5 + 0.3 * std::sin(4.0 * u + 5.0 * v + 0.5)};
}

Vec3 SyntheticScene::sample_surface(Rng& rng) const {
    for (;;) {
        Vec3 n{rng.normal(), rng.normal(), rng.normal()};
        double r = norm(n);
        if (r > 1e-6) return sphere_center + (sphere_radius / r) * n;
    }
}

std::optional<Vec3> trace_head(const SyntheticScene& s, const Ray& ray, const double* a, double e,
                               double* t_hit) {
    double t = ray.t_near;
    const double t_max = 20.0;
    for (int iter = 0; iter < 512 && t < t_max; ++iter) {
        Vec3 p = ray.at(t);
        double d = s.sdf(p, a, e);
        if (d < 1e-9) {
            if (t_hit) *t_hit = t;
            return p;
        }
        t += d / 1.1;  // safe step under the Lipschitz bound
    }
    return std::nullopt;
}

namespace {

std::optional<double> trace_torso(const SyntheticScene& s, const Ray& ray, Vec3* color) {
    if (std::abs(ray.direction.z) < 1e-12) return std::nullopt;
    double t = (s.torso_z - ray.origin.z) / ray.direction.z;
    if (t <= 0.0) return std::nullopt;
    Vec3 q = ray.at(t);
    if (q.x < s.torso_x_min || q.x > s.torso_x_max || q.y < s.torso_y_min || q.y > s.torso_y_max)
        return std::nullopt;
    double u = (q.x - s.torso_x_min) / (s.torso_x_max - s.torso_x_min);
    double v = (q.y - s.torso_y_min) / (s.torso_y_max - s.torso_y_min);
    *color = s.torso_texture(u, v);
    return t;
}

}  // namespace

FrameBuffer oracle_render(const SyntheticScene& s, const CameraIntrinsics& cam,
                          const HeadPose& pose, const double* a, double e, bool include_torso,
                          int supersample) {
    cam.validate();
    if (supersample < 1) throw std::invalid_argument("oracle_render: supersample must be >= 1");
    FrameBuffer fb(cam.width, cam.height);
    const Vec3 background{1.0, 1.0, 1.0};
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            Vec3 acc{};
            for (int sy = 0; sy < supersample; ++sy)
                for (int sx = 0; sx < supersample; ++sx) {
                    Ray ray = pixel_ray(cam, pose, x + (sx + 0.5) / supersample,
                                        y + (sy + 0.5) / supersample);
                    double t_head = 0.0;
                    auto hit = trace_head(s, ray, a, e, &t_head);
                    Vec3 torso_color{};
                    std::optional<double> t_torso;
                    if (include_torso) t_torso = trace_torso(s, ray, &torso_color);
                    if (hit && (!t_torso || t_head <= *t_torso))
                        acc += s.shade(*hit, normalized(s.sdf_gradient(*hit, a, e)));
                    else if (t_torso)
                        acc += torso_color;
                    else
                        acc += background;
                }
            fb.set(x, y, (1.0 / (supersample * supersample)) * acc);
        }
    }
    return fb;
}

std::vector<std::uint8_t> project_region(const CameraIntrinsics& cam, const HeadPose& pose,
                                         const Region& region, int dilate_px) {
    cam.validate();
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(cam.width) * cam.height, 0);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            Ray ray = pixel_ray(cam, pose, x + 0.5, y + 0.5);
            Vec3 m = region.center - ray.origin;
            double t = std::max(0.0, dot(m, ray.direction));
            if (norm(region.center - ray.at(t)) <= region.radius)
                mask[static_cast<std::size_t>(y) * cam.width + x] = 1;
        }
    if (dilate_px <= 0) return mask;
    std::vector<std::uint8_t> out = mask;
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            if (out[static_cast<std::size_t>(y) * cam.width + x]) continue;
            for (int dy = -dilate_px; dy <= dilate_px && !out[static_cast<std::size_t>(y) * cam.width + x]; ++dy)
                for (int dx = -dilate_px; dx <= dilate_px; ++dx) {
                    if (dx * dx + dy * dy > dilate_px * dilate_px) continue;
                    int xx = x + dx, yy = y + dy;
                    if (xx < 0 || xx >= cam.width || yy < 0 || yy >= cam.height) continue;
                    if (mask[static_cast<std::size_t>(yy) * cam.width + xx]) {
                        out[static_cast<std::size_t>(y) * cam.width + x] = 1;
                        break;
                    }
                }
        }
    return out;
}

std::vector<std::array<double, regionattn::kAudioDim>> condition_track(int n, double rho,
                                                                       double step, Rng& rng) {
    std::vector<std::array<double, regionattn::kAudioDim>> track(static_cast<std::size_t>(n));
    std::array<double, regionattn::kAudioDim> raw{};
    for (int t = 0; t < n; ++t) {
        for (int k = 0; k < regionattn::kAudioDim; ++k) {
            auto& r = raw[static_cast<std::size_t>(k)];
            r = rho * r + step * rng.normal();
            track[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] = std::tanh(r);
        }
    }
    return track;
}

std::vector<double> blink_track(int n, double rho, double step, Rng& rng) {
    std::vector<double> track(static_cast<std::size_t>(n));
    double raw = 0.0;
    for (int t = 0; t < n; ++t) {
        raw = rho * raw + step * rng.normal();
        track[static_cast<std::size_t>(t)] = 0.5 * (1.0 + std::tanh(raw));
    }
    return track;
}

namespace {

json pose_to_json(const HeadPose& p) {
    json r = json::array();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r.push_back(p.R(i, j));
    return json{{"R", r}, {"t", {p.t.x, p.t.y, p.t.z}}};
}

HeadPose pose_from_json(const json& j, const std::string& context) {
    if (!j.contains("R") || !j.contains("t") || j["R"].size() != 9 || j["t"].size() != 3)
        throw std::runtime_error(context + ": malformed pose");
    HeadPose p;
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k)
            p.R(i, k) = j["R"][static_cast<std::size_t>(3 * i + k)].get<double>();
    p.t = {j["t"][0].get<double>(), j["t"][1].get<double>(), j["t"][2].get<double>()};
    if (!all_finite(p.t) || !std::isfinite(p.R(0, 0)))
        throw std::runtime_error(context + ": non-finite pose");
    try {
        p.validate();
    } catch (const std::exception& ex) {
        throw std::runtime_error(context + ": " + ex.what());
    }
    return p;
}

std::string frame_name(const char* sub, int i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s/%04d.ppm", sub, i);
    return buf;
}

}  // namespace

std::string Dataset::frame_path(int i) const {
    return (fs::path(dir) / frames[static_cast<std::size_t>(i)].file).string();
}

std::string Dataset::head_path(int i) const {
    return (fs::path(dir) / frames[static_cast<std::size_t>(i)].head_file).string();
}

void Dataset::validate() const {
    cam.validate();
    if (frames.empty()) throw std::runtime_error("dataset: no frames");
    bool has_val = false, has_train = false;
    for (const auto& f : frames) (f.val ? has_val : has_train) = true;
    if (!has_val) throw std::runtime_error("dataset: no validation frames");
    if (!has_train) throw std::runtime_error("dataset: no training frames");
}

Dataset generate_dataset(const SyntheticScene& s, const TrajectoryConfig& cfg, std::uint64_t seed,
                         const std::string& out_dir) {
    if (cfg.n_frames < 2) throw std::invalid_argument("generate_dataset: need at least 2 frames");
    s.validate();

    Dataset ds;
    ds.dir = out_dir;
    ds.cam = CameraIntrinsics{150.0 * cfg.width / 128.0, 150.0 * cfg.width / 128.0,
                              cfg.width / 2.0, cfg.height / 2.0, cfg.width, cfg.height};
    const HeadPose cam_pose{Mat3::identity(), Vec3{0.0, 0.0, -3.0}};

    Rng rng(seed);
    Rng audio_rng = rng.fork(1);
    Rng blink_rng = rng.fork(2);
    auto audio = condition_track(cfg.n_frames, cfg.rho, cfg.step, audio_rng);
    auto blink = blink_track(cfg.n_frames, cfg.rho, cfg.step, blink_rng);

    fs::create_directories(fs::path(out_dir) / "frames");
    fs::create_directories(fs::path(out_dir) / "heads");

    const double yaw_amp = cfg.yaw_deg * M_PI / 180.0;
    const double roll_amp = cfg.roll_deg * M_PI / 180.0;
    for (int i = 0; i < cfg.n_frames; ++i) {
        double phase = 2.0 * M_PI * i / cfg.n_frames;
        double yaw = yaw_amp * std::sin(phase);
        double roll = roll_amp * std::sin(2.0 * phase + 1.3);
        Mat3 R = HeadPose::from_axis_angle({0, 0, 1}, roll, {}).R *
                 HeadPose::from_axis_angle({0, 1, 0}, yaw, {}).R;
        Frame f;
        f.head_pose = HeadPose{R, Vec3{cfg.sway * std::sin(phase + 0.7), 0.0, 0.0}};
        f.cam_pose = cam_pose;
        f.a = audio[static_cast<std::size_t>(i)];
        f.e = blink[static_cast<std::size_t>(i)];
        f.val = (i % 10 == 0);
        f.file = frame_name("frames", i);
        f.head_file = frame_name("heads", i);

        HeadPose canonical = f.canonical_cam();
        auto full = oracle_render(s, ds.cam, canonical, f.a.data(), f.e, true, cfg.supersample);
        auto head = oracle_render(s, ds.cam, canonical, f.a.data(), f.e, false, cfg.supersample);
        write_ppm(full, (fs::path(out_dir) / f.file).string());
        write_ppm(head, (fs::path(out_dir) / f.head_file).string());
        ds.frames.push_back(std::move(f));
    }

    json m;
    m["version"] = ds.version;
    m["camera"] = {{"fx", ds.cam.fx}, {"fy", ds.cam.fy}, {"cx", ds.cam.cx},
                   {"cy", ds.cam.cy}, {"width", ds.cam.width}, {"height", ds.cam.height}};
    m["frames"] = json::array();
    for (const auto& f : ds.frames) {
        json jf;
        jf["file"] = f.file;
        jf["head_file"] = f.head_file;
        jf["cam_pose"] = pose_to_json(f.cam_pose);
        jf["head_pose"] = pose_to_json(f.head_pose);
        jf["a"] = f.a;
        jf["e"] = f.e;
        jf["split"] = f.val ? "val" : "train";
        m["frames"].push_back(std::move(jf));
    }
    std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
    std::ofstream out(manifest_path);
    out << m.dump(2) << "\n";
    if (!out) throw std::runtime_error("generate_dataset: failed to write " + manifest_path);
    out.close();

    ds.validate();
    return ds;
}

Dataset load_dataset(const std::string& dir) {
    std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + manifest_path);
    json m;
    try {
        in >> m;
    } catch (const json::exception& ex) {
        throw std::runtime_error("load_dataset: " + manifest_path + ": " + ex.what());
    }
    if (!m.contains("version") || m["version"] != 1)
        throw std::runtime_error("load_dataset: " + manifest_path + ": unsupported version");

    Dataset ds;
    ds.dir = dir;
    const auto& c = m.at("camera");
    ds.cam = CameraIntrinsics{c.at("fx").get<double>(), c.at("fy").get<double>(),
                              c.at("cx").get<double>(), c.at("cy").get<double>(),
                              c.at("width").get<int>(),  c.at("height").get<int>()};
    int i = 0;
    for (const auto& jf : m.at("frames")) {
        std::string ctx = "frame " + std::to_string(i);
        Frame f;
        f.file = jf.at("file");
        f.head_file = jf.at("head_file");
        f.cam_pose = pose_from_json(jf.at("cam_pose"), ctx + " cam_pose");
        f.head_pose = pose_from_json(jf.at("head_pose"), ctx + " head_pose");
        const auto& ja = jf.at("a");
        if (ja.size() != regionattn::kAudioDim)
            throw std::runtime_error(ctx + ": condition vector has length " +
                                     std::to_string(ja.size()) + ", expected " +
                                     std::to_string(regionattn::kAudioDim));
        for (std::size_t k = 0; k < f.a.size(); ++k) {
            f.a[k] = ja[k].get<double>();
            if (!std::isfinite(f.a[k])) throw std::runtime_error(ctx + ": non-finite condition");
        }
        f.e = jf.at("e").get<double>();
        if (!std::isfinite(f.e)) throw std::runtime_error(ctx + ": non-finite blink value");
        f.val = (jf.at("split") == "val");
        for (const std::string* p : {&f.file, &f.head_file})
            if (!fs::exists(fs::path(dir) / *p))
                throw std::runtime_error(ctx + ": missing image file " + *p);
        ds.frames.push_back(std::move(f));
        ++i;
    }
    ds.validate();
    return ds;
}

}  // namespace trifield::scene
