#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "trifield/geom.hpp"
#include "trifield/image.hpp"
#include "trifield/regionattn.hpp"
#include "trifield/rng.hpp"

namespace trifield::scene {

/// Spherical region of the canonical head surface.
struct Region {
    Vec3 center;
    double radius = 0.0;

    bool contains(Vec3 x) const { return norm(x - center) < radius; }
};

/// Analytic stand-in for a talking-head video: a signed-distance sphere whose
/// mouth region bulges by w.a and whose eye region bulges by the blink scalar,
/// shaded with a head-fixed light, plus a textured torso quad behind it. All
/// geometry lives in the canonical head frame; cameras are posed into it.
struct SyntheticScene {
    Vec3 sphere_center{0.0, 0.0, 0.0};
    double sphere_radius = 0.5;

    std::array<double, regionattn::kAudioDim> w{};  // mouth response direction
    double eye_amp = 0.01;

    Vec3 mouth_dir{0.0, -0.5, -0.8660254037844386};
    Vec3 eye_dir{0.0, 0.5, -0.8660254037844386};
    double mouth_radius = 0.25;
    double eye_radius = 0.16;

    Vec3 light{-0.35, -0.45, -0.82};  // normalized by the constructor

    // torso quad, axis aligned in the canonical frame
    double torso_z = 0.3;
    double torso_x_min = -0.45, torso_x_max = 0.45;
    double torso_y_min = -1.0, torso_y_max = -0.45;

    SyntheticScene();

    Region mouth() const { return {sphere_center + sphere_radius * mouth_dir, mouth_radius}; }
    Region eye() const { return {sphere_center + sphere_radius * eye_dir, eye_radius}; }

    double mouth_amplitude(const double* a) const;
    /// Worst-case gradient norm of the deformed distance field.
    double lipschitz_bound() const;
    void validate() const;

    double sdf(Vec3 x, const double* a, double e) const;
    Vec3 sdf_gradient(Vec3 x, const double* a, double e) const;
    Vec3 albedo(Vec3 x) const;
    Vec3 shade(Vec3 x, Vec3 normal) const;
    Vec3 torso_texture(double u, double v) const;  // u,v in [0,1]^2 over the quad

    /// Uniform point on the undeformed sphere surface.
    Vec3 sample_surface(Rng& rng) const;
};

/// Sphere-trace the deformed head; nullopt on miss. Hit parameter in *t_hit.
std::optional<Vec3> trace_head(const SyntheticScene& s, const Ray& ray, const double* a, double e,
                               double* t_hit = nullptr);

/// Ground-truth render. pose maps camera space into the canonical head frame.
/// include_torso=false gives the head-only frame used for head supervision.
FrameBuffer oracle_render(const SyntheticScene& s, const CameraIntrinsics& cam,
                          const HeadPose& pose, const double* a, double e,
                          bool include_torso = true, int supersample = 2);

/// Pixels whose camera ray passes through the ball, then dilated by dilate_px.
std::vector<std::uint8_t> project_region(const CameraIntrinsics& cam, const HeadPose& pose,
                                         const Region& region, int dilate_px);

struct Frame {
    std::string file;       // composite frame (head + torso)
    std::string head_file;  // head only, white background
    HeadPose cam_pose;      // camera to world
    HeadPose head_pose;     // canonical head to world
    std::array<double, regionattn::kAudioDim> a{};
    double e = 0.0;
    bool val = false;

    /// Camera posed into the canonical head frame for this frame.
    HeadPose canonical_cam() const { return compose(head_pose.inverse(), cam_pose); }
};

struct Dataset {
    int version = 1;
    CameraIntrinsics cam;
    std::vector<Frame> frames;
    std::string dir;

    std::string frame_path(int i) const;
    std::string head_path(int i) const;
    void validate() const;
};

struct TrajectoryConfig {
    int n_frames = 40;
    double yaw_deg = 8.0;    // head sway amplitude about +y
    double roll_deg = 2.5;   // about +z
    double sway = 0.04;      // lateral translation amplitude
    double rho = 0.95;       // AR(1) coefficient for condition tracks
    double step = 0.25;      // innovation scale before the tanh squash
    int supersample = 2;
    int width = 128, height = 128;
};

/// Smooth pseudo-audio: per-channel AR(1) walks squashed by tanh into (-1,1).
std::vector<std::array<double, regionattn::kAudioDim>> condition_track(int n, double rho,
                                                                       double step, Rng& rng);
/// Blink track in [0,1], same construction mapped through (1+tanh)/2.
std::vector<double> blink_track(int n, double rho, double step, Rng& rng);

Dataset generate_dataset(const SyntheticScene& s, const TrajectoryConfig& cfg, std::uint64_t seed,
                         const std::string& out_dir);
Dataset load_dataset(const std::string& dir);

}  // namespace trifield::scene
