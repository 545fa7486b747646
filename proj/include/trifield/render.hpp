#pragma once

#include <cstdint>
#include <vector>

#include "trifield/fieldrepr.hpp"
#include "trifield/geom.hpp"
#include "trifield/headfield.hpp"
#include "trifield/image.hpp"
#include "trifield/torso.hpp"

namespace trifield::render {

/// One ray's quadrature state: sorted sample positions, per-interval widths
/// (the last interval runs to t_far), and the field outputs at each sample.
struct RaySamples {
    std::vector<double> t;
    std::vector<double> delta;
    std::vector<Vec3> c;
    std::vector<double> sigma;

    int count() const { return static_cast<int>(t.size()); }
    void validate() const;
};

/// Fill t/delta from sorted positions; c and sigma stay empty for the caller.
RaySamples make_samples(const std::vector<double>& ts, double t_far);

/// Stratified t-values over [t_near, t_far]: deterministic bin midpoints when
/// jitter is null, otherwise jitter(k) in [0,1) positions sample k in bin k.
std::vector<double> stratified_samples(const Ray& ray, int n,
                                       const std::function<double(int)>& jitter);

struct CompositeResult {
    Vec3 color;
    double opacity = 0.0;  // sum of weights
    double t_final = 1.0;  // transmittance past the last sample
    std::vector<double> weights;
};

/// T_i = exp(-sum_{j<i} sigma_j delta_j), w_i = T_i (1 - exp(-sigma_i delta_i)),
/// color = sum w_i c_i + T_final * background.
CompositeResult composite(const RaySamples& s, const Vec3& background);

/// Adjoint of composite for upstream (dL/dcolor, dL/dopacity). Appends into
/// dc/dsigma (resized to match) and accumulates into *d_background when given.
void composite_backward(const RaySamples& s, const Vec3& background,
                        const CompositeResult& fwd, const Vec3& d_color, double d_opacity,
                        std::vector<Vec3>& dc, std::vector<double>& dsigma, Vec3* d_background);

struct RenderOptions {
    int n_samples = 16;
    Vec3 background{1.0, 1.0, 1.0};
    std::uint64_t seed = 0;
    bool jitter = false;  // false: bin midpoints (eval); true: hashed per-pixel jitter
    int supersample = 1;
    const fieldrepr::OccupancyGrid* occupancy = nullptr;
    int workers = 1;
};

/// Color seen along one primary ray (pixel ids key the jitter hash).
Vec3 render_ray(const nets::HeadField& hf, const Ray& ray, const Aabb& aabb, const double* a,
                double e, const RenderOptions& opt, std::uint64_t px, std::uint64_t py);

FrameBuffer render_head_frame(const nets::HeadField& hf, const CameraIntrinsics& cam,
                              const HeadPose& cam_pose, const Aabb& aabb, const double* a,
                              double e, const RenderOptions& opt);

/// Evaluate the torso field at every pixel and alpha-composite it over frame:
/// final = alpha * c_t + (1 - alpha) * existing.
void composite_torso_over(const nets::TorsoField& tf, const nets::PoseEncoding& enc,
                          FrameBuffer& frame, int workers = 1);

}  // namespace trifield::render
