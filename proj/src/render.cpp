#include "trifield/render.hpp"

#include <cmath>
#include <stdexcept>

#include "trifield/rng.hpp"
#include "trifield/threading.hpp"

namespace trifield::render {

void RaySamples::validate() const {
    if (delta.size() != t.size() || c.size() != t.size() || sigma.size() != t.size())
        throw std::invalid_argument("RaySamples: inconsistent sizes");
    for (std::size_t i = 0; i + 1 < t.size(); ++i)
        if (!(t[i] <= t[i + 1])) throw std::invalid_argument("RaySamples: t not sorted");
    for (double d : delta)
        if (!(d >= 0.0)) throw std::invalid_argument("RaySamples: negative delta");
    for (double s : sigma)
        if (!(s >= 0.0)) throw std::invalid_argument("RaySamples: negative sigma");
}

RaySamples make_samples(const std::vector<double>& ts, double t_far) {
    RaySamples s;
    s.t = ts;
    s.delta.resize(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        double next = i + 1 < ts.size() ? ts[i + 1] : t_far;
        s.delta[i] = next - ts[i];
    }
    s.c.assign(ts.size(), Vec3{});
    s.sigma.assign(ts.size(), 0.0);
    return s;
}

std::vector<double> stratified_samples(const Ray& ray, int n,
                                       const std::function<double(int)>& jitter) {
    if (n < 1) throw std::invalid_argument("stratified_samples: need n >= 1");
    auto j = jitter ? jitter : [](int) { return 0.5; };
    return fieldrepr::stratified_ts(ray.t_near, ray.t_far, n, j);
}

CompositeResult composite(const RaySamples& s, const Vec3& background) {
    s.validate();
    CompositeResult out;
    out.weights.resize(s.t.size());
    double T = 1.0;
    Vec3 acc{};
    for (std::size_t i = 0; i < s.t.size(); ++i) {
        double att = std::exp(-s.sigma[i] * s.delta[i]);
        double w = T * (1.0 - att);
        out.weights[i] = w;
        acc += w * s.c[i];
        T *= att;
    }
    out.t_final = T;
    out.opacity = 0.0;
    for (double w : out.weights) out.opacity += w;
    out.color = acc + T * background;
    return out;
}

void composite_backward(const RaySamples& s, const Vec3& background,
                        const CompositeResult& fwd, const Vec3& d_color, double d_opacity,
                        std::vector<Vec3>& dc, std::vector<double>& dsigma,
                        Vec3* d_background) {
    const std::size_t n = s.t.size();
    if (fwd.weights.size() != n) throw std::invalid_argument("composite_backward: stale forward");
    dc.assign(n, Vec3{});
    dsigma.assign(n, 0.0);

    // per-sample upstream contribution s_i = g . c_i + go; the background term
    // carries only the color upstream
    // dL/dsigma_k = delta_k * (T_{k+1} s_k - sum_{i>k} w_i s_i - T_final s_bg)
    double s_bg = dot(d_color, background);
    double suffix = fwd.t_final * s_bg;

    // T_{k+1} = T_k * exp(-sigma_k delta_k); rebuild prefix transmittances
    std::vector<double> T(n + 1);
    T[0] = 1.0;
    for (std::size_t i = 0; i < n; ++i) T[i + 1] = T[i] * std::exp(-s.sigma[i] * s.delta[i]);

    for (std::size_t k_plus1 = n; k_plus1 > 0; --k_plus1) {
        std::size_t k = k_plus1 - 1;
        double sk = dot(d_color, s.c[k]) + d_opacity;
        dc[k] = fwd.weights[k] * d_color;
        dsigma[k] = s.delta[k] * (T[k + 1] * sk - suffix);
        suffix += fwd.weights[k] * sk;
    }
    if (d_background) *d_background += fwd.t_final * d_color;
}

Vec3 render_ray(const nets::HeadField& hf, const Ray& ray, const Aabb& aabb, const double* a,
                double e, const RenderOptions& opt, std::uint64_t px, std::uint64_t py) {
    std::function<double(int)> jit;
    if (opt.jitter) {
        std::uint64_t seed = opt.seed;
        jit = [seed, px, py](int k) {
            return hash_jitter(seed, px, py, static_cast<std::uint64_t>(k));
        };
    } else {
        jit = [](int) { return 0.5; };
    }
    auto placed = fieldrepr::skip_empty(ray, aabb, opt.occupancy, opt.n_samples, jit);
    if (placed.ts.empty()) return opt.background;

    RaySamples samples = make_samples(placed.ts, ray.t_far);
    for (int i = 0; i < samples.count(); ++i) {
        Vec3 world = ray.at(samples.t[i]);
        Vec3 u = normalize_to_unit_cube(world, aabb);
        auto out = hf.forward(u, ray.direction, a, e, nullptr);
        samples.c[static_cast<std::size_t>(i)] = out.rgb;
        samples.sigma[static_cast<std::size_t>(i)] = out.sigma;
    }
    return composite(samples, opt.background).color;
}

FrameBuffer render_head_frame(const nets::HeadField& hf, const CameraIntrinsics& cam,
                              const HeadPose& cam_pose, const Aabb& aabb, const double* a,
                              double e, const RenderOptions& opt) {
    cam.validate();
    FrameBuffer fb(cam.width, cam.height);
    const int ss = opt.supersample < 1 ? 1 : opt.supersample;
    const std::size_t n_rows = static_cast<std::size_t>(cam.height);
    parallel_chunks(n_rows, opt.workers, [&](int, std::size_t row0, std::size_t row1) {
        for (std::size_t row = row0; row < row1; ++row) {
            int y = static_cast<int>(row);
            for (int x = 0; x < cam.width; ++x) {
                Vec3 acc{};
                for (int sy = 0; sy < ss; ++sy)
                    for (int sx = 0; sx < ss; ++sx) {
                        Vec2 px{x + (sx + 0.5) / ss, y + (sy + 0.5) / ss};
                        auto ray = ray_for_pixel(cam, cam_pose, px, aabb);
                        Vec3 color = opt.background;
                        if (ray)
                            color = render_ray(hf, *ray, aabb, a, e, opt,
                                               static_cast<std::uint64_t>(x) * ss + sx,
                                               static_cast<std::uint64_t>(y) * ss + sy);
                        acc += color;
                    }
                fb.set(x, y, acc / static_cast<double>(ss * ss));
            }
        }
    });
    return fb;
}

void composite_torso_over(const nets::TorsoField& tf, const nets::PoseEncoding& enc,
                          FrameBuffer& frame, int workers) {
    const int w = frame.width(), h = frame.height();
    parallel_chunks(static_cast<std::size_t>(h), workers, [&](int, std::size_t r0, std::size_t r1) {
        for (std::size_t row = r0; row < r1; ++row) {
            int y = static_cast<int>(row);
            for (int x = 0; x < w; ++x) {
                Vec2 xp{(x + 0.5) / w, (y + 0.5) / h};
                auto out = tf.forward(xp, enc, nullptr);
                Vec3 prev = frame.at(x, y);
                frame.set(x, y, out.alpha * out.color + (1.0 - out.alpha) * prev);
            }
        }
    });
}

}  // namespace trifield::render
