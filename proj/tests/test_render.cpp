#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "trifield/render.hpp"

using namespace trifield;
using namespace trifield::render;

namespace {

nets::HeadFieldConfig tiny_config() {
    nets::HeadFieldConfig c;
    c.grid.levels = 2;
    c.grid.res_min = 3;
    c.grid.res_max = 9;
    c.grid.table_size_log2 = 10;
    c.audio_hidden = 8;
    c.eye_hidden = 4;
    c.density_hidden = 16;
    c.color_hidden = 16;
    c.latent_dim = 8;
    return c;
}

void force_zero_density(nets::HeadField& hf) {
    // zero the last density layer's weights into output 0 and sink the bias,
    // so sigma = exp(-800) underflows to exactly 0
    auto& mlp = hf.density_mlp();
    int last = mlp.layer_count() - 1;
    for (int i = 0; i < hf.config().density_hidden; ++i) mlp.set_weight(last, i, 0, 0.0);
    mlp.set_bias(last, 0, -800.0);
}

RaySamples sphere_samples(const Ray& ray, int n, double radius, double sig) {
    auto ts = stratified_samples(ray, n, nullptr);
    RaySamples s = make_samples(ts, ray.t_far);
    for (int i = 0; i < n; ++i) {
        Vec3 p = ray.at(s.t[static_cast<std::size_t>(i)]);
        bool inside = norm(p) < radius;
        s.sigma[static_cast<std::size_t>(i)] = inside ? sig : 0.0;
        s.c[static_cast<std::size_t>(i)] = Vec3{1.0, 0.0, 0.0};
    }
    return s;
}

}  // namespace

TEST_CASE("stratified sample placement") {
    Ray ray{{0, 0, -2}, {0, 0, 1}, 0.0, 1.0};
    auto two = stratified_samples(ray, 2, nullptr);
    REQUIRE(two.size() == 2);
    CHECK(two[0] == doctest::Approx(0.25));
    CHECK(two[1] == doctest::Approx(0.75));
    auto one = stratified_samples(ray, 1, nullptr);
    CHECK(one[0] == doctest::Approx(0.5));

    auto jit = [](int k) { return hash_jitter(9, 1, 2, static_cast<std::uint64_t>(k)); };
    auto ja = stratified_samples(ray, 16, jit);
    auto jb = stratified_samples(ray, 16, jit);
    CHECK(ja == jb);  // reproducible
    for (int k = 0; k < 16; ++k) {
        CHECK(ja[static_cast<std::size_t>(k)] >= k / 16.0);
        CHECK(ja[static_cast<std::size_t>(k)] <= (k + 1) / 16.0);
    }
    CHECK_THROWS_AS(stratified_samples(ray, 0, nullptr), std::invalid_argument);
}

TEST_CASE("make_samples deltas") {
    auto s = make_samples({1.0, 1.5, 2.25}, 3.0);
    REQUIRE(s.delta.size() == 3);
    CHECK(s.delta[0] == doctest::Approx(0.5));
    CHECK(s.delta[1] == doctest::Approx(0.75));
    CHECK(s.delta[2] == doctest::Approx(0.75));  // runs to t_far
}

TEST_CASE("composite basics") {
    SUBCASE("zero density returns the background") {
        auto s = make_samples({0.2, 0.4, 0.6}, 1.0);
        auto r = composite(s, {0.3, 0.6, 0.9});
        CHECK(r.color.x == doctest::Approx(0.3));
        CHECK(r.color.y == doctest::Approx(0.6));
        CHECK(r.color.z == doctest::Approx(0.9));
        CHECK(r.opacity == doctest::Approx(0.0));
        CHECK(r.t_final == doctest::Approx(1.0));
    }
    SUBCASE("single sample with sigma*delta = ln 2 takes half the weight") {
        RaySamples s = make_samples({0.0}, 1.0);  // delta = 1
        s.sigma[0] = std::log(2.0);
        s.c[0] = {1.0, 0.0, 0.0};
        auto r = composite(s, {0.0, 0.0, 1.0});
        CHECK(r.weights[0] == doctest::Approx(0.5));
        CHECK(r.color.x == doctest::Approx(0.5));
        CHECK(r.color.z == doctest::Approx(0.5));
        CHECK(r.opacity == doctest::Approx(0.5));
    }
    SUBCASE("saturated first sample wins") {
        RaySamples s = make_samples({0.0, 0.5}, 1.0);
        s.sigma[0] = 1e9;
        s.sigma[1] = 3.0;
        s.c[0] = {0.25, 0.5, 0.75};
        s.c[1] = {1, 1, 1};
        auto r = composite(s, {0, 0, 0});
        CHECK(std::abs(r.color.x - 0.25) < 1e-6);
        CHECK(std::abs(r.color.y - 0.5) < 1e-6);
        CHECK(std::abs(r.color.z - 0.75) < 1e-6);
    }
}

TEST_CASE("conservation and monotone transmittance on random rays") {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        int n = 1 + static_cast<int>(rng.uniform_index(24));
        std::vector<double> ts;
        double t = rng.uniform(0.0, 0.5);
        for (int i = 0; i < n; ++i) {
            ts.push_back(t);
            t += rng.uniform(0.0, 0.3);
        }
        RaySamples s = make_samples(ts, t + rng.uniform(0.0, 0.3));
        for (int i = 0; i < n; ++i) {
            s.sigma[static_cast<std::size_t>(i)] = rng.uniform(0.0, 30.0);
            s.c[static_cast<std::size_t>(i)] = {rng.uniform(), rng.uniform(), rng.uniform()};
        }
        auto r = composite(s, {rng.uniform(), rng.uniform(), rng.uniform()});
        CHECK(std::abs(r.opacity + r.t_final - 1.0) < 1e-6);
        for (int k = 0; k < 3; ++k) {
            CHECK(r.color[k] >= 0.0);
            CHECK(r.color[k] <= 1.0 + 1e-12);
        }
        // transmittance is non-increasing
        double T = 1.0;
        for (int i = 0; i < n; ++i) {
            double Tn = T * std::exp(-s.sigma[static_cast<std::size_t>(i)] *
                                     s.delta[static_cast<std::size_t>(i)]);
            CHECK(Tn <= T + 1e-15);
            T = Tn;
        }
        CHECK(r.t_final == doctest::Approx(T).epsilon(1e-9));
    }
}

TEST_CASE("unsorted samples are rejected") {
    RaySamples s = make_samples({0.1, 0.5, 0.9}, 1.0);
    std::swap(s.t[0], s.t[2]);
    CHECK_THROWS_AS(composite(s, {0, 0, 0}), std::invalid_argument);
    RaySamples neg = make_samples({0.1, 0.5}, 1.0);
    neg.sigma[0] = -1.0;
    CHECK_THROWS_AS(composite(neg, {0, 0, 0}), std::invalid_argument);
}

TEST_CASE("composite adjoint: zero upstream, closed form, FD") {
    SUBCASE("zero upstream gives zero grads") {
        RaySamples s = make_samples({0.1, 0.4}, 1.0);
        s.sigma = {1.0, 2.0};
        s.c = {{0.2, 0.3, 0.4}, {0.5, 0.6, 0.7}};
        auto fwd = composite(s, {1, 1, 1});
        std::vector<Vec3> dc;
        std::vector<double> dsig;
        Vec3 dbg{};
        composite_backward(s, {1, 1, 1}, fwd, Vec3{}, 0.0, dc, dsig, &dbg);
        for (auto& v : dc) CHECK(norm(v) == 0.0);
        for (double v : dsig) CHECK(v == 0.0);
        CHECK(norm(dbg) == 0.0);
    }
    SUBCASE("single-sample closed form dC/dsigma = delta e^{-sigma delta} (c - bg)") {
        RaySamples s = make_samples({0.0}, 0.7);  // delta = 0.7
        s.sigma[0] = 1.3;
        s.c[0] = {0.9, 0.1, 0.4};
        Vec3 bg{0.2, 0.2, 0.2};
        auto fwd = composite(s, bg);
        std::vector<Vec3> dc;
        std::vector<double> dsig;
        // probe each color channel independently
        for (int k = 0; k < 3; ++k) {
            Vec3 up{};
            up[k] = 1.0;
            composite_backward(s, bg, fwd, up, 0.0, dc, dsig, nullptr);
            double want = s.delta[0] * std::exp(-s.sigma[0] * s.delta[0]) * (s.c[0][k] - bg[k]);
            CHECK(dsig[0] == doctest::Approx(want).epsilon(1e-12));
            CHECK(dc[0][k] == doctest::Approx(fwd.weights[0]).epsilon(1e-12));
        }
    }
    SUBCASE("random instances agree with finite differences") {
        Rng rng(13);
        const double h = 1e-6;
        for (int trial = 0; trial < 40; ++trial) {
            int n = 1 + static_cast<int>(rng.uniform_index(8));
            std::vector<double> ts;
            double t = 0.1;
            for (int i = 0; i < n; ++i) {
                ts.push_back(t);
                t += rng.uniform(0.05, 0.3);
            }
            RaySamples s = make_samples(ts, t);
            for (int i = 0; i < n; ++i) {
                s.sigma[static_cast<std::size_t>(i)] = rng.uniform(0.0, 4.0);
                s.c[static_cast<std::size_t>(i)] = {rng.uniform(), rng.uniform(), rng.uniform()};
            }
            Vec3 bg{rng.uniform(), rng.uniform(), rng.uniform()};
            Vec3 g{rng.normal(), rng.normal(), rng.normal()};
            double go = rng.normal();

            auto fwd = composite(s, bg);
            std::vector<Vec3> dc;
            std::vector<double> dsig;
            Vec3 dbg{};
            composite_backward(s, bg, fwd, g, go, dc, dsig, &dbg);

            auto loss = [&](const RaySamples& ss, const Vec3& b) {
                auto r = composite(ss, b);
                return dot(g, r.color) + go * r.opacity;
            };
            for (int i = 0; i < n; ++i) {
                RaySamples sp = s, sm = s;
                sp.sigma[static_cast<std::size_t>(i)] += h;
                sm.sigma[static_cast<std::size_t>(i)] =
                    std::max(0.0, sm.sigma[static_cast<std::size_t>(i)] - h);
                double used_h =
                    (sp.sigma[static_cast<std::size_t>(i)] - sm.sigma[static_cast<std::size_t>(i)]);
                double fd = (loss(sp, bg) - loss(sm, bg)) / used_h;
                double an = dsig[static_cast<std::size_t>(i)];
                CHECK(std::abs(an - fd) / std::max({std::abs(fd), std::abs(an), 1e-6}) < 1e-4);
                for (int k = 0; k < 3; ++k) {
                    RaySamples cp = s, cm = s;
                    cp.c[static_cast<std::size_t>(i)][k] += h;
                    cm.c[static_cast<std::size_t>(i)][k] -= h;
                    double fdc = (loss(cp, bg) - loss(cm, bg)) / (2 * h);
                    CHECK(dc[static_cast<std::size_t>(i)][k] == doctest::Approx(fdc).epsilon(1e-4));
                }
            }
            for (int k = 0; k < 3; ++k) {
                Vec3 bp = bg, bm = bg;
                bp[k] += h;
                bm[k] -= h;
                double fdb = (loss(s, bp) - loss(s, bm)) / (2 * h);
                CHECK(dbg[k] == doctest::Approx(fdb).epsilon(1e-4));
            }
        }
    }
}

TEST_CASE("zero-density field renders the pure background frame") {
    Rng rng(15);
    nets::HeadField hf(tiny_config(), rng);
    force_zero_density(hf);
    CameraIntrinsics cam{40.0, 40.0, 16.0, 16.0, 32, 32};
    HeadPose pose = HeadPose::identity();
    pose.t = {0.0, 0.0, -3.0};
    Aabb box;
    double a[regionattn::kAudioDim] = {0};
    RenderOptions opt;
    opt.background = {1, 1, 1};
    auto fb = render_head_frame(hf, cam, pose, box, a, 0.0, opt);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            Vec3 p = fb.at(x, y);
            CHECK(p.x == 1.0);
            CHECK(p.y == 1.0);
            CHECK(p.z == 1.0);
        }
}

TEST_CASE("opaque sphere silhouette matches the analytic projection") {
    CameraIntrinsics cam{128.0, 128.0, 64.0, 64.0, 128, 128};
    HeadPose pose = HeadPose::identity();
    pose.t = {0.0, 0.0, -3.0};
    Aabb box;
    const double radius = 0.5, dist = 3.0;
    const double radius_px = cam.fx * radius / std::sqrt(dist * dist - radius * radius);
    for (int y = 0; y < 128; ++y)
        for (int x = 0; x < 128; ++x) {
            auto ray = ray_for_pixel(cam, pose, Vec2{x + 0.5, y + 0.5}, box);
            double opacity = 0.0;
            if (ray) {
                auto s = sphere_samples(*ray, 64, radius, 1e4);
                opacity = composite(s, {1, 1, 1}).opacity;
            }
            double dpx = std::hypot(x + 0.5 - cam.cx, y + 0.5 - cam.cy);
            if (dpx < radius_px - 1.0) CHECK(opacity > 0.5);
            if (dpx > radius_px + 1.0) CHECK(opacity < 0.5);
        }
}

TEST_CASE("rendering is deterministic and supersampling stays consistent") {
    Rng rng(17);
    nets::HeadField hf(tiny_config(), rng);
    CameraIntrinsics cam{40.0, 40.0, 16.0, 16.0, 32, 32};
    HeadPose pose = HeadPose::identity();
    pose.t = {0.0, 0.0, -3.0};
    Aabb box;
    double a[regionattn::kAudioDim];
    Rng arng(18);
    for (auto& v : a) v = arng.normal();
    RenderOptions opt;
    opt.jitter = true;
    opt.seed = 7;

    auto f1 = render_head_frame(hf, cam, pose, box, a, 0.4, opt);
    auto f2 = render_head_frame(hf, cam, pose, box, a, 0.4, opt);
    for (std::size_t i = 0; i < f1.pixels().size(); ++i) {
        CHECK(f1.pixels()[i].x == f2.pixels()[i].x);
        CHECK(f1.pixels()[i].y == f2.pixels()[i].y);
        CHECK(f1.pixels()[i].z == f2.pixels()[i].z);
    }
    opt.seed = 8;
    auto f3 = render_head_frame(hf, cam, pose, box, a, 0.4, opt);
    CHECK(image_mse(f1, f3) > 0.0);

    // worker count must not change the image
    RenderOptions opt_mt = opt;
    opt_mt.seed = 7;
    opt_mt.workers = 3;
    auto f4 = render_head_frame(hf, cam, pose, box, a, 0.4, opt_mt);
    CHECK(image_mse(f1, f4) == 0.0);

    // smooth fresh field: 1x vs 2x supersampling agree to >= 30 dB
    RenderOptions o1;
    RenderOptions o2;
    o2.supersample = 2;
    auto r1 = render_head_frame(hf, cam, pose, box, a, 0.4, o1);
    auto r2 = render_head_frame(hf, cam, pose, box, a, 0.4, o2);
    CHECK(image_psnr(r1, r2) >= 30.0);
}

TEST_CASE("torso composite over a frame respects alpha bounds") {
    Rng rng(19);
    nets::TorsoFieldConfig tc;
    tc.tex_grid.levels = 3;
    tc.tex_grid.res_min = 4;
    tc.tex_grid.res_max = 16;
    tc.tex_grid.table_size_log2 = 10;
    tc.deform_hidden = 8;
    tc.head_hidden = 8;
    nets::TorsoField tf(tc, rng);
    nets::PoseEncoding enc;
    enc.bar = {Vec2{0.1, 0.0}, Vec2{-0.05, 0.2}, Vec2{0.0, -0.1}};

    FrameBuffer frame(16, 16, {0.25, 0.5, 0.75});
    FrameBuffer before = frame;
    composite_torso_over(tf, enc, frame);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            Vec3 p = frame.at(x, y);
            for (int k = 0; k < 3; ++k) {
                CHECK(p[k] >= 0.0);
                CHECK(p[k] <= 1.0);
            }
        }
    // fresh torso has alpha near 0.5, so the frame must have moved
    CHECK(image_mse(before, frame) > 0.0);

    // alpha forced to zero leaves the frame untouched
    auto& mlp = tf.head_mlp();
    for (int i = 0; i < tc.head_hidden; ++i) mlp.set_weight(1, i, 3, 0.0);
    mlp.set_bias(1, 3, -800.0);
    FrameBuffer again = before;
    composite_torso_over(tf, enc, again);
    CHECK(image_mse(before, again) == 0.0);
}
