#include <cmath>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "trifield/fieldrepr.hpp"

using namespace trifield;
using namespace trifield::fieldrepr;

namespace {

hashenc::HashGridConfig plane_cfg(int levels = 2, int res_min = 3, int res_max = 9) {
    hashenc::HashGridConfig c;
    c.levels = levels;
    c.features = 1;
    c.table_size_log2 = 14;
    c.res_min = res_min;
    c.res_max = res_max;
    c.dims = 2;
    return c;
}

double frac_at(double u, int n) {
    double pos = u * n;
    return pos - std::floor(pos);
}

bool away_from_faces3(const hashenc::HashGridConfig& cfg, const Vec3& x, double margin) {
    for (int l = 0; l < cfg.levels; ++l) {
        int n = cfg.level_resolution(l);
        for (int k = 0; k < 3; ++k) {
            double f = frac_at(x[k], n);
            if (f < margin || f > 1.0 - margin) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("tri-plane output layout and dimension") {
    Rng rng(1);
    hashenc::HashGridConfig c = plane_cfg(14, 64, 512);
    TriPlaneEncoder enc(c, rng);
    CHECK(enc.feature_dim() == 42);  // 3 * 14 * 1
    std::vector<double> out(42);
    enc.encode({0.3, 0.5, 0.7}, out.data());

    // first block must equal the XY plane applied to (x, y)
    double uv[2] = {0.3, 0.5};
    std::vector<double> xy(14);
    enc.plane(0).encode(uv, xy.data());
    for (int i = 0; i < 14; ++i) CHECK(out[i] == xy[i]);
    // middle block = YZ(y, z)
    double yz_uv[2] = {0.5, 0.7};
    std::vector<double> yz(14);
    enc.plane(1).encode(yz_uv, yz.data());
    for (int i = 0; i < 14; ++i) CHECK(out[14 + i] == yz[i]);
    // last block = XZ(x, z)
    double xz_uv[2] = {0.3, 0.7};
    std::vector<double> xz(14);
    enc.plane(2).encode(xz_uv, xz.data());
    for (int i = 0; i < 14; ++i) CHECK(out[28 + i] == xz[i]);
}

TEST_CASE("zero tables give a zero feature") {
    Rng rng(2);
    TriPlaneEncoder enc(plane_cfg(), rng);
    for (int p = 0; p < 3; ++p)
        std::fill(enc.plane(p).raw_table().begin(), enc.plane(p).raw_table().end(), 0.0);
    std::vector<double> out(enc.feature_dim());
    enc.encode({0.2, 0.8, 0.5}, out.data());
    for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("perturbing z leaves the XY block bit-exact") {
    Rng rng(3);
    TriPlaneEncoder enc(plane_cfg(), rng);
    const int pp = enc.feature_dim() / 3;
    std::vector<double> a(enc.feature_dim()), b(enc.feature_dim());
    Rng pts(4);
    for (int t = 0; t < 50; ++t) {
        Vec3 x{pts.uniform(), pts.uniform(), pts.uniform()};
        Vec3 x2 = x;
        x2.z = pts.uniform();
        enc.encode(x, a.data());
        enc.encode(x2, b.data());
        for (int i = 0; i < pp; ++i) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("equal-budget parameter counts stay within 2%") {
    Rng rng(5);
    hashenc::HashGridConfig c = plane_cfg(2, 4, 8);
    CHECK(TriPlaneEncoder::equal_budget_table(14) == 5461);
    SpatialEncoder tri(Backbone::trihash, c, rng, /*equal_budget=*/true);
    SpatialEncoder h3(Backbone::hash3d, c, rng);
    double ratio = static_cast<double>(tri.param_count()) / static_cast<double>(h3.param_count());
    CHECK(ratio > 0.98);
    CHECK(ratio < 1.02);
    // default mode: full-size tables per plane
    SpatialEncoder tri_full(Backbone::trihash, c, rng);
    CHECK(tri_full.param_count() == 3 * h3.param_count());
}

TEST_CASE("upstream confined to XY channels leaves dz zero") {
    Rng rng(6);
    TriPlaneEncoder enc(plane_cfg(), rng);
    const int pp = enc.feature_dim() / 3;
    std::vector<double> up(enc.feature_dim(), 0.0);
    Rng pts(7);
    for (int i = 0; i < pp; ++i) up[i] = pts.normal();
    TriPlaneEncoder::Grads g(enc);
    Vec3 dx{};
    enc.encode_backward({0.31, 0.63, 0.47}, up.data(), g, &dx);
    CHECK(dx.z == 0.0);
    // YZ and XZ plane tables receive nothing
    for (double v : g.per_plane[1].g) CHECK(v == 0.0);
    for (double v : g.per_plane[2].g) CHECK(v == 0.0);
}

TEST_CASE("tri-plane backward matches finite differences") {
    Rng rng(8);
    hashenc::HashGridConfig c = plane_cfg();
    TriPlaneEncoder enc(c, rng);
    for (int p = 0; p < 3; ++p)
        for (auto& v : enc.plane(p).raw_table()) v *= 1e4;
    Rng pts(9);
    const double h = 1e-5;
    int tested = 0;
    while (tested < 25) {
        Vec3 x{pts.uniform(), pts.uniform(), pts.uniform()};
        if (!away_from_faces3(c, x, 1e-2)) continue;
        ++tested;
        std::vector<double> up(enc.feature_dim());
        for (auto& v : up) v = pts.normal();
        TriPlaneEncoder::Grads g(enc);
        Vec3 dx{};
        enc.encode_backward(x, up.data(), g, &dx);
        std::vector<double> op(enc.feature_dim()), om(enc.feature_dim());
        for (int k = 0; k < 3; ++k) {
            Vec3 xp = x, xm = x;
            xp[k] += h;
            xm[k] -= h;
            enc.encode(xp, op.data());
            enc.encode(xm, om.data());
            double fd = 0.0;
            for (int i = 0; i < enc.feature_dim(); ++i) fd += up[i] * (op[i] - om[i]);
            fd /= 2 * h;
            CHECK(std::abs(dx[k] - fd) / std::max({std::abs(fd), std::abs(dx[k]), 1e-6}) < 1e-4);
        }
    }
}

TEST_CASE("spatial encoder facade: both backbones agree with their cores") {
    Rng rng(10);
    hashenc::HashGridConfig c = plane_cfg();
    SpatialEncoder tri(Backbone::trihash, c, rng, false);
    CHECK(tri.kind() == Backbone::trihash);
    CHECK(tri.grids().size() == 3);
    CHECK(tri.feature_dim() == 3 * c.feature_dim());

    SpatialEncoder h3(Backbone::hash3d, c, rng);
    CHECK(h3.grids().size() == 1);
    CHECK(h3.feature_dim() == c.feature_dim());
    CHECK(h3.grids()[0]->config().dims == 3);

    std::vector<double> out(h3.feature_dim());
    h3.encode({0.4, 0.2, 0.9}, out.data());
    double u[3] = {0.4, 0.2, 0.9};
    std::vector<double> want(h3.feature_dim());
    h3.grids()[0]->encode(u, want.data());
    CHECK(out == want);
}

TEST_CASE("hash3d backward matches finite differences through the facade") {
    Rng rng(11);
    hashenc::HashGridConfig c = plane_cfg();
    SpatialEncoder enc(Backbone::hash3d, c, rng);
    for (auto& v : enc.grids()[0]->raw_table()) v *= 1e4;
    Rng pts(12);
    const double h = 1e-5;
    int tested = 0;
    while (tested < 15) {
        Vec3 x{pts.uniform(), pts.uniform(), pts.uniform()};
        if (!away_from_faces3(c, x, 1e-2)) continue;
        ++tested;
        std::vector<double> up(enc.feature_dim());
        for (auto& v : up) v = pts.normal();
        SpatialEncoder::Grads g(enc);
        Vec3 dx{};
        enc.encode_backward(x, up.data(), g, &dx);
        std::vector<double> op(enc.feature_dim()), om(enc.feature_dim());
        for (int k = 0; k < 3; ++k) {
            Vec3 xp = x, xm = x;
            xp[k] += h;
            xm[k] -= h;
            enc.encode(xp, op.data());
            enc.encode(xm, om.data());
            double fd = 0.0;
            for (int i = 0; i < enc.feature_dim(); ++i) fd += up[i] * (op[i] - om[i]);
            fd /= 2 * h;
            CHECK(std::abs(dx[k] - fd) / std::max({std::abs(fd), std::abs(dx[k]), 1e-6}) < 1e-4);
        }
    }
}

TEST_CASE("occupancy grid updates") {
    OccupancyGrid grid(8, 0.5);
    CHECK_FALSE(grid.any_occupied());
    CHECK_THROWS_AS(OccupancyGrid(0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(OccupancyGrid(8, 0.0), std::invalid_argument);

    Rng rng(13);
    SUBCASE("zero field keeps everything empty") {
        grid.update({[](const Vec3&) { return 0.0; }}, rng);
        grid.update({[](const Vec3&) { return 0.0; }}, rng);
        CHECK(grid.occupied_count() == 0);
    }
    SUBCASE("large constant occupies everything") {
        grid.update({[](const Vec3&) { return 10.0; }}, rng);
        CHECK(grid.occupied_count() == 8u * 8 * 8);
    }
    SUBCASE("half-space occupancy matches within one cell shell") {
        auto half = [](const Vec3& u) { return u.x > 0.5 ? 10.0 : 0.0; };
        grid.update({half}, rng);
        for (int iz = 0; iz < 8; ++iz)
            for (int iy = 0; iy < 8; ++iy)
                for (int ix = 0; ix < 8; ++ix) {
                    bool occ = grid.occupied(ix, iy, iz);
                    if (ix <= 2) CHECK_FALSE(occ);  // strictly left of the plane
                    if (ix >= 5) CHECK(occ);        // strictly right
                }
    }
    SUBCASE("decay eventually clears a stale cell") {
        grid.update({[](const Vec3&) { return 1.0; }}, rng);
        CHECK(grid.any_occupied());
        for (int i = 0; i < 40; ++i) grid.update({[](const Vec3&) { return 0.0; }}, rng);
        CHECK_FALSE(grid.any_occupied());
    }
    SUBCASE("max over conditions") {
        auto zero = [](const Vec3&) { return 0.0; };
        auto big = [](const Vec3&) { return 3.0; };
        grid.update({zero, big}, rng);
        CHECK(grid.occupied_count() == 8u * 8 * 8);
    }
}

TEST_CASE("stratified sampling basics") {
    auto mid = [](int) { return 0.5; };
    auto ts = stratified_ts(2.0, 4.0, 4, mid);
    REQUIRE(ts.size() == 4);
    CHECK(ts[0] == doctest::Approx(2.25));
    CHECK(ts[1] == doctest::Approx(2.75));
    CHECK(ts[2] == doctest::Approx(3.25));
    CHECK(ts[3] == doctest::Approx(3.75));
}

TEST_CASE("skip_empty") {
    Aabb box;  // [-1,1]^3
    Ray ray{{-2.0, 0.05, 0.05}, {1.0, 0.0, 0.0}, 1.0, 3.0};
    ray.validate();
    auto jit = [](int k) { return hash_jitter(17, 3, 5, static_cast<std::uint64_t>(k)); };

    SUBCASE("null grid = plain stratified") {
        auto r = skip_empty(ray, box, nullptr, 16, jit);
        CHECK_FALSE(r.fallback);
        CHECK(r.ts == stratified_ts(1.0, 3.0, 16, jit));
    }
    SUBCASE("all-occupied grid = identical to uniform stratified") {
        OccupancyGrid grid(4, 0.5);
        grid.fill(1.0);
        auto r = skip_empty(ray, box, &grid, 16, jit);
        CHECK_FALSE(r.fallback);
        REQUIRE(r.ts.size() == 16);
        auto uniform = stratified_ts(1.0, 3.0, 16, jit);
        for (int k = 0; k < 16; ++k) CHECK(r.ts[k] == uniform[k]);
    }
    SUBCASE("all-empty grid = empty list") {
        OccupancyGrid grid(4, 0.5);
        auto r = skip_empty(ray, box, &grid, 16, jit);
        CHECK(r.ts.empty());
        CHECK_FALSE(r.fallback);
    }
    SUBCASE("occupied cells exist but the ray misses: uniform fallback") {
        OccupancyGrid grid(4, 0.5);
        // occupy only the top z-slab; our ray travels near z=0.05 (cell 2)
        for (int iy = 0; iy < 4; ++iy)
            for (int ix = 0; ix < 4; ++ix) grid.raw_cache()[grid.cell_index(ix, iy, 3)] = 1.0;
        auto r = skip_empty(ray, box, &grid, 16, jit);
        CHECK(r.fallback);
        CHECK(r.ts == stratified_ts(1.0, 3.0, 16, jit));
    }
    SUBCASE("single occupied slab confines samples to its t-interval") {
        OccupancyGrid grid(4, 0.5);
        // occupy x-cells ix=2 for all y,z: x in [0, 0.5] world, t in [2.0, 2.5]
        for (int iz = 0; iz < 4; ++iz)
            for (int iy = 0; iy < 4; ++iy) grid.raw_cache()[grid.cell_index(2, iy, iz)] = 1.0;
        auto r = skip_empty(ray, box, &grid, 16, jit);
        CHECK_FALSE(r.fallback);
        REQUIRE(r.ts.size() == 16);
        double prev = -1e9;
        for (double t : r.ts) {
            CHECK(t >= 2.0);
            CHECK(t <= 2.5);
            CHECK(t > prev);
            prev = t;
            CHECK(grid.occupied_at({(ray.at(t).x + 1) / 2, (ray.at(t).y + 1) / 2,
                                    (ray.at(t).z + 1) / 2}));
        }
    }
    SUBCASE("every emitted sample maps to an occupied cell (random grids)") {
        Rng rng(21);
        for (int trial = 0; trial < 40; ++trial) {
            OccupancyGrid grid(5, 0.5);
            for (auto& c : grid.raw_cache()) c = rng.uniform() < 0.3 ? 1.0 : 0.0;
            Vec3 dir = normalized(Vec3{rng.normal(), rng.normal(), rng.normal()});
            Vec3 origin = Vec3{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                               rng.uniform(-0.5, 0.5)} - 3.0 * dir;
            auto hit = intersect_aabb(origin, dir, box);
            if (!hit) continue;
            Ray r{origin, dir, hit->first, hit->second};
            auto jr = [&](int k) {
                return hash_jitter(4, static_cast<std::uint64_t>(trial), 0,
                                   static_cast<std::uint64_t>(k));
            };
            auto res = skip_empty(r, box, &grid, 16, jr);
            if (res.fallback || res.ts.empty()) continue;
            for (double t : res.ts) {
                Vec3 p = r.at(t);
                Vec3 u{(p.x + 1) / 2, (p.y + 1) / 2, (p.z + 1) / 2};
                CHECK(grid.occupied_at(u));
            }
        }
    }
}
