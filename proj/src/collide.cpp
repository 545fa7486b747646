#include "trifield/collide.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "trifield/hashenc.hpp"

namespace trifield::collide {

namespace {

using hashenc::HashGrid;
using hashenc::HashGridConfig;

HashGrid single_level_grid(int dims, int resolution, std::uint32_t table_size) {
    HashGridConfig cfg;
    cfg.levels = 1;
    cfg.features = 1;
    cfg.res_min = resolution;
    cfg.res_max = resolution;
    cfg.dims = dims;
    Rng rng(0);
    return HashGrid(cfg, rng, table_size);
}

// pack lattice coords (< 2^21 each) into one sortable key
std::uint64_t pack(const std::array<std::uint32_t, 3>& v) {
    return static_cast<std::uint64_t>(v[0]) | (static_cast<std::uint64_t>(v[1]) << 21) |
           (static_cast<std::uint64_t>(v[2]) << 42);
}

void unpack(std::uint64_t key, std::uint32_t* v) {
    v[0] = static_cast<std::uint32_t>(key & 0x1FFFFF);
    v[1] = static_cast<std::uint32_t>((key >> 21) & 0x1FFFFF);
    v[2] = static_cast<std::uint32_t>((key >> 42) & 0x1FFFFF);
}

struct SlotCounts {
    std::uint64_t distinct = 0;
    std::uint64_t occupied = 0;
};

/// Sort-unique the touched vertices, then histogram their hash slots.
SlotCounts tally(std::vector<std::uint64_t>& keys, int dims, std::uint32_t table_size) {
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    std::vector<std::uint32_t> histogram(table_size, 0);
    std::uint32_t v[3];
    for (std::uint64_t key : keys) {
        unpack(key, v);
        ++histogram[hashenc::hash_vertex(v, dims, table_size)];
    }
    SlotCounts sc;
    sc.distinct = keys.size();
    for (std::uint32_t n : histogram) sc.occupied += (n > 0);
    return sc;
}

}  // namespace

CollisionReport count_collisions(fieldrepr::Backbone kind, int resolution,
                                 std::uint32_t table_size, const std::vector<Vec3>& points) {
    if (resolution < 1 || resolution >= (1 << 20))
        throw std::invalid_argument("count_collisions: resolution out of range");
    CollisionReport rep;
    rep.resolution = resolution;
    rep.table_size = table_size;

    if (kind == fieldrepr::Backbone::hash3d) {
        rep.encoder = "hash3d";
        HashGrid grid = single_level_grid(3, resolution, table_size);
        std::vector<std::uint64_t> keys;
        keys.reserve(points.size() * 8);
        for (const Vec3& p : points) {
            double u[3] = {p.x, p.y, p.z};
            auto cs = grid.corners(u, 0);
            for (int i = 0; i < cs.count; ++i) keys.push_back(pack(cs.vertex[static_cast<std::size_t>(i)]));
        }
        auto sc = tally(keys, 3, table_size);
        rep.distinct = sc.distinct;
        rep.occupied = sc.occupied;
        rep.collisions = sc.distinct - sc.occupied;
        return rep;
    }

    rep.encoder = "triplane";
    HashGrid grid = single_level_grid(2, resolution, table_size);
    static const char* kPlaneNames[3] = {"xy", "yz", "xz"};
    for (int plane = 0; plane < 3; ++plane) {
        std::vector<std::uint64_t> keys;
        keys.reserve(points.size() * 4);
        for (const Vec3& p : points) {
            double uv[2];
            switch (plane) {
                case 0: uv[0] = p.x; uv[1] = p.y; break;
                case 1: uv[0] = p.y; uv[1] = p.z; break;
                default: uv[0] = p.x; uv[1] = p.z; break;
            }
            auto cs = grid.corners(uv, 0);
            for (int i = 0; i < cs.count; ++i) keys.push_back(pack(cs.vertex[static_cast<std::size_t>(i)]));
        }
        auto sc = tally(keys, 2, table_size);
        PlaneCount pc{kPlaneNames[plane], sc.distinct, sc.occupied, sc.distinct - sc.occupied};
        rep.distinct += pc.distinct;
        rep.occupied += pc.occupied;
        rep.collisions += pc.collisions;
        rep.planes.push_back(std::move(pc));
    }
    return rep;
}

std::vector<Vec3> frontal_query_points(int R, int N) {
    if (R < 1 || N < 1) throw std::invalid_argument("frontal_query_points: R and N must be >= 1");
    std::vector<Vec3> pts;
    pts.reserve(static_cast<std::size_t>(R) * R * N);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x)
            for (int k = 0; k < N; ++k)
                pts.push_back({(x + 0.5) / R, (y + 0.5) / R, (k + 0.5) / N});
    return pts;
}

std::vector<SweepRow> complexity_sweep(const std::vector<int>& Rs, const std::vector<int>& Ns,
                                       int resolution, std::uint32_t table3d,
                                       std::uint32_t table_tri) {
    std::vector<SweepRow> rows;
    for (int R : Rs)
        for (int N : Ns) {
            auto pts = frontal_query_points(R, N);
            auto r3 = count_collisions(fieldrepr::Backbone::hash3d, resolution, table3d, pts);
            rows.push_back({"hash3d", R, N, resolution, table3d, r3.distinct, r3.collisions,
                            "all"});
            auto rt = count_collisions(fieldrepr::Backbone::trihash, resolution, table_tri, pts);
            for (const auto& pc : rt.planes)
                rows.push_back({"triplane", R, N, resolution, table_tri, pc.distinct,
                                pc.collisions, pc.plane});
            rows.push_back({"triplane", R, N, resolution, table_tri, rt.distinct, rt.collisions,
                            "total"});
        }
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
    out << "encoder,R,N,level_res,table_size,distinct_vertices,collisions,plane\n";
    for (const auto& r : rows)
        out << r.encoder << ',' << r.R << ',' << r.N << ',' << r.level_res << ',' << r.table_size
            << ',' << r.distinct << ',' << r.collisions << ',' << r.plane << '\n';
}

double fit_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::invalid_argument("fit_slope: need at least two points");
    double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-12 * std::max(1.0, sxx))
        throw std::invalid_argument("fit_slope: degenerate series (constant x)");
    return (n * sxy - sx * sy) / denom;
}

double fit_loglog_exponent(const std::vector<double>& xs, const std::vector<double>& ys) {
    std::vector<double> lx(xs.size()), ly(ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i] <= 0.0 || (i < ys.size() && ys[i] <= 0.0))
            throw std::invalid_argument("fit_loglog_exponent: inputs must be positive");
        lx[i] = std::log(xs[i]);
    }
    for (std::size_t i = 0; i < ys.size(); ++i) ly[i] = std::log(ys[i]);
    return fit_slope(lx, ly);
}

}  // namespace trifield::collide
