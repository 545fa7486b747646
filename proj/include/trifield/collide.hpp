#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "trifield/fieldrepr.hpp"

namespace trifield::collide {

/// Collision = slot over-occupancy over the distinct lattice vertices a query
/// set touches: sum over slots of max(0, n_s - 1), i.e. distinct - occupied.
struct PlaneCount {
    std::string plane;  // "xy", "yz", "xz"
    std::uint64_t distinct = 0;
    std::uint64_t occupied = 0;
    std::uint64_t collisions = 0;
};

struct CollisionReport {
    std::string encoder;  // "hash3d" or "triplane"
    int resolution = 0;
    std::uint32_t table_size = 0;  // per table (per plane for triplane)
    std::uint64_t distinct = 0;
    std::uint64_t occupied = 0;
    std::uint64_t collisions = 0;
    std::vector<PlaneCount> planes;  // per-plane breakdown, triplane only
};

/// Count over the interpolation corners touched at one grid level. Points are
/// clamped to [0,1]^3 exactly as encoding would.
CollisionReport count_collisions(fieldrepr::Backbone kind, int resolution,
                                 std::uint32_t table_size, const std::vector<Vec3>& points);

/// R x R orthographic frontal rays (exactly perpendicular to the xy plane),
/// N stratified depth midpoints each.
std::vector<Vec3> frontal_query_points(int R, int N);

struct SweepRow {
    std::string encoder;
    int R = 0, N = 0, level_res = 0;
    std::uint32_t table_size = 0;
    std::uint64_t distinct = 0;
    std::uint64_t collisions = 0;
    std::string plane;  // "all", "total", or a plane name
};

/// Full cross product of Rs x Ns for both encoders; triplane rows carry the
/// per-plane breakdown plus a "total" row.
std::vector<SweepRow> complexity_sweep(const std::vector<int>& Rs, const std::vector<int>& Ns,
                                       int resolution, std::uint32_t table3d,
                                       std::uint32_t table_tri);

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out);

/// Least-squares slope of y against x. Throws on a degenerate (constant-x or
/// sub-2-point) series.
double fit_slope(const std::vector<double>& xs, const std::vector<double>& ys);

/// Least-squares slope of log(y) against log(x); inputs must be positive.
double fit_loglog_exponent(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace trifield::collide
