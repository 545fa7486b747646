#include "trifield/fieldrepr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace trifield::fieldrepr {

TriPlaneEncoder::TriPlaneEncoder(const hashenc::HashGridConfig& plane_config, Rng& rng,
                                 std::uint32_t per_plane_table) {
    if (plane_config.dims != 2)
        throw std::invalid_argument("TriPlaneEncoder: plane config must be 2D");
    planes_.reserve(3);
    for (int p = 0; p < 3; ++p) planes_.emplace_back(plane_config, rng, per_plane_table);
}

std::size_t TriPlaneEncoder::param_count() const {
    return planes_[0].param_count() + planes_[1].param_count() + planes_[2].param_count();
}

void TriPlaneEncoder::Grads::zero() {
    for (auto& g : per_plane) g.zero();
}

void TriPlaneEncoder::Grads::accumulate(const Grads& o) {
    for (int p = 0; p < 3; ++p) per_plane[p].accumulate(o.per_plane[p]);
}

namespace {
inline void plane_coords(const Vec3& x, int p, double* uv) {
    switch (p) {
        case 0: uv[0] = x.x; uv[1] = x.y; break;  // XY
        case 1: uv[0] = x.y; uv[1] = x.z; break;  // YZ
        default: uv[0] = x.x; uv[1] = x.z; break; // XZ
    }
}

inline void scatter_plane_grad(int p, const double* duv, Vec3& dx) {
    switch (p) {
        case 0: dx.x += duv[0]; dx.y += duv[1]; break;
        case 1: dx.y += duv[0]; dx.z += duv[1]; break;
        default: dx.x += duv[0]; dx.z += duv[1]; break;
    }
}
}  // namespace

void TriPlaneEncoder::encode(const Vec3& x, double* out) const {
    const int per_plane = planes_[0].config().feature_dim();
    for (int p = 0; p < 3; ++p) {
        double uv[2];
        plane_coords(x, p, uv);
        planes_[p].encode(uv, out + static_cast<std::size_t>(p) * per_plane);
    }
}

void TriPlaneEncoder::encode_backward(const Vec3& x, const double* upstream, Grads& grads,
                                      Vec3* dx) const {
    const int per_plane = planes_[0].config().feature_dim();
    for (int p = 0; p < 3; ++p) {
        double uv[2];
        plane_coords(x, p, uv);
        double duv[2] = {0.0, 0.0};
        planes_[p].encode_backward(uv, upstream + static_cast<std::size_t>(p) * per_plane,
                                   grads.per_plane[p], dx ? duv : nullptr);
        if (dx) scatter_plane_grad(p, duv, *dx);
    }
}

SpatialEncoder::SpatialEncoder(Backbone kind, hashenc::HashGridConfig config, Rng& rng,
                               bool equal_budget)
    : kind_(kind) {
    if (kind_ == Backbone::trihash) {
        config.dims = 2;
        std::uint32_t per_plane =
            equal_budget ? TriPlaneEncoder::equal_budget_table(config.table_size_log2) : 0;
        tri_ = std::make_unique<TriPlaneEncoder>(config, rng, per_plane);
    } else {
        config.dims = 3;
        h3_ = std::make_unique<hashenc::HashGrid>(config, rng);
    }
}

int SpatialEncoder::feature_dim() const {
    return tri_ ? tri_->feature_dim() : h3_->config().feature_dim();
}

std::size_t SpatialEncoder::param_count() const {
    return tri_ ? tri_->param_count() : h3_->param_count();
}

std::vector<hashenc::HashGrid*> SpatialEncoder::grids() {
    if (tri_) return {&tri_->plane(0), &tri_->plane(1), &tri_->plane(2)};
    return {h3_.get()};
}

std::vector<const hashenc::HashGrid*> SpatialEncoder::grids() const {
    if (tri_) return {&tri_->plane(0), &tri_->plane(1), &tri_->plane(2)};
    return {h3_.get()};
}

SpatialEncoder::Grads::Grads(const SpatialEncoder& enc) {
    for (const hashenc::HashGrid* g : enc.grids()) per_grid.emplace_back(*g);
}

void SpatialEncoder::Grads::zero() {
    for (auto& g : per_grid) g.zero();
}

void SpatialEncoder::Grads::accumulate(const Grads& o) {
    if (o.per_grid.size() != per_grid.size())
        throw std::invalid_argument("SpatialEncoder::Grads: shape mismatch");
    for (std::size_t i = 0; i < per_grid.size(); ++i) per_grid[i].accumulate(o.per_grid[i]);
}

void SpatialEncoder::encode(const Vec3& x, double* out) const {
    if (tri_) {
        tri_->encode(x, out);
    } else {
        double u[3] = {x.x, x.y, x.z};
        h3_->encode(u, out);
    }
}

void SpatialEncoder::encode_backward(const Vec3& x, const double* upstream, Grads& grads,
                                     Vec3* dx) const {
    if (tri_) {
        // plane grad buffers are exactly grads.per_grid[0..2]
        double uv[2], duv[2];
        const int per_plane = tri_->plane(0).config().feature_dim();
        for (int p = 0; p < 3; ++p) {
            switch (p) {
                case 0: uv[0] = x.x; uv[1] = x.y; break;
                case 1: uv[0] = x.y; uv[1] = x.z; break;
                default: uv[0] = x.x; uv[1] = x.z; break;
            }
            duv[0] = duv[1] = 0.0;
            tri_->plane(p).encode_backward(uv, upstream + static_cast<std::size_t>(p) * per_plane,
                                           grads.per_grid[p], dx ? duv : nullptr);
            if (dx) {
                switch (p) {
                    case 0: dx->x += duv[0]; dx->y += duv[1]; break;
                    case 1: dx->y += duv[0]; dx->z += duv[1]; break;
                    default: dx->x += duv[0]; dx->z += duv[1]; break;
                }
            }
        }
    } else {
        double u[3] = {x.x, x.y, x.z};
        double du[3] = {0, 0, 0};
        h3_->encode_backward(u, upstream, grads.per_grid[0], dx ? du : nullptr);
        if (dx) {
            dx->x += du[0];
            dx->y += du[1];
            dx->z += du[2];
        }
    }
}

OccupancyGrid::OccupancyGrid(int resolution, double threshold)
    : res_(resolution), threshold_(threshold) {
    if (resolution < 1) throw std::invalid_argument("OccupancyGrid: resolution must be >= 1");
    if (!(threshold > 0.0)) throw std::invalid_argument("OccupancyGrid: threshold must be > 0");
    cache_.assign(static_cast<std::size_t>(res_) * res_ * res_, 0.0);
}

int OccupancyGrid::cell_of(double u) const {
    int c = static_cast<int>(std::floor(u * res_));
    return std::clamp(c, 0, res_ - 1);
}

bool OccupancyGrid::occupied_at(const Vec3& u) const {
    return occupied(cell_of(u.x), cell_of(u.y), cell_of(u.z));
}

std::size_t OccupancyGrid::occupied_count() const {
    std::size_t n = 0;
    for (double v : cache_)
        if (v >= threshold_) ++n;
    return n;
}

void OccupancyGrid::fill(double cache_value) {
    std::fill(cache_.begin(), cache_.end(), cache_value);
}

void OccupancyGrid::update(const std::vector<std::function<double(const Vec3&)>>& sigma_fields,
                           Rng& rng, double decay) {
    for (int iz = 0; iz < res_; ++iz)
        for (int iy = 0; iy < res_; ++iy)
            for (int ix = 0; ix < res_; ++ix) {
                Vec3 u{(ix + rng.uniform()) / res_, (iy + rng.uniform()) / res_,
                       (iz + rng.uniform()) / res_};
                double fresh = 0.0;
                for (const auto& f : sigma_fields) fresh = std::max(fresh, f(u));
                std::size_t i = cell_index(ix, iy, iz);
                cache_[i] = std::max(decay * cache_[i], fresh);
            }
}

std::vector<double> stratified_ts(double t0, double t1, int n,
                                  const std::function<double(int)>& jitter) {
    std::vector<double> ts(static_cast<std::size_t>(n));
    double span = t1 - t0;
    for (int k = 0; k < n; ++k) ts[static_cast<std::size_t>(k)] = t0 + (k + jitter(k)) / n * span;
    return ts;
}

SampleResult skip_empty(const Ray& ray, const Aabb& aabb, const OccupancyGrid* grid, int n,
                        const std::function<double(int)>& jitter) {
    if (n < 1) throw std::invalid_argument("skip_empty: need n >= 1");
    SampleResult out;
    if (!grid) {
        out.ts = stratified_ts(ray.t_near, ray.t_far, n, jitter);
        return out;
    }
    if (!grid->any_occupied()) return out;  // pure background

    // voxel walk in normalized coordinates, parameterized by world-space t
    const int res = grid->resolution();
    Vec3 ext = aabb.extent();
    Vec3 p0 = ray.at(ray.t_near);
    Vec3 u0{(p0.x - aabb.min.x) / ext.x, (p0.y - aabb.min.y) / ext.y,
            (p0.z - aabb.min.z) / ext.z};
    double du[3] = {ray.direction.x / ext.x, ray.direction.y / ext.y, ray.direction.z / ext.z};

    int cell[3];
    int step[3];
    double t_max[3], t_delta[3];
    const double inf = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
        cell[k] = grid->cell_of(u0[k]);
        if (du[k] > 0.0) {
            step[k] = 1;
            t_delta[k] = (1.0 / res) / du[k];
            t_max[k] = ray.t_near + ((cell[k] + 1.0) / res - u0[k]) / du[k];
        } else if (du[k] < 0.0) {
            step[k] = -1;
            t_delta[k] = (1.0 / res) / -du[k];
            t_max[k] = ray.t_near + (static_cast<double>(cell[k]) / res - u0[k]) / du[k];
        } else {
            step[k] = 0;
            t_delta[k] = inf;
            t_max[k] = inf;
        }
    }

    // collect occupied [enter, exit) intervals, merging adjacent ones
    struct Interval {
        double a, b;
    };
    std::vector<Interval> occ;
    double t_enter = ray.t_near;
    while (t_enter < ray.t_far) {
        int axis = 0;
        if (t_max[1] < t_max[axis]) axis = 1;
        if (t_max[2] < t_max[axis]) axis = 2;
        double t_exit = std::min(t_max[axis], ray.t_far);
        if (grid->occupied(cell[0], cell[1], cell[2]) && t_exit > t_enter) {
            if (!occ.empty() && occ.back().b == t_enter)
                occ.back().b = t_exit;
            else
                occ.push_back({t_enter, t_exit});
        }
        t_enter = t_max[axis];
        if (t_enter >= ray.t_far) break;
        cell[axis] += step[axis];
        if (cell[axis] < 0 || cell[axis] >= res) break;
        t_max[axis] += t_delta[axis];
    }

    if (occ.empty()) {
        out.ts = stratified_ts(ray.t_near, ray.t_far, n, jitter);
        out.fallback = true;
        return out;
    }

    double total = 0.0;
    for (const auto& iv : occ) total += iv.b - iv.a;
    if (!(total > 0.0)) {
        out.ts = stratified_ts(ray.t_near, ray.t_far, n, jitter);
        out.fallback = true;
        return out;
    }

    out.ts.reserve(static_cast<std::size_t>(n));
    std::size_t iv = 0;
    double cum = 0.0;
    for (int k = 0; k < n; ++k) {
        double s = (k + jitter(k)) / n * total;
        while (iv + 1 < occ.size() && s >= cum + (occ[iv].b - occ[iv].a)) {
            cum += occ[iv].b - occ[iv].a;
            ++iv;
        }
        out.ts.push_back(occ[iv].a + (s - cum));
    }
    return out;
}

}  // namespace trifield::fieldrepr
