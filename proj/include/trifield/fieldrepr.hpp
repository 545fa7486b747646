#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "trifield/geom.hpp"
#include "trifield/hashenc.hpp"

namespace trifield::fieldrepr {

/// Three 2D hash grids over the orthogonal planes; features concatenated in
/// the fixed order XY, YZ, XZ.
class TriPlaneEncoder {
  public:
    /// plane_config must have dims == 2. per_plane_table, when nonzero,
    /// overrides each plane's table size (used for equal-budget comparisons).
    TriPlaneEncoder(const hashenc::HashGridConfig& plane_config, Rng& rng,
                    std::uint32_t per_plane_table = 0);

    /// Table size per plane that keeps a tri-plane encoder within 2% of the
    /// parameter count of one 3D grid with table 2^table_size_log2.
    static std::uint32_t equal_budget_table(int table_size_log2) {
        return static_cast<std::uint32_t>(
            std::llround(static_cast<double>(std::uint64_t{1} << table_size_log2) / 3.0));
    }

    int feature_dim() const { return 3 * planes_[0].config().feature_dim(); }
    std::size_t param_count() const;

    hashenc::HashGrid& plane(int i) { return planes_[i]; }          // 0 XY, 1 YZ, 2 XZ
    const hashenc::HashGrid& plane(int i) const { return planes_[i]; }

    struct Grads {
        explicit Grads(const TriPlaneEncoder& enc)
            : per_plane{hashenc::GradBuffer(enc.planes_[0]), hashenc::GradBuffer(enc.planes_[1]),
                        hashenc::GradBuffer(enc.planes_[2])} {}
        void zero();
        void accumulate(const Grads& o);
        std::vector<hashenc::GradBuffer> per_plane;
    };

    /// x in [0,1]^3 (clamped per plane). out: 3*L*F values.
    void encode(const Vec3& x, double* out) const;
    /// Adjoint; adds dL/dx into *dx when non-null.
    void encode_backward(const Vec3& x, const double* upstream, Grads& grads, Vec3* dx) const;

  private:
    std::vector<hashenc::HashGrid> planes_;
};

/// One interface over the tri-plane representation and the single-3D-grid
/// baseline so the head field and trainer stay backbone-agnostic.
enum class Backbone { trihash, hash3d };

class SpatialEncoder {
  public:
    /// plane_config.dims is overridden per backbone (2 for trihash planes,
    /// 3 for the baseline grid). equal_budget shrinks tri-plane tables to
    /// round(2^table_size_log2 / 3) per plane.
    SpatialEncoder(Backbone kind, hashenc::HashGridConfig config, Rng& rng,
                   bool equal_budget = false);

    Backbone kind() const { return kind_; }
    int feature_dim() const;
    std::size_t param_count() const;

    /// Learnable grids in canonical order (3 planes, or the one 3D table).
    std::vector<hashenc::HashGrid*> grids();
    std::vector<const hashenc::HashGrid*> grids() const;

    struct Grads {
        explicit Grads(const SpatialEncoder& enc);
        void zero();
        void accumulate(const Grads& o);
        std::vector<hashenc::GradBuffer> per_grid;
    };

    void encode(const Vec3& x, double* out) const;
    void encode_backward(const Vec3& x, const double* upstream, Grads& grads, Vec3* dx) const;

  private:
    Backbone kind_;
    std::unique_ptr<TriPlaneEncoder> tri_;
    std::unique_ptr<hashenc::HashGrid> h3_;
};

/// Binary occupancy over the scene box, maintained as a decayed running max
/// of sampled densities. Cells compare their cache against a fixed threshold.
class OccupancyGrid {
  public:
    OccupancyGrid(int resolution, double threshold);

    int resolution() const { return res_; }
    double threshold() const { return threshold_; }

    bool occupied(int ix, int iy, int iz) const {
        return cache_[cell_index(ix, iy, iz)] >= threshold_;
    }
    /// u in [0,1]^3, clamped to the boundary cells.
    bool occupied_at(const Vec3& u) const;
    std::size_t occupied_count() const;
    bool any_occupied() const { return occupied_count() > 0; }
    void fill(double cache_value);

    /// cache <- max(decay * cache, max over fields of sigma at a jittered cell
    /// center). Each field is the density under one sampled condition.
    void update(const std::vector<std::function<double(const Vec3&)>>& sigma_fields, Rng& rng,
                double decay = 0.95);

    std::vector<double>& raw_cache() { return cache_; }
    const std::vector<double>& raw_cache() const { return cache_; }

    std::size_t cell_index(int ix, int iy, int iz) const {
        return (static_cast<std::size_t>(iz) * res_ + iy) * res_ + ix;
    }
    int cell_of(double u) const;  // axis coordinate -> cell index, clamped

  private:
    int res_;
    double threshold_;
    std::vector<double> cache_;
};

/// Stratified t-values: t0 + (k + jitter(k))/n * (t1 - t0), ascending.
std::vector<double> stratified_ts(double t0, double t1, int n,
                                  const std::function<double(int)>& jitter);

struct SampleResult {
    std::vector<double> ts;
    /// true when the grid had occupied cells but none intersected this ray,
    /// so uniform samples were returned instead.
    bool fallback = false;
};

/// Place up to n samples inside occupied cells along the ray (stratified over
/// the union of occupied t-intervals). grid == nullptr means plain stratified
/// sampling. A grid with no occupied cells at all yields an empty list.
SampleResult skip_empty(const Ray& ray, const Aabb& aabb, const OccupancyGrid* grid, int n,
                        const std::function<double(int)>& jitter);

}  // namespace trifield::fieldrepr
