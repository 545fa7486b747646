#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "trifield/rng.hpp"

namespace trifield::hashenc {

/// Spatial hash of an integer lattice vertex into [0, table_size).
/// XOR of per-axis products with the primes {1, 2654435761, 805459861},
/// computed in wrapping 32-bit arithmetic.
std::uint32_t hash_vertex(const std::uint32_t* v, int dims, std::uint32_t table_size);

struct HashGridConfig {
    int levels = 14;
    int features = 1;
    int table_size_log2 = 14;
    int res_min = 64;
    int res_max = 512;
    int dims = 2;

    void validate() const;
    /// Geometric growth factor between level resolutions (1 when levels == 1).
    double growth() const;
    /// N_l = floor(res_min * growth^l), non-decreasing, N_{L-1} = res_max.
    int level_resolution(int level) const;
    int feature_dim() const { return levels * features; }
};

class HashGrid;

/// Gradient accumulator matching one grid's table layout. Zeroed between
/// optimizer steps; per-worker buffers are merged in worker order.
struct GradBuffer {
    explicit GradBuffer(const HashGrid& grid);
    void zero();
    void accumulate(const GradBuffer& other);

    std::vector<double> g;
};

/// One multiresolution hashed feature grid (2D or 3D). Table entries live in
/// doubles in memory; checkpoints narrow them to f32.
class HashGrid {
  public:
    /// table_size_override, when nonzero, replaces 2^table_size_log2. Used for
    /// equal-parameter-budget comparisons where the size is not a power of 2.
    HashGrid(const HashGridConfig& config, Rng& rng, std::uint32_t table_size_override = 0);

    const HashGridConfig& config() const { return config_; }
    std::uint32_t table_size() const { return table_size_; }
    std::size_t param_count() const { return table_.size(); }

    double entry(int level, std::uint32_t slot, int f) const {
        return table_[entry_index(level, slot, f)];
    }
    void set_entry(int level, std::uint32_t slot, int f, double v) {
        table_[entry_index(level, slot, f)] = v;
    }
    std::vector<double>& raw_table() { return table_; }
    const std::vector<double>& raw_table() const { return table_; }

    /// u: dims coords in [0,1] (clamped). out: levels*features values.
    void encode(const double* u, double* out) const;
    std::vector<double> encode(const std::vector<double>& u) const;

    /// Adjoint of encode. upstream: levels*features. Accumulates table grads
    /// into gb and, when du is non-null, adds dL/du into du[0..dims).
    void encode_backward(const double* u, const double* upstream, GradBuffer& gb,
                         double* du) const;

    /// Corner vertices and hash slots used to encode u at one level. Exposed
    /// for the collision analyzer so it counts exactly what encode touches.
    struct CornerSet {
        std::array<std::array<std::uint32_t, 3>, 8> vertex;
        std::array<std::uint32_t, 8> slot;
        int count = 0;
    };
    CornerSet corners(const double* u, int level) const;

    std::size_t entry_index(int level, std::uint32_t slot, int f) const {
        return (static_cast<std::size_t>(level) * table_size_ + slot) * config_.features + f;
    }

  private:
    struct CellBasis {
        std::uint32_t base[3];
        double frac[3];
    };
    CellBasis cell_basis(const double* u, int level) const;

    HashGridConfig config_;
    std::uint32_t table_size_;
    std::vector<double> table_;
};

}  // namespace trifield::hashenc
