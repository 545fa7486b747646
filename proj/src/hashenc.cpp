#include "trifield/hashenc.hpp"

#include <cmath>
#include <stdexcept>

#include "trifield/math.hpp"

namespace trifield::hashenc {

namespace {
constexpr std::uint32_t kPrimes[3] = {1u, 2654435761u, 805459861u};
}

std::uint32_t hash_vertex(const std::uint32_t* v, int dims, std::uint32_t table_size) {
    std::uint32_t h = 0;
    for (int i = 0; i < dims; ++i) h ^= v[i] * kPrimes[i];
    return h % table_size;
}

void HashGridConfig::validate() const {
    if (levels < 1) throw std::invalid_argument("HashGridConfig: levels must be >= 1");
    if (features < 1) throw std::invalid_argument("HashGridConfig: features must be >= 1");
    if (table_size_log2 < 1 || table_size_log2 > 28)
        throw std::invalid_argument("HashGridConfig: table_size_log2 out of range");
    if (res_min < 1 || res_min > res_max)
        throw std::invalid_argument("HashGridConfig: need 1 <= res_min <= res_max");
    if (dims != 2 && dims != 3) throw std::invalid_argument("HashGridConfig: dims must be 2 or 3");
}

double HashGridConfig::growth() const {
    if (levels == 1) return 1.0;
    return std::exp(std::log(static_cast<double>(res_max) / res_min) / (levels - 1));
}

int HashGridConfig::level_resolution(int level) const {
    // tiny epsilon guards floor() against pow() landing a hair under an integer
    double r = res_min * std::pow(growth(), level);
    return static_cast<int>(std::floor(r + 1e-9));
}

GradBuffer::GradBuffer(const HashGrid& grid) : g(grid.param_count(), 0.0) {}

void GradBuffer::zero() { std::fill(g.begin(), g.end(), 0.0); }

void GradBuffer::accumulate(const GradBuffer& other) {
    if (other.g.size() != g.size()) throw std::invalid_argument("GradBuffer: shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += other.g[i];
}

HashGrid::HashGrid(const HashGridConfig& config, Rng& rng, std::uint32_t table_size_override)
    : config_(config) {
    config_.validate();
    table_size_ = table_size_override ? table_size_override
                                      : (std::uint32_t{1} << config_.table_size_log2);
    table_.resize(static_cast<std::size_t>(config_.levels) * table_size_ * config_.features);
    for (auto& v : table_) v = rng.uniform(-1e-4, 1e-4);
}

HashGrid::CellBasis HashGrid::cell_basis(const double* u, int level) const {
    CellBasis cb{};
    int n = config_.level_resolution(level);
    for (int k = 0; k < config_.dims; ++k) {
        double pos = clamp01(u[k]) * n;
        double base = std::floor(pos);
        cb.base[k] = static_cast<std::uint32_t>(base);
        cb.frac[k] = pos - base;
    }
    return cb;
}

void HashGrid::encode(const double* u, double* out) const {
    const int F = config_.features;
    const int corners = 1 << config_.dims;
    for (int l = 0; l < config_.levels; ++l) {
        CellBasis cb = cell_basis(u, l);
        double* dst = out + static_cast<std::size_t>(l) * F;
        for (int f = 0; f < F; ++f) dst[f] = 0.0;
        for (int c = 0; c < corners; ++c) {
            double w = 1.0;
            std::uint32_t v[3] = {0, 0, 0};
            for (int k = 0; k < config_.dims; ++k) {
                int bit = (c >> k) & 1;
                w *= bit ? cb.frac[k] : 1.0 - cb.frac[k];
                v[k] = cb.base[k] + static_cast<std::uint32_t>(bit);
            }
            std::uint32_t slot = hash_vertex(v, config_.dims, table_size_);
            const double* e = table_.data() + entry_index(l, slot, 0);
            for (int f = 0; f < F; ++f) dst[f] += w * e[f];
        }
    }
}

std::vector<double> HashGrid::encode(const std::vector<double>& u) const {
    if (static_cast<int>(u.size()) != config_.dims)
        throw std::invalid_argument("encode: coordinate size mismatch");
    std::vector<double> out(config_.feature_dim());
    encode(u.data(), out.data());
    return out;
}

void HashGrid::encode_backward(const double* u, const double* upstream, GradBuffer& gb,
                               double* du) const {
    const int F = config_.features;
    const int corners = 1 << config_.dims;
    if (gb.g.size() != table_.size()) throw std::invalid_argument("encode_backward: bad GradBuffer");
    for (int l = 0; l < config_.levels; ++l) {
        CellBasis cb = cell_basis(u, l);
        int n = config_.level_resolution(l);
        const double* up = upstream + static_cast<std::size_t>(l) * F;
        for (int c = 0; c < corners; ++c) {
            double w = 1.0;
            std::uint32_t v[3] = {0, 0, 0};
            for (int k = 0; k < config_.dims; ++k) {
                int bit = (c >> k) & 1;
                w *= bit ? cb.frac[k] : 1.0 - cb.frac[k];
                v[k] = cb.base[k] + static_cast<std::uint32_t>(bit);
            }
            std::uint32_t slot = hash_vertex(v, config_.dims, table_size_);
            const double* e = table_.data() + entry_index(l, slot, 0);
            double* ge = gb.g.data() + entry_index(l, slot, 0);
            double up_dot_e = 0.0;
            for (int f = 0; f < F; ++f) {
                ge[f] += w * up[f];
                up_dot_e += up[f] * e[f];
            }
            if (du) {
                for (int k = 0; k < config_.dims; ++k) {
                    double dw = static_cast<double>(n);  // d(pos)/du
                    for (int j = 0; j < config_.dims; ++j) {
                        int bit = (c >> j) & 1;
                        if (j == k) {
                            dw *= bit ? 1.0 : -1.0;
                        } else {
                            dw *= bit ? cb.frac[j] : 1.0 - cb.frac[j];
                        }
                    }
                    du[k] += dw * up_dot_e;
                }
            }
        }
    }
}

HashGrid::CornerSet HashGrid::corners(const double* u, int level) const {
    CornerSet cs;
    cs.count = 1 << config_.dims;
    CellBasis cb = cell_basis(u, level);
    for (int c = 0; c < cs.count; ++c) {
        std::array<std::uint32_t, 3> v = {0, 0, 0};
        for (int k = 0; k < config_.dims; ++k) v[k] = cb.base[k] + ((c >> k) & 1);
        cs.vertex[c] = v;
        cs.slot[c] = hash_vertex(v.data(), config_.dims, table_size_);
    }
    return cs;
}

}  // namespace trifield::hashenc
