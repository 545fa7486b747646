#pragma once

#include <vector>

#include "trifield/dense.hpp"
#include "trifield/fieldrepr.hpp"
#include "trifield/regionattn.hpp"

namespace trifield::nets {

/// Frequency encoding of a unit direction: sin/cos at octaves 2^0..2^(n-1)
/// per component (no pi factor, so antipodal directions never collide).
/// Layout: [(sin(2^j d_k), cos(2^j d_k)) for k in 0..2 for j in 0..n-1].
int dir_encoding_dim(int octaves);
void encode_direction(const Vec3& d, int octaves, double* out);

enum class AttentionMode { channel, feature, concat };

struct HeadFieldConfig {
    hashenc::HashGridConfig grid;  // dims overridden per backbone
    fieldrepr::Backbone backbone = fieldrepr::Backbone::trihash;
    AttentionMode attention = AttentionMode::channel;
    /// Shrink tri-plane tables to round(2^log2/3) per plane so both backbones
    /// spend the same parameter budget (ablation fairness).
    bool equal_budget = false;
    /// Drop attention-branch gradients into the spatial features.
    bool detach_attention = false;
    int audio_hidden = 64;
    int eye_hidden = 16;
    int density_hidden = 64;
    int color_hidden = 64;
    int latent_dim = 32;
    int dir_octaves = 4;

    HeadFieldConfig() {
        grid.levels = 14;
        grid.features = 1;
        grid.table_size_log2 = 14;
        grid.res_min = 64;
        grid.res_max = 512;
    }
};

/// Conditioned radiance field for the head: spatial hash features, region
/// attention over the audio/eye conditions, density and color decoders.
/// density pre-activation maps through exp clamped at 15; rgb is sigmoid.
class HeadField {
  public:
    HeadField(const HeadFieldConfig& config, Rng& rng);

    const HeadFieldConfig& config() const { return config_; }
    fieldrepr::SpatialEncoder& encoder() { return encoder_; }
    const fieldrepr::SpatialEncoder& encoder() const { return encoder_; }
    bool has_attention() const { return config_.attention != AttentionMode::concat; }
    DenseStack& audio_attn() { return audio_attn_; }
    DenseStack& eye_attn() { return eye_attn_; }
    DenseStack& density_mlp() { return density_mlp_; }
    DenseStack& color_mlp() { return color_mlp_; }
    const DenseStack& audio_attn() const { return audio_attn_; }
    const DenseStack& eye_attn() const { return eye_attn_; }
    const DenseStack& density_mlp() const { return density_mlp_; }
    const DenseStack& color_mlp() const { return color_mlp_; }

    struct Output {
        Vec3 rgb;
        double sigma = 0.0;
    };

    struct Tape {
        Vec3 x, d;
        std::vector<double> a;
        double e = 0.0;
        bool zero_gates = false;
        std::vector<double> f;
        std::vector<double> v_a;  // channel: 32, feature: 1, concat: empty
        double v_e = 0.0;
        std::vector<double> a_r;
        double e_r = 0.0;
        std::vector<double> dir_enc;
        double sigma_pre = 0.0, sigma = 0.0;
        DenseStack::Tape audio_tape, eye_tape, density_tape, color_tape;
    };

    struct Grads {
        explicit Grads(const HeadField& hf);
        void zero();
        void accumulate(const Grads& o);
        fieldrepr::SpatialEncoder::Grads enc;
        DenseStack::Grads audio, eye, density, color;
    };

    /// x normalized to [0,1]^3, d unit direction, a 32-dim audio condition,
    /// e blink in [0,1]. force_zero_gates short-circuits both condition paths
    /// to exact zeros (bit-exact condition independence).
    Output forward(const Vec3& x, const Vec3& d, const double* a, double e, Tape* tape,
                   bool force_zero_gates = false) const;

    /// Adds dL/dx into *dx when non-null (conditions and d are data).
    void backward(const Tape& tape, const Vec3& d_rgb, double d_sigma, Grads& grads,
                  Vec3* dx) const;

    /// Density at x for a fixed condition, no tape. Used by occupancy updates.
    double density_only(const Vec3& x, const double* a, double e) const;

  private:
    HeadFieldConfig config_;
    fieldrepr::SpatialEncoder encoder_;
    DenseStack audio_attn_, eye_attn_, density_mlp_, color_mlp_;
};

inline constexpr double kSigmaPreClamp = 15.0;
double sigma_activation(double pre);
double sigma_activation_grad(double pre);

}  // namespace trifield::nets
