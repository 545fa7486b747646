#pragma once

#include <array>
#include <cstddef>

#include "trifield/dense.hpp"

namespace trifield::regionattn {

inline constexpr int kAudioDim = 32;

/// Per-frame processed audio feature.
struct AudioCondition {
    std::array<double, kAudioDim> a{};
    void validate() const;
};

/// Blink degree in [0,1] (AU45-style).
struct EyeCondition {
    double e = 0.0;
    void validate() const;
};

/// Two-layer attention MLP v = W2^T relu(W1^T f + b1) + b2, expressed as a
/// DenseStack {in, hidden, out} with {relu, none}.
nets::DenseStack make_attention_mlp(int in_dim, int hidden, int out_dim, Rng& rng);

/// a_r = v_a (elementwise) a
void reweight_audio(const double* v_a, const double* a, double* a_r, int n);
/// dL/dv += up*a, dL/da += up*v (either output may be null)
void reweight_audio_backward(const double* v_a, const double* a, const double* upstream,
                             double* dv, double* da, int n);

/// e_r = e * sigmoid(v_e)
double gate_eye(double v_e, double e);
struct GateEyeGrads {
    double dv_e = 0.0;
    double de = 0.0;
};
GateEyeGrads gate_eye_backward(double v_e, double e, double upstream);

/// Ablation: a_r = v * a with a single scalar attention value.
void feature_wise_reweight(double v, const double* a, double* a_r, int n);
void feature_wise_reweight_backward(double v, const double* a, const double* upstream,
                                    double* dv, double* da, int n);

}  // namespace trifield::regionattn
