#include "trifield/regionattn.hpp"

#include <cmath>
#include <stdexcept>

#include "trifield/math.hpp"

namespace trifield::regionattn {

void AudioCondition::validate() const {
    for (double v : a)
        if (!std::isfinite(v)) throw std::invalid_argument("AudioCondition: non-finite entry");
}

void EyeCondition::validate() const {
    if (!(e >= 0.0 && e <= 1.0)) throw std::invalid_argument("EyeCondition: e must be in [0,1]");
}

nets::DenseStack make_attention_mlp(int in_dim, int hidden, int out_dim, Rng& rng) {
    return nets::DenseStack({in_dim, hidden, out_dim},
                            {nets::Activation::relu, nets::Activation::none}, rng);
}

void reweight_audio(const double* v_a, const double* a, double* a_r, int n) {
    for (int i = 0; i < n; ++i) a_r[i] = v_a[i] * a[i];
}

void reweight_audio_backward(const double* v_a, const double* a, const double* upstream,
                             double* dv, double* da, int n) {
    for (int i = 0; i < n; ++i) {
        if (dv) dv[i] += upstream[i] * a[i];
        if (da) da[i] += upstream[i] * v_a[i];
    }
}

double gate_eye(double v_e, double e) { return e * sigmoid(v_e); }

GateEyeGrads gate_eye_backward(double v_e, double e, double upstream) {
    double s = sigmoid(v_e);
    return {upstream * e * s * (1.0 - s), upstream * s};
}

void feature_wise_reweight(double v, const double* a, double* a_r, int n) {
    for (int i = 0; i < n; ++i) a_r[i] = v * a[i];
}

void feature_wise_reweight_backward(double v, const double* a, const double* upstream,
                                    double* dv, double* da, int n) {
    for (int i = 0; i < n; ++i) {
        if (dv) *dv += upstream[i] * a[i];
        if (da) da[i] += upstream[i] * v;
    }
}

}  // namespace trifield::regionattn
