#include "trifield/headfield.hpp"

#include <cmath>
#include <stdexcept>

namespace trifield::nets {

int dir_encoding_dim(int octaves) { return 3 * octaves * 2; }

void encode_direction(const Vec3& d, int octaves, double* out) {
    int i = 0;
    for (int k = 0; k < 3; ++k) {
        double freq = 1.0;
        for (int j = 0; j < octaves; ++j) {
            out[i++] = std::sin(freq * d[k]);
            out[i++] = std::cos(freq * d[k]);
            freq *= 2.0;
        }
    }
}

double sigma_activation(double pre) { return std::exp(pre < kSigmaPreClamp ? pre : kSigmaPreClamp); }

double sigma_activation_grad(double pre) {
    return pre < kSigmaPreClamp ? sigma_activation(pre) : 0.0;
}

namespace {
void ensure_finite(const double* v, int n, const char* stage) {
    for (int i = 0; i < n; ++i)
        if (!std::isfinite(v[i]))
            throw std::runtime_error(std::string("head field: non-finite value after ") + stage);
}
}  // namespace

HeadField::HeadField(const HeadFieldConfig& config, Rng& rng)
    : config_(config),
      encoder_(config.backbone, config.grid, rng, config.equal_budget) {
    const int fdim = encoder_.feature_dim();
    const int a_out = config_.attention == AttentionMode::feature ? 1 : regionattn::kAudioDim;
    // attention branches exist in channel/feature modes; concat keeps
    // placeholders untouched by forward/backward but stable for serialization
    audio_attn_ = regionattn::make_attention_mlp(fdim, config_.audio_hidden, a_out, rng);
    eye_attn_ = regionattn::make_attention_mlp(fdim, config_.eye_hidden, 1, rng);
    const int density_in = fdim + regionattn::kAudioDim + 1;
    density_mlp_ = DenseStack({density_in, config_.density_hidden, config_.density_hidden,
                               1 + config_.latent_dim},
                              {Activation::relu, Activation::relu, Activation::none}, rng);
    const int color_in = config_.latent_dim + dir_encoding_dim(config_.dir_octaves);
    color_mlp_ = DenseStack({color_in, config_.color_hidden, 3},
                            {Activation::relu, Activation::sigmoid}, rng);
}

HeadField::Grads::Grads(const HeadField& hf)
    : enc(hf.encoder_),
      audio(hf.audio_attn_),
      eye(hf.eye_attn_),
      density(hf.density_mlp_),
      color(hf.color_mlp_) {}

void HeadField::Grads::zero() {
    enc.zero();
    audio.zero();
    eye.zero();
    density.zero();
    color.zero();
}

void HeadField::Grads::accumulate(const Grads& o) {
    enc.accumulate(o.enc);
    audio.accumulate(o.audio);
    eye.accumulate(o.eye);
    density.accumulate(o.density);
    color.accumulate(o.color);
}

HeadField::Output HeadField::forward(const Vec3& x, const Vec3& d, const double* a, double e,
                                     Tape* tape, bool force_zero_gates) const {
    const int fdim = encoder_.feature_dim();
    const int A = regionattn::kAudioDim;
    {
        double inputs[3] = {x.x + x.y + x.z, d.x + d.y + d.z, e};
        ensure_finite(inputs, 3, "input check (x, d, e)");
        ensure_finite(a, A, "input check (audio condition)");
    }
    std::vector<double> f(fdim);
    encoder_.encode(x, f.data());
    ensure_finite(f.data(), fdim, "spatial encoding");

    std::vector<double> v_a;
    double v_e = 0.0;
    std::vector<double> a_r(A, 0.0);
    double e_r = 0.0;
    DenseStack::Tape audio_tape, eye_tape;
    if (force_zero_gates) {
        // exact zeros regardless of conditions
    } else if (config_.attention == AttentionMode::concat) {
        for (int i = 0; i < A; ++i) a_r[i] = a[i];
        e_r = e;
    } else {
        v_a.resize(audio_attn_.output_dim());
        audio_attn_.forward(f.data(), v_a.data(), tape ? &audio_tape : nullptr);
        ensure_finite(v_a.data(), static_cast<int>(v_a.size()), "audio attention");
        if (config_.attention == AttentionMode::channel) {
            regionattn::reweight_audio(v_a.data(), a, a_r.data(), A);
        } else {
            regionattn::feature_wise_reweight(v_a[0], a, a_r.data(), A);
        }
        double ve_out;
        eye_attn_.forward(f.data(), &ve_out, tape ? &eye_tape : nullptr);
        v_e = ve_out;
        ensure_finite(&v_e, 1, "eye attention");
        e_r = regionattn::gate_eye(v_e, e);
    }

    std::vector<double> density_in(fdim + A + 1);
    std::copy(f.begin(), f.end(), density_in.begin());
    std::copy(a_r.begin(), a_r.end(), density_in.begin() + fdim);
    density_in[fdim + A] = e_r;
    std::vector<double> density_out(1 + config_.latent_dim);
    DenseStack::Tape density_tape;
    density_mlp_.forward(density_in.data(), density_out.data(), tape ? &density_tape : nullptr);
    ensure_finite(density_out.data(), static_cast<int>(density_out.size()), "density mlp");

    double sigma_pre = density_out[0];
    double sigma = sigma_activation(sigma_pre);

    std::vector<double> dir_enc(dir_encoding_dim(config_.dir_octaves));
    encode_direction(d, config_.dir_octaves, dir_enc.data());
    std::vector<double> color_in(config_.latent_dim + dir_enc.size());
    std::copy(density_out.begin() + 1, density_out.end(), color_in.begin());
    std::copy(dir_enc.begin(), dir_enc.end(), color_in.begin() + config_.latent_dim);
    double rgb[3];
    DenseStack::Tape color_tape;
    color_mlp_.forward(color_in.data(), rgb, tape ? &color_tape : nullptr);
    ensure_finite(rgb, 3, "color mlp");

    if (tape) {
        tape->x = x;
        tape->d = d;
        tape->a.assign(a, a + A);
        tape->e = e;
        tape->zero_gates = force_zero_gates;
        tape->f = std::move(f);
        tape->v_a = std::move(v_a);
        tape->v_e = v_e;
        tape->a_r = std::move(a_r);
        tape->e_r = e_r;
        tape->dir_enc = std::move(dir_enc);
        tape->sigma_pre = sigma_pre;
        tape->sigma = sigma;
        tape->audio_tape = std::move(audio_tape);
        tape->eye_tape = std::move(eye_tape);
        tape->density_tape = std::move(density_tape);
        tape->color_tape = std::move(color_tape);
    }
    return Output{{rgb[0], rgb[1], rgb[2]}, sigma};
}

void HeadField::backward(const Tape& tape, const Vec3& d_rgb, double d_sigma, Grads& grads,
                         Vec3* dx) const {
    const int fdim = encoder_.feature_dim();
    const int A = regionattn::kAudioDim;

    // color mlp
    double up_rgb[3] = {d_rgb.x, d_rgb.y, d_rgb.z};
    std::vector<double> d_color_in(config_.latent_dim + tape.dir_enc.size(), 0.0);
    color_mlp_.backward(tape.color_tape, up_rgb, grads.color, d_color_in.data());

    // density mlp: outputs [sigma_pre, latent]
    std::vector<double> up_density(1 + config_.latent_dim);
    up_density[0] = d_sigma * sigma_activation_grad(tape.sigma_pre);
    for (int i = 0; i < config_.latent_dim; ++i) up_density[1 + i] = d_color_in[i];
    std::vector<double> d_density_in(fdim + A + 1, 0.0);
    density_mlp_.backward(tape.density_tape, up_density.data(), grads.density,
                          d_density_in.data());

    std::vector<double> df(d_density_in.begin(), d_density_in.begin() + fdim);
    const double* d_ar = d_density_in.data() + fdim;
    double d_er = d_density_in[fdim + A];

    if (!tape.zero_gates && config_.attention != AttentionMode::concat) {
        if (config_.attention == AttentionMode::channel) {
            std::vector<double> dv(A, 0.0);
            regionattn::reweight_audio_backward(tape.v_a.data(), tape.a.data(), d_ar, dv.data(),
                                                nullptr, A);
            audio_attn_.backward(tape.audio_tape, dv.data(), grads.audio,
                                 config_.detach_attention ? nullptr : df.data());
        } else {
            double dv = 0.0;
            regionattn::feature_wise_reweight_backward(tape.v_a[0], tape.a.data(), d_ar, &dv,
                                                       nullptr, A);
            audio_attn_.backward(tape.audio_tape, &dv, grads.audio,
                                 config_.detach_attention ? nullptr : df.data());
        }
        auto eg = regionattn::gate_eye_backward(tape.v_e, tape.e, d_er);
        eye_attn_.backward(tape.eye_tape, &eg.dv_e, grads.eye,
                           config_.detach_attention ? nullptr : df.data());
    }

    encoder_.encode_backward(tape.x, df.data(), grads.enc, dx);
}

double HeadField::density_only(const Vec3& x, const double* a, double e) const {
    Output out = forward(x, Vec3{0.0, 0.0, 1.0}, a, e, nullptr);
    return out.sigma;
}

}  // namespace trifield::nets
