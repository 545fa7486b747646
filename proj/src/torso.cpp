#include "trifield/torso.hpp"

#include <algorithm>
#include <cmath>

#include "trifield/math.hpp"

namespace trifield::nets {

PoseEncoding adaptive_pose_encoding(const KeyPoints& keys, const HeadPose& pose,
                                    PoseEncodingTape* tape) {
    PoseEncoding out;
    for (int j = 0; j < 3; ++j) {
        Vec3 xhat = pose.apply_inverse(keys.pts[j]);
        if (std::abs(xhat.z) <= kMinKeyDepth)
            throw DegeneratePoseError("adaptive pose encoding: key point depth too small");
        out.bar[j] = Vec2{keys.gamma * xhat.x / xhat.z, keys.gamma * xhat.y / xhat.z};
        if (tape) tape->xhat[j] = xhat;
    }
    return out;
}

void KeyPointGrads::zero() {
    for (auto& v : d_pts) v = Vec3{};
    d_gamma = 0.0;
}

void KeyPointGrads::accumulate(const KeyPointGrads& o) {
    for (int j = 0; j < 3; ++j) d_pts[j] += o.d_pts[j];
    d_gamma += o.d_gamma;
}

void adaptive_pose_encoding_backward(const KeyPoints& keys, const HeadPose& pose,
                                     const PoseEncodingTape& tape,
                                     const std::array<Vec2, 3>& upstream, KeyPointGrads& grads) {
    for (int j = 0; j < 3; ++j) {
        const Vec3& xh = tape.xhat[j];
        double inv_z = 1.0 / xh.z;
        double g = keys.gamma;
        // bar = g * xh.xy / xh.z
        grads.d_gamma += upstream[j].x * xh.x * inv_z + upstream[j].y * xh.y * inv_z;
        Vec3 d_xhat{upstream[j].x * g * inv_z, upstream[j].y * g * inv_z,
                    -(upstream[j].x * xh.x + upstream[j].y * xh.y) * g * inv_z * inv_z};
        // xhat = R^T (pt - t), so d pt = R d_xhat
        grads.d_pts[j] += pose.R * d_xhat;
    }
}

TorsoField::TorsoField(const TorsoFieldConfig& config, Rng& rng)
    : config_(config),
      deform_mlp_({2 + 6, config.deform_hidden, config.deform_hidden, 2},
                  {Activation::relu, Activation::relu, Activation::none}, rng),
      tex_grid_([&config] {
          hashenc::HashGridConfig g = config.tex_grid;
          g.dims = 2;
          return g;
      }(), rng),
      head_mlp_({config.tex_grid.levels * config.tex_grid.features, config.head_hidden, 4},
                {Activation::relu, Activation::sigmoid}, rng) {}

namespace {
// the texture grid spans the extended deformation range [-0.5, 1.5]^2
inline constexpr double kDeformLo = -0.5, kDeformHi = 1.5;
}  // namespace

TorsoField::Output TorsoField::forward(const Vec2& x_pixel, const PoseEncoding& enc,
                                       Tape* tape) const {
    double deform_in[8] = {x_pixel.x,    x_pixel.y,    enc.bar[0].x, enc.bar[0].y,
                           enc.bar[1].x, enc.bar[1].y, enc.bar[2].x, enc.bar[2].y};
    double delta[2];
    DenseStack::Tape deform_tape;
    deform_mlp_.forward(deform_in, delta, tape ? &deform_tape : nullptr);

    Output out;
    Vec2 deformed{x_pixel.x + delta[0], x_pixel.y + delta[1]};
    bool clamp_x = deformed.x < kDeformLo || deformed.x > kDeformHi;
    bool clamp_y = deformed.y < kDeformLo || deformed.y > kDeformHi;
    if (clamp_x) deformed.x = std::clamp(deformed.x, kDeformLo, kDeformHi);
    if (clamp_y) deformed.y = std::clamp(deformed.y, kDeformLo, kDeformHi);
    out.clamped = clamp_x || clamp_y;

    Vec2 tc = tex_coords(deformed);
    double uv[2] = {tc.x, tc.y};
    std::vector<double> tex(tex_grid_.config().feature_dim());
    tex_grid_.encode(uv, tex.data());

    double head_out[4];
    DenseStack::Tape head_tape;
    head_mlp_.forward(tex.data(), head_out, tape ? &head_tape : nullptr);
    out.color = Vec3{head_out[0], head_out[1], head_out[2]};
    out.alpha = head_out[3];

    if (tape) {
        tape->x_pixel = x_pixel;
        tape->enc = enc;
        tape->deformed = deformed;
        tape->clamp_x = clamp_x;
        tape->clamp_y = clamp_y;
        tape->tex = std::move(tex);
        tape->deform_tape = std::move(deform_tape);
        tape->head_tape = std::move(head_tape);
    }
    return out;
}

TorsoField::Grads::Grads(const TorsoField& tf)
    : deform(tf.deform_mlp_), tex(tf.tex_grid_), head(tf.head_mlp_) {}

void TorsoField::Grads::zero() {
    deform.zero();
    tex.zero();
    head.zero();
    keys.zero();
}

void TorsoField::Grads::accumulate(const Grads& o) {
    deform.accumulate(o.deform);
    tex.accumulate(o.tex);
    head.accumulate(o.head);
    keys.accumulate(o.keys);
}

void TorsoField::backward(const Tape& tape, const Vec3& d_color, double d_alpha, Grads& grads,
                          std::array<Vec2, 3>* d_enc) const {
    double up_head[4] = {d_color.x, d_color.y, d_color.z, d_alpha};
    std::vector<double> d_tex(tape.tex.size(), 0.0);
    head_mlp_.backward(tape.head_tape, up_head, grads.head, d_tex.data());

    Vec2 tc = tex_coords(tape.deformed);
    double uv[2] = {tc.x, tc.y};
    double duv[2] = {0.0, 0.0};
    tex_grid_.encode_backward(uv, d_tex.data(), grads.tex, duv);

    // d(deformed) through the tex-coord remap; clamped axes block gradient
    double d_deformed[2] = {duv[0] * 0.5, duv[1] * 0.5};
    if (tape.clamp_x) d_deformed[0] = 0.0;
    if (tape.clamp_y) d_deformed[1] = 0.0;

    // deformed = x_pixel + delta, so d(delta) = d(deformed)
    double d_in[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    deform_mlp_.backward(tape.deform_tape, d_deformed, grads.deform, d_in);
    if (d_enc) {
        (*d_enc)[0] += Vec2{d_in[2], d_in[3]};
        (*d_enc)[1] += Vec2{d_in[4], d_in[5]};
        (*d_enc)[2] += Vec2{d_in[6], d_in[7]};
    }
}

}  // namespace trifield::nets
