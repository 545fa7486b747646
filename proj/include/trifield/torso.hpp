#pragma once

#include <array>
#include <stdexcept>

#include "trifield/dense.hpp"
#include "trifield/geom.hpp"
#include "trifield/hashenc.hpp"

namespace trifield::nets {

/// Three trainable anchor points in canonical space (homogeneous coordinate
/// fixed at 1) plus the projection scale gamma.
struct KeyPoints {
    std::array<Vec3, 3> pts{Vec3{0.0, -0.5, 0.3}, Vec3{-0.2, -0.6, 0.3}, Vec3{0.2, -0.6, 0.3}};
    double gamma = 1.0;
};

/// Raised when a transformed key point lands too close to the projection
/// plane; the training loop skips such frames.
struct DegeneratePoseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Key points seen from the pose: X_hat = P^-1 X, then perspective-divided
/// onto the z=1 plane and scaled, bar(i,j) = gamma * X_hat(i,j) / z_hat(j).
struct PoseEncoding {
    std::array<Vec2, 3> bar;
};

struct PoseEncodingTape {
    std::array<Vec3, 3> xhat;
};

inline constexpr double kMinKeyDepth = 1e-4;

PoseEncoding adaptive_pose_encoding(const KeyPoints& keys, const HeadPose& pose,
                                    PoseEncodingTape* tape = nullptr);

struct KeyPointGrads {
    std::array<Vec3, 3> d_pts{};
    double d_gamma = 0.0;
    void zero();
    void accumulate(const KeyPointGrads& o);
};

void adaptive_pose_encoding_backward(const KeyPoints& keys, const HeadPose& pose,
                                     const PoseEncodingTape& tape,
                                     const std::array<Vec2, 3>& upstream, KeyPointGrads& grads);

struct TorsoFieldConfig {
    hashenc::HashGridConfig tex_grid;  // forced to 2D
    int deform_hidden = 32;
    int head_hidden = 64;

    TorsoFieldConfig() {
        tex_grid.levels = 8;
        tex_grid.features = 1;
        tex_grid.table_size_log2 = 14;
        tex_grid.res_min = 16;
        tex_grid.res_max = 256;
        tex_grid.dims = 2;
    }
};

/// 2D pose-conditioned field over the image plane: a deformation MLP moves
/// the pixel coordinate by the pose encoding, a hashed texture grid plus a
/// small decoder produce color and coverage alpha.
class TorsoField {
  public:
    TorsoField(const TorsoFieldConfig& config, Rng& rng);

    const TorsoFieldConfig& config() const { return config_; }
    KeyPoints& keys() { return keys_; }
    const KeyPoints& keys() const { return keys_; }
    DenseStack& deform_mlp() { return deform_mlp_; }
    hashenc::HashGrid& tex_grid() { return tex_grid_; }
    DenseStack& head_mlp() { return head_mlp_; }
    const DenseStack& deform_mlp() const { return deform_mlp_; }
    const hashenc::HashGrid& tex_grid() const { return tex_grid_; }
    const DenseStack& head_mlp() const { return head_mlp_; }

    struct Output {
        Vec3 color;
        double alpha = 0.0;
        bool clamped = false;
    };

    struct Tape {
        Vec2 x_pixel;
        PoseEncoding enc;
        Vec2 deformed;
        bool clamp_x = false, clamp_y = false;
        std::vector<double> tex;
        DenseStack::Tape deform_tape, head_tape;
    };

    struct Grads {
        explicit Grads(const TorsoField& tf);
        void zero();
        void accumulate(const Grads& o);
        DenseStack::Grads deform;
        hashenc::GradBuffer tex;
        DenseStack::Grads head;
        KeyPointGrads keys;  // filled by the per-frame pose-encoding backward
    };

    /// x_pixel in [0,1]^2. The deformed coordinate is valid on [-0.5,1.5]^2;
    /// beyond that it clamps and flags.
    Output forward(const Vec2& x_pixel, const PoseEncoding& enc, Tape* tape) const;

    /// Maps a deformed coordinate into the texture grid's unit square.
    static Vec2 tex_coords(const Vec2& deformed) {
        return Vec2{(deformed.x + 0.5) * 0.5, (deformed.y + 0.5) * 0.5};
    }

    /// Adds dL/d(pose encoding) into *d_enc when non-null; the caller folds
    /// those into key-point grads once per frame.
    void backward(const Tape& tape, const Vec3& d_color, double d_alpha, Grads& grads,
                  std::array<Vec2, 3>* d_enc) const;

  private:
    TorsoFieldConfig config_;
    KeyPoints keys_;
    DenseStack deform_mlp_;
    hashenc::HashGrid tex_grid_;
    DenseStack head_mlp_;
};

}  // namespace trifield::nets
