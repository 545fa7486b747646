#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "trifield/rng.hpp"

namespace trifield::nets {

enum class Activation { none, relu, sigmoid };

/// Fully-connected stack y = act(W^T x + b) per layer. All parameters live in
/// one flat vector (layer order: W then b) so optimizers and checkpoints can
/// treat the stack as a single block. W is stored in-major: W[i*out + o], and
/// applied as y_o = sum_i W[i*out+o] x_i + b_o.
class DenseStack {
  public:
    DenseStack() = default;
    /// dims: {in, h1, ..., out}; acts: one per layer.
    DenseStack(const std::vector<int>& dims, const std::vector<Activation>& acts, Rng& rng);

    int input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
    int output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }
    int layer_count() const { return static_cast<int>(layers_.size()); }
    std::size_t param_count() const { return params_.size(); }

    std::vector<double>& raw_params() { return params_; }
    const std::vector<double>& raw_params() const { return params_; }

    /// Cached intermediates for one forward call, consumed by backward.
    struct Tape {
        std::vector<std::vector<double>> x;  // input of each layer
        std::vector<std::vector<double>> z;  // pre-activation of each layer
    };

    /// Gradient block aligned with raw_params().
    struct Grads {
        explicit Grads(const DenseStack& s) : g(s.param_count(), 0.0) {}
        void zero() { std::fill(g.begin(), g.end(), 0.0); }
        void accumulate(const Grads& o);
        std::vector<double> g;
    };

    /// y must hold output_dim() values. tape may be null when no backward pass
    /// will follow.
    void forward(const double* x, double* y, Tape* tape) const;
    std::vector<double> forward(const std::vector<double>& x) const;

    /// Accumulates parameter grads into grads and, when dx is non-null, adds
    /// dL/dx into dx[0..input_dim()).
    void backward(const Tape& tape, const double* upstream, Grads& grads, double* dx) const;

    /// Weight entry accessors for hand-built test networks.
    double weight(int layer, int i, int o) const;
    void set_weight(int layer, int i, int o, double v);
    double bias(int layer, int o) const;
    void set_bias(int layer, int o, double v);

  private:
    struct Layer {
        int in = 0, out = 0;
        Activation act = Activation::none;
        std::size_t w_off = 0, b_off = 0;
    };
    std::vector<Layer> layers_;
    std::vector<double> params_;
};

double apply_activation(Activation act, double z);
double activation_grad(Activation act, double z);

}  // namespace trifield::nets
