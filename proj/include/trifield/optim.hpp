#pragma once

#include <cstdint>
#include <vector>

#include "trifield/image.hpp"

namespace trifield::optim {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay over one flat parameter vector.
/// p -= lr * (mhat / (sqrt(vhat) + eps) + decay * p), bias-corrected moments.
class AdamW {
  public:
    AdamW(std::size_t n, const AdamWConfig& cfg = {});

    /// Returns false (and counts a skip) when any gradient is non-finite;
    /// params are untouched in that case.
    bool step(std::vector<double>& params, const std::vector<double>& grads, double lr);

    std::uint64_t steps() const { return t_; }
    std::uint64_t skipped() const { return skipped_; }

  private:
    AdamWConfig cfg_;
    std::vector<double> m_, v_;
    std::uint64_t t_ = 0, skipped_ = 0;
};

/// Mean over rays of the summed squared channel error.
double coarse_loss(const std::vector<Vec3>& pred, const std::vector<Vec3>& target);

/// Fixed zero-DC filter bank standing in for a learned perceptual metric:
/// Sobel pair plus Gaussian-derivative pairs at two scales, valid convolution,
/// per-scale weights. distance(a,a) = 0, symmetric, nonnegative, and blind to
/// constant shifts.
class PerceptualMetric {
  public:
    PerceptualMetric();

    double distance(const FrameBuffer& a, const FrameBuffer& b) const;
    /// Accumulates upstream * d distance / d a into da (sized like a).
    void distance_backward(const FrameBuffer& a, const FrameBuffer& b, double upstream,
                           std::vector<Vec3>& da) const;

  private:
    struct Filter {
        int size = 0;
        std::vector<double> taps;
        double weight = 1.0;
    };
    std::vector<Filter> filters_;
};

/// Patch MSE plus lambda times the perceptual distance.
double fine_loss(const FrameBuffer& pred, const FrameBuffer& target, double lambda,
                 const PerceptualMetric& pm);

/// d fine_loss / d pred, accumulated into d_pred (sized like pred.pixels()).
void fine_loss_backward(const FrameBuffer& pred, const FrameBuffer& target, double lambda,
                        const PerceptualMetric& pm, std::vector<Vec3>& d_pred);

}  // namespace trifield::optim
