#include "trifield/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <tuple>

namespace trifield::optim {

AdamW::AdamW(std::size_t n, const AdamWConfig& cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

bool AdamW::step(std::vector<double>& params, const std::vector<double>& grads, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw std::invalid_argument("AdamW::step: size mismatch");
    for (double g : grads)
        if (!std::isfinite(g)) {
            ++skipped_;
            return false;
        }
    ++t_;
    double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double g = grads[i];
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
        double mhat = m_[i] / c1;
        double vhat = v_[i] / c2;
        params[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * params[i]);
    }
    return true;
}

double coarse_loss(const std::vector<Vec3>& pred, const std::vector<Vec3>& target) {
    if (pred.size() != target.size() || pred.empty())
        throw std::invalid_argument("coarse_loss: ray counts differ or are empty");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        Vec3 d = pred[i] - target[i];
        sum += dot(d, d);
    }
    return sum / static_cast<double>(pred.size());
}

namespace {

/// Gaussian-derivative-along-x filter, antisymmetric in x so taps sum to zero.
std::vector<double> gaussian_dx(int size, double sigma) {
    std::vector<double> taps(static_cast<std::size_t>(size) * size);
    int h = size / 2;
    for (int y = -h; y <= h; ++y)
        for (int x = -h; x <= h; ++x)
            taps[static_cast<std::size_t>((y + h) * size + (x + h))] =
                -(x / (sigma * sigma)) * std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
    return taps;
}

std::vector<double> transpose_taps(const std::vector<double>& taps, int size) {
    std::vector<double> out(taps.size());
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            out[static_cast<std::size_t>(y * size + x)] =
                taps[static_cast<std::size_t>(x * size + y)];
    return out;
}

}  // namespace

PerceptualMetric::PerceptualMetric() {
    Filter sx;
    sx.size = 3;
    sx.taps = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
    sx.weight = 1.0;
    Filter sy = sx;
    sy.taps = transpose_taps(sx.taps, 3);
    filters_.push_back(sx);
    filters_.push_back(sy);
    for (auto [size, sigma, weight] : {std::tuple{5, 1.0, 0.5}, std::tuple{9, 2.0, 0.25}}) {
        Filter gx;
        gx.size = size;
        gx.taps = gaussian_dx(size, sigma);
        gx.weight = weight;
        Filter gy = gx;
        gy.taps = transpose_taps(gx.taps, size);
        filters_.push_back(gx);
        filters_.push_back(gy);
    }
}

double PerceptualMetric::distance(const FrameBuffer& a, const FrameBuffer& b) const {
    if (a.width() != b.width() || a.height() != b.height())
        throw std::invalid_argument("PerceptualMetric: size mismatch");
    double total = 0.0;
    for (const auto& f : filters_) {
        int ow = a.width() - f.size + 1, oh = a.height() - f.size + 1;
        if (ow <= 0 || oh <= 0) continue;
        double sum = 0.0;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                Vec3 acc{};
                for (int ky = 0; ky < f.size; ++ky)
                    for (int kx = 0; kx < f.size; ++kx) {
                        double t = f.taps[static_cast<std::size_t>(ky * f.size + kx)];
                        if (t == 0.0) continue;
                        acc += t * (a.at(ox + kx, oy + ky) - b.at(ox + kx, oy + ky));
                    }
                sum += dot(acc, acc);
            }
        total += f.weight * sum / (3.0 * ow * oh);
    }
    return total;
}

void PerceptualMetric::distance_backward(const FrameBuffer& a, const FrameBuffer& b,
                                         double upstream, std::vector<Vec3>& da) const {
    if (a.width() != b.width() || a.height() != b.height())
        throw std::invalid_argument("PerceptualMetric: size mismatch");
    da.resize(a.pixels().size());
    for (const auto& f : filters_) {
        int ow = a.width() - f.size + 1, oh = a.height() - f.size + 1;
        if (ow <= 0 || oh <= 0) continue;
        double scale = upstream * f.weight * 2.0 / (3.0 * ow * oh);
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                Vec3 acc{};
                for (int ky = 0; ky < f.size; ++ky)
                    for (int kx = 0; kx < f.size; ++kx) {
                        double t = f.taps[static_cast<std::size_t>(ky * f.size + kx)];
                        if (t == 0.0) continue;
                        acc += t * (a.at(ox + kx, oy + ky) - b.at(ox + kx, oy + ky));
                    }
                acc = scale * acc;
                for (int ky = 0; ky < f.size; ++ky)
                    for (int kx = 0; kx < f.size; ++kx) {
                        double t = f.taps[static_cast<std::size_t>(ky * f.size + kx)];
                        if (t == 0.0) continue;
                        da[static_cast<std::size_t>(oy + ky) * a.width() + (ox + kx)] += t * acc;
                    }
            }
    }
}

double fine_loss(const FrameBuffer& pred, const FrameBuffer& target, double lambda,
                 const PerceptualMetric& pm) {
    double mse = image_mse(pred, target) * 3.0;  // per-pixel summed-channel error
    if (lambda == 0.0) return mse;
    return mse + lambda * pm.distance(pred, target);
}

void fine_loss_backward(const FrameBuffer& pred, const FrameBuffer& target, double lambda,
                        const PerceptualMetric& pm, std::vector<Vec3>& d_pred) {
    d_pred.resize(pred.pixels().size());
    double inv = 2.0 / static_cast<double>(pred.pixels().size());
    for (std::size_t i = 0; i < d_pred.size(); ++i)
        d_pred[i] += inv * (pred.pixels()[i] - target.pixels()[i]);
    if (lambda != 0.0) pm.distance_backward(pred, target, lambda, d_pred);
}

}  // namespace trifield::optim
