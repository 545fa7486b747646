#include "trifield/dense.hpp"

#include <cmath>
#include <stdexcept>

#include "trifield/math.hpp"

namespace trifield::nets {

double apply_activation(Activation act, double z) {
    switch (act) {
        case Activation::none: return z;
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::sigmoid: return sigmoid(z);
    }
    throw std::logic_error("unknown activation");
}

double activation_grad(Activation act, double z) {
    switch (act) {
        case Activation::none: return 1.0;
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::sigmoid: {
            double s = sigmoid(z);
            return s * (1.0 - s);
        }
    }
    throw std::logic_error("unknown activation");
}

DenseStack::DenseStack(const std::vector<int>& dims, const std::vector<Activation>& acts,
                       Rng& rng) {
    if (dims.size() < 2 || acts.size() != dims.size() - 1)
        throw std::invalid_argument("DenseStack: need dims.size()-1 activations");
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        if (dims[l] < 1 || dims[l + 1] < 1) throw std::invalid_argument("DenseStack: bad dims");
        Layer layer;
        layer.in = dims[l];
        layer.out = dims[l + 1];
        layer.act = acts[l];
        layer.w_off = total;
        total += static_cast<std::size_t>(layer.in) * layer.out;
        layer.b_off = total;
        total += layer.out;
        layers_.push_back(layer);
    }
    params_.assign(total, 0.0);
    // Kaiming-style uniform fan-in init; biases start at zero.
    for (const Layer& l : layers_) {
        double bound = std::sqrt(6.0 / l.in);
        for (std::size_t i = 0; i < static_cast<std::size_t>(l.in) * l.out; ++i)
            params_[l.w_off + i] = rng.uniform(-bound, bound);
    }
}

void DenseStack::Grads::accumulate(const Grads& o) {
    if (o.g.size() != g.size()) throw std::invalid_argument("DenseStack::Grads: shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.g[i];
}

void DenseStack::forward(const double* x, double* y, Tape* tape) const {
    if (layers_.empty()) throw std::logic_error("DenseStack: empty");
    if (tape) {
        tape->x.assign(layers_.size(), {});
        tape->z.assign(layers_.size(), {});
    }
    std::vector<double> cur(x, x + layers_.front().in);
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        const Layer& l = layers_[li];
        if (tape) tape->x[li] = cur;
        std::vector<double> z(l.out);
        const double* W = params_.data() + l.w_off;
        const double* b = params_.data() + l.b_off;
        for (int o = 0; o < l.out; ++o) z[o] = b[o];
        for (int i = 0; i < l.in; ++i) {
            double xi = cur[i];
            const double* row = W + static_cast<std::size_t>(i) * l.out;
            for (int o = 0; o < l.out; ++o) z[o] += xi * row[o];
        }
        if (tape) tape->z[li] = z;
        cur.resize(l.out);
        for (int o = 0; o < l.out; ++o) cur[o] = apply_activation(l.act, z[o]);
    }
    for (int o = 0; o < layers_.back().out; ++o) y[o] = cur[o];
}

std::vector<double> DenseStack::forward(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != input_dim())
        throw std::invalid_argument("DenseStack: input dim mismatch");
    std::vector<double> y(output_dim());
    forward(x.data(), y.data(), nullptr);
    return y;
}

void DenseStack::backward(const Tape& tape, const double* upstream, Grads& grads,
                          double* dx) const {
    if (tape.x.size() != layers_.size()) throw std::invalid_argument("DenseStack: stale tape");
    if (grads.g.size() != params_.size()) throw std::invalid_argument("DenseStack: bad grads");
    std::vector<double> dy(upstream, upstream + layers_.back().out);
    for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
        const Layer& l = layers_[static_cast<std::size_t>(li)];
        const auto& z = tape.z[static_cast<std::size_t>(li)];
        const auto& xin = tape.x[static_cast<std::size_t>(li)];
        // dz = dy * act'(z)
        std::vector<double> dz(l.out);
        for (int o = 0; o < l.out; ++o) dz[o] = dy[o] * activation_grad(l.act, z[o]);
        double* gW = grads.g.data() + l.w_off;
        double* gb = grads.g.data() + l.b_off;
        for (int o = 0; o < l.out; ++o) gb[o] += dz[o];
        std::vector<double> dxin(l.in, 0.0);
        const double* W = params_.data() + l.w_off;
        for (int i = 0; i < l.in; ++i) {
            const double* row = W + static_cast<std::size_t>(i) * l.out;
            double* grow = gW + static_cast<std::size_t>(i) * l.out;
            double acc = 0.0;
            for (int o = 0; o < l.out; ++o) {
                grow[o] += xin[i] * dz[o];
                acc += row[o] * dz[o];
            }
            dxin[i] = acc;
        }
        dy = std::move(dxin);
    }
    if (dx)
        for (int i = 0; i < layers_.front().in; ++i) dx[i] += dy[i];
}

double DenseStack::weight(int layer, int i, int o) const {
    const Layer& l = layers_.at(layer);
    return params_[l.w_off + static_cast<std::size_t>(i) * l.out + o];
}

void DenseStack::set_weight(int layer, int i, int o, double v) {
    const Layer& l = layers_.at(layer);
    params_[l.w_off + static_cast<std::size_t>(i) * l.out + o] = v;
}

double DenseStack::bias(int layer, int o) const {
    const Layer& l = layers_.at(layer);
    return params_[l.b_off + o];
}

void DenseStack::set_bias(int layer, int o, double v) {
    const Layer& l = layers_.at(layer);
    params_[l.b_off + o] = v;
}

}  // namespace trifield::nets
