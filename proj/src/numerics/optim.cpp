#include "pico/numerics/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pico {

void sgd_momentum_step(std::span<Parameter* const> params, double lr, double momentum) {
    if (!(lr > 0.0)) throw std::invalid_argument("sgd: learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("sgd: momentum must lie in [0,1)");
    for (const Parameter* p : params) {
        if (!p->grad.all_finite()) throw NumericError("non-finite gradient in parameter " + p->name);
    }
    for (Parameter* p : params) {
        if (p->momentum_buffer.size() != p->value.size()) p->momentum_buffer = Tensor(p->value.shape());
        if (p->grad.size() != p->value.size()) p->grad = Tensor(p->value.shape());
        auto& v = p->momentum_buffer.values();
        auto& w = p->value.values();
        auto& g = p->grad.values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = momentum * v[i] + g[i];
            w[i] -= lr * v[i];
            g[i] = 0.0;
        }
    }
}

double cosine_lr(int epoch, int total_epochs, double base_lr) {
    if (epoch < 0 || epoch > total_epochs) throw std::invalid_argument("cosine_lr: epoch outside [0, total]");
    if (total_epochs == 0) return base_lr;
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / total_epochs));
}

Tensor uniform_init(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor w = Tensor::zeros(fan_in, fan_out);
    for (double& v : w.values()) v = dist(rng);
    return w;
}

}  // namespace pico
