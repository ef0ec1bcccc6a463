#pragma once

#include <random>
#include <span>

#include "pico/numerics/autodiff.hpp"

namespace pico {

/// Heavy-ball SGD: v ← m·v + g; w ← w − lr·v; g ← 0.
/// Throws NumericError (leaving every parameter untouched) on a non-finite gradient.
void sgd_momentum_step(std::span<Parameter* const> params, double lr, double momentum);

/// base_lr · ½(1 + cos(π·epoch/total_epochs)).
double cosine_lr(int epoch, int total_epochs, double base_lr);

/// Fills a [fan_in × fan_out] weight uniformly in ±1/√fan_in.
Tensor uniform_init(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace pico
