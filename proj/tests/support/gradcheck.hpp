#pragma once

// Central finite-difference checks for tape-recorded functions.

#include <algorithm>
#include <cmath>
#include <functional>

#include "pico/numerics/autodiff.hpp"

namespace pico::testing {

// Builds a scalar from one differentiable input on a fresh tape.
using ScalarFn = std::function<ad::Var(ad::Tape&, ad::Var)>;

inline double eval_scalar(const ScalarFn& f, const Tensor& x) {
    ad::Tape tape;
    Parameter p("x", x);
    const ad::Var out = f(tape, tape.parameter(p));
    return tape.value(out)[0];
}

inline Tensor analytic_grad(const ScalarFn& f, const Tensor& x) {
    ad::Tape tape;
    Parameter p("x", x);
    p.zero_grad();
    const ad::Var out = f(tape, tape.parameter(p));
    tape.backward(out);
    return p.grad;
}

inline Tensor numeric_grad(const ScalarFn& f, const Tensor& x, double h = 1e-6) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor plus = x, minus = x;
        plus[i] += h;
        minus[i] -= h;
        g[i] = (eval_scalar(f, plus) - eval_scalar(f, minus)) / (2.0 * h);
    }
    return g;
}

// max_i |a_i − n_i| / max(|a_i|, |n_i|, floor)
inline double relative_error(const Tensor& a, const Tensor& n, double floor = 1e-3) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max({std::abs(a[i]), std::abs(n[i]), floor});
        worst = std::max(worst, std::abs(a[i] - n[i]) / scale);
    }
    return worst;
}

inline double gradient_error(const ScalarFn& f, const Tensor& x, double h = 1e-6) {
    return relative_error(analytic_grad(f, x), numeric_grad(f, x, h));
}

}  // namespace pico::testing
