#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "../support/gradcheck.hpp"
#include "pico/numerics/kernels.hpp"
#include "pico/numerics/optim.hpp"

using namespace pico;
using pico::testing::gradient_error;
using pico::testing::ScalarFn;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n01(0.0, scale);
    Tensor t = Tensor::zeros(r, c);
    for (double& v : t.values()) v = n01(rng);
    return t;
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor c = Tensor::zeros(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j)
            for (std::size_t k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
    return c;
}

}  // namespace

TEST_CASE("tensor shapes and access") {
    Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m(1, 2) == 6);
    CHECK(m.row(1)[0] == 4);
    Tensor v = Tensor::vector({1, 2});
    CHECK(v.rows() == 1);
    CHECK(v.cols() == 2);
    CHECK(dot(m.row(0), m.row(1)) == 32);
    CHECK(norm2(Tensor::vector({3, 4}).row(0)) == 5);
    m(0, 0) = NAN;
    CHECK_FALSE(m.all_finite());
    CHECK_THROWS_AS(m.require_finite("here"), NumericError);
}

TEST_CASE("serial and parallel kernels agree bit for bit") {
    std::mt19937_64 rng(3);
    for (auto [n, k, m] : {std::tuple{3, 4, 2}, std::tuple{64, 48, 40}, std::tuple{200, 33, 70}}) {
        const Tensor a = random_tensor(n, k, rng);
        const Tensor b = random_tensor(k, m, rng);
        const Tensor bt = random_tensor(m, k, rng);
        const Tensor at = random_tensor(k, n, rng);
        CHECK(kernels::serial::matmul(a, b) == kernels::parallel::matmul(a, b));
        CHECK(kernels::serial::matmul_bt(a, bt) == kernels::parallel::matmul_bt(a, bt));
        CHECK(kernels::serial::matmul_at(at, b) == kernels::parallel::matmul_at(at, b));
    }
}

TEST_CASE("matmul matches a triple loop") {
    std::mt19937_64 rng(5);
    const Tensor a = random_tensor(3, 4, rng);
    const Tensor b = random_tensor(4, 2, rng);
    const Tensor want = naive_matmul(a, b);
    const Tensor got = kernels::matmul(a, b);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-14));
    CHECK_THROWS_AS(kernels::matmul(a, a), ShapeError);
}

TEST_CASE("affine") {
    ad::Tape t;
    auto y = ad::affine(t, t.constant(Tensor::matrix({{1, 0}})), t.constant(Tensor::matrix({{2, 0}, {0, 3}})),
                        t.constant(Tensor::vector({0, 0})));
    CHECK(t.value(y) == Tensor::matrix({{2, 0}}));
    auto z = ad::affine(t, t.constant(Tensor::matrix({{0, 0}})), t.constant(Tensor::matrix({{5, 6}, {7, 8}})),
                        t.constant(Tensor::vector({1, 2})));
    CHECK(t.value(z) == Tensor::matrix({{1, 2}}));
    CHECK_THROWS_AS(ad::affine(t, t.constant(Tensor::matrix({{1, 2, 3}})),
                               t.constant(Tensor::matrix({{1, 2}, {3, 4}})), t.constant(Tensor::vector({0, 0}))),
                    ShapeError);
}

TEST_CASE("relu") {
    ad::Tape t;
    CHECK(t.value(ad::relu(t, t.constant(Tensor::vector({-1, 0, 2})))) == Tensor::vector({0, 0, 2}));
    CHECK(t.value(ad::relu(t, t.constant(Tensor::vector({-1, -2})))) == Tensor::vector({0, 0}));
    // Subgradient at exactly zero is 0.
    Parameter p("x", Tensor::vector({0.0, 1.0}));
    ad::Tape t2;
    auto s = ad::sum_product(t2, ad::relu(t2, t2.parameter(p)), Tensor::vector({1, 1}));
    t2.backward(s);
    CHECK(p.grad == Tensor::vector({0, 1}));
}

TEST_CASE("log_softmax") {
    ad::Tape t;
    const Tensor& a = t.value(ad::log_softmax(t, t.constant(Tensor::matrix({{0, 0}}))));
    CHECK(a[0] == doctest::Approx(std::log(0.5)).epsilon(1e-15));
    CHECK(a[1] == doctest::Approx(std::log(0.5)).epsilon(1e-15));
    const Tensor& b = t.value(ad::log_softmax(t, t.constant(Tensor::matrix({{1000, 0}}))));
    CHECK(std::abs(b[0]) < 1e-300);
    CHECK(b[1] == doctest::Approx(-1000.0));

    std::mt19937_64 rng(9);
    const Tensor x = random_tensor(4, 7, rng, 3.0);
    const Tensor& y = t.value(ad::log_softmax(t, t.constant(x)));
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double z = 0.0, total = 0.0;
        for (double v : x.row(r)) z += std::exp(v);
        for (std::size_t c = 0; c < x.cols(); ++c) {
            CHECK(std::abs(y(r, c) - (x(r, c) - std::log(z))) < 1e-12);
            total += std::exp(y(r, c));
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("l2_normalize") {
    ad::Tape t;
    const Tensor& y = t.value(ad::l2_normalize(t, t.constant(Tensor::matrix({{3, 4}}))));
    CHECK(y[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(t.value(ad::l2_normalize(t, t.constant(Tensor::matrix({{0, 1}})))) == Tensor::matrix({{0, 1}}));
    CHECK_THROWS_AS(ad::l2_normalize(t, t.constant(Tensor::matrix({{0, 0}}))), NumericError);
    CHECK_THROWS_AS(ad::l2_normalize(t, t.constant(Tensor::matrix({{1e-13, 0}}))), NumericError);
}

TEST_CASE("soft cross-entropy clamps the log and handles empty row sets") {
    ad::Tape t;
    Tensor logp = Tensor::matrix({{std::log(0.5), std::log(0.5), -1e6}});
    auto l = ad::soft_cross_entropy(t, t.constant(logp), Tensor::matrix({{0.5, 0.5, 0.0}}), std::vector<std::size_t>{0});
    CHECK(t.value(l)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    auto c = ad::soft_cross_entropy(t, t.constant(logp), Tensor::matrix({{0.0, 0.0, 1.0}}), std::vector<std::size_t>{0});
    CHECK(t.value(c)[0] == doctest::Approx(-std::log(1e-12)));
    auto e = ad::soft_cross_entropy(t, t.constant(logp), Tensor::zeros(0, 3), std::vector<std::size_t>{});
    CHECK(t.value(e)[0] == 0.0);
}

TEST_CASE("contrastive op on hand-computed pools") {
    ad::Tape t;
    // Query row 0 against keys; column 0 is the query itself and is excluded.
    const Tensor q = Tensor::matrix({{1, 0}});
    const Tensor keys = Tensor::matrix({{1, 0}, {-1, 0}});
    auto s = ad::pool_similarity(t, t.constant(q), keys);
    CHECK(t.value(s) == Tensor::matrix({{1, 1, -1}}));
    const ad::ContrastAnchor a{0, {1}};
    auto l = ad::contrastive(t, s, std::span(&a, 1), 1.0);
    CHECK(t.value(l)[0] == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)))).epsilon(1e-14));
    const ad::ContrastAnchor none{0, {}};
    CHECK(t.value(ad::contrastive(t, s, std::span(&none, 1), 1.0))[0] == 0.0);
}

TEST_CASE("gradients match central finite differences") {
    std::mt19937_64 rng(11);
    const Tensor w = random_tensor(4, 3, rng);
    const Tensor b = Tensor::vector({0.1, -0.2, 0.3});
    const Tensor x = random_tensor(5, 4, rng);
    const Tensor out_w = random_tensor(5, 3, rng);

    const ScalarFn affine_x = [&](ad::Tape& t, ad::Var v) {
        return ad::sum_product(t, ad::affine(t, v, t.constant(w), t.constant(b)), out_w);
    };
    const ScalarFn affine_w = [&](ad::Tape& t, ad::Var v) {
        return ad::sum_product(t, ad::affine(t, t.constant(x), v, t.constant(b)), out_w);
    };
    const ScalarFn affine_b = [&](ad::Tape& t, ad::Var v) {
        return ad::sum_product(t, ad::affine(t, t.constant(x), t.constant(w), v), out_w);
    };
    CHECK(gradient_error(affine_x, x) < 1e-5);
    CHECK(gradient_error(affine_w, w) < 1e-5);
    CHECK(gradient_error(affine_b, b) < 1e-5);

    const Tensor wx = random_tensor(5, 4, rng);
    const ScalarFn relu = [&](ad::Tape& t, ad::Var v) { return ad::sum_product(t, ad::relu(t, v), wx); };
    Tensor away = random_tensor(5, 4, rng);
    for (double& v : away.values()) v += v >= 0 ? 0.1 : -0.1;  // keep clear of the kink
    CHECK(gradient_error(relu, away) < 1e-5);

    const ScalarFn lsm = [&](ad::Tape& t, ad::Var v) { return ad::sum_product(t, ad::log_softmax(t, v), wx); };
    CHECK(gradient_error(lsm, x) < 1e-5);

    const ScalarFn norm = [&](ad::Tape& t, ad::Var v) { return ad::sum_product(t, ad::l2_normalize(t, v), wx); };
    CHECK(gradient_error(norm, x) < 1e-5);

    const Tensor targets = Tensor::matrix({{0.2, 0.3, 0.5}, {1, 0, 0}});
    const ScalarFn sce = [&](ad::Tape& t, ad::Var v) {
        return ad::soft_cross_entropy(t, ad::log_softmax(t, v), targets, std::vector<std::size_t>{1, 3});
    };
    CHECK(gradient_error(sce, out_w) < 1e-5);

    const Tensor keys = random_tensor(6, 4, rng);
    const Tensor ws_sim = random_tensor(5, 11, rng);
    const ScalarFn sim = [&](ad::Tape& t, ad::Var v) {
        return ad::sum_product(t, ad::pool_similarity(t, v, keys), ws_sim);
    };
    CHECK(gradient_error(sim, x) < 1e-5);

    const std::vector<ad::ContrastAnchor> anchors = {{0, {1, 5, 7}}, {2, {3}}, {4, {}}, {1, {0, 2, 3, 4, 9}}};
    const ScalarFn con = [&](ad::Tape& t, ad::Var v) {
        auto q = ad::l2_normalize(t, v);
        return ad::contrastive(t, ad::pool_similarity(t, q, normalize_rows(keys)), anchors, 0.3);
    };
    CHECK(gradient_error(con, x) < 1e-5);

    const ScalarFn ws = [&](ad::Tape& t, ad::Var v) {
        const ad::Var parts[] = {ad::sum_product(t, v, wx), ad::sum_product(t, ad::relu(t, v), wx)};
        const double weights[] = {0.5, 2.0};
        return ad::weighted_sum(t, parts, weights);
    };
    CHECK(gradient_error(ws, away) < 1e-5);
}

TEST_CASE("tape replays each node once, newest first") {
    ad::Tape t;
    Parameter p("x", Tensor::vector({1.0, 2.0}));
    auto x = t.parameter(p);
    auto a = ad::relu(t, x);
    auto b = ad::sum_product(t, a, Tensor::vector({1, 1}));
    auto c = ad::sum_product(t, a, Tensor::vector({2, 2}));
    const ad::Var parts[] = {b, c};
    const double weights[] = {1.0, 1.0};
    auto root = ad::weighted_sum(t, parts, weights);
    t.backward(root);
    const auto& order = t.last_replay();
    CHECK(std::is_sorted(order.rbegin(), order.rend()));
    CHECK(std::adjacent_find(order.begin(), order.end()) == order.end());
    CHECK(p.grad == Tensor::vector({3, 3}));
}

TEST_CASE("sgd with momentum") {
    Parameter p("w", Tensor::vector({1.0, -2.0}));
    p.zero_grad();
    Parameter* ps[] = {&p};
    sgd_momentum_step(ps, 0.1, 0.9);
    CHECK(p.value == Tensor::vector({1.0, -2.0}));

    p.grad = Tensor::vector({1.0, 1.0});
    p.momentum_buffer = Tensor::vector({0.0, 0.0});
    sgd_momentum_step(ps, 0.5, 0.0);
    CHECK(p.value == Tensor::vector({0.5, -2.5}));
    CHECK(p.grad == Tensor::vector({0.0, 0.0}));

    // f(w) = w²/2 on a scalar: two steps of the recurrence v ← m·v + w, w ← w − lr·v.
    Parameter s("s", Tensor::vector({1.0}));
    Parameter* ss[] = {&s};
    double w = 1.0, v = 0.0;
    for (int i = 0; i < 2; ++i) {
        s.grad = Tensor::vector({s.value[0]});
        sgd_momentum_step(ss, 0.1, 0.9);
        v = 0.9 * v + w;
        w = w - 0.1 * v;
        CHECK(s.value[0] == w);
    }

    s.grad = Tensor::vector({NAN});
    CHECK_THROWS_AS(sgd_momentum_step(ss, 0.1, 0.9), NumericError);
    CHECK_THROWS_AS(sgd_momentum_step(ss, 0.0, 0.9), std::invalid_argument);
    CHECK_THROWS_AS(sgd_momentum_step(ss, 0.1, 1.0), std::invalid_argument);
}

TEST_CASE("cosine schedule") {
    CHECK(cosine_lr(0, 100, 0.01) == 0.01);
    CHECK(std::abs(cosine_lr(100, 100, 0.01)) < 1e-18);
    CHECK(cosine_lr(50, 100, 0.01) == doctest::Approx(0.005).epsilon(1e-14));
    CHECK_THROWS(cosine_lr(101, 100, 0.01));
    CHECK_THROWS(cosine_lr(-1, 100, 0.01));
}
