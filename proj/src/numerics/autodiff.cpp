#include "pico/numerics/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "pico/numerics/kernels.hpp"

namespace pico {

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()), momentum_buffer(value.shape()) {}

Tensor log_softmax_rows(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        const double m = *std::max_element(in.begin(), in.end());
        double s = 0.0;
        for (double v : in) s += std::exp(v - m);
        const double lse = m + std::log(s);
        for (std::size_t j = 0; j < in.size(); ++j) o[j] = in[j] - lse;
    }
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    Tensor out = log_softmax_rows(x);
    for (double& v : out.values()) v = std::exp(v);
    return out;
}

Tensor normalize_rows(const Tensor& x, double eps) {
    Tensor out(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double n = norm2(x.row(r));
        if (!(n >= eps)) {
            throw NumericError("degenerate embedding: row " + std::to_string(r) + " has norm " +
                               std::to_string(n));
        }
        auto in = x.row(r);
        auto o = out.row(r);
        for (std::size_t j = 0; j < in.size(); ++j) o[j] = in[j] / n;
    }
    return out;
}

namespace ad {

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
    Node n;
    n.value = p.value;
    n.param = &p;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<Var> inputs, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](Var v) { return nodes_.at(v.id).requires_grad; });
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Tensor& Tape::grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
    if (!nodes_.at(v.id).requires_grad) return;
    Tensor& dst = grad(v);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void Tape::backward(Var root) {
    if (value(root).size() != 1) throw ShapeError("backward needs a scalar root");
    replay_.clear();
    for (auto& n : nodes_) n.grad = Tensor();
    grad(root)[0] = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.size() == 0) continue;
        if (n.backward) {
            replay_.push_back(i);
            // The closure only writes into input nodes, which precede i.
            const Tensor g = n.grad;
            n.backward(*this, g);
        }
    }
    for (auto& n : nodes_) {
        if (n.param == nullptr || n.grad.size() == 0) continue;
        Tensor& pg = n.param->grad;
        if (pg.size() != n.grad.size()) pg = Tensor(n.value.shape());
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
    }
}

Var affine(Tape& t, Var x, Var w, Var b) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    if (xv.cols() != wv.rows() || bv.size() != wv.cols()) {
        throw ShapeError("affine: x" + xv.shape_string() + " W" + wv.shape_string() + " b" +
                         bv.shape_string());
    }
    Tensor y = kernels::matmul(xv, wv);
    for (std::size_t r = 0; r < y.rows(); ++r) {
        auto row = y.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += bv[j];
    }
    y.require_finite("affine");
    return t.record(std::move(y), {x, w, b}, [x, w, b](Tape& tp, const Tensor& g) {
        if (tp.requires_grad(x)) tp.accumulate(x, kernels::matmul_bt(g, tp.value(w)));
        if (tp.requires_grad(w)) tp.accumulate(w, kernels::matmul_at(tp.value(x), g));
        if (tp.requires_grad(b)) {
            Tensor gb(tp.value(b).shape());
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(r, j);
            tp.accumulate(b, gb);
        }
    });
}

Var relu(Tape& t, Var x) {
    Tensor y = t.value(x);
    for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
    return t.record(std::move(y), {x}, [x](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.value(x);
        Tensor gx(xv.shape());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = xv[i] > 0.0 ? g[i] : 0.0;
        tp.accumulate(x, gx);
    });
}

Var log_softmax(Tape& t, Var x) {
    Tensor y = log_softmax_rows(t.value(x));
    y.require_finite("log_softmax");
    Tensor probs = y;
    for (double& v : probs.values()) v = std::exp(v);
    return t.record(std::move(y), {x}, [x, probs = std::move(probs)](Tape& tp, const Tensor& g) {
        // d/dx_k Σ_j g_j·(x_j − lse) = g_k − p_k·Σ_j g_j
        Tensor gx(g.shape());
        for (std::size_t r = 0; r < g.rows(); ++r) {
            double gs = 0.0;
            for (std::size_t j = 0; j < g.cols(); ++j) gs += g(r, j);
            for (std::size_t j = 0; j < g.cols(); ++j) gx(r, j) = g(r, j) - probs(r, j) * gs;
        }
        tp.accumulate(x, gx);
    });
}

Var l2_normalize(Tape& t, Var x, double eps) {
    const Tensor& xv = t.value(x);
    Tensor y = normalize_rows(xv, eps);
    std::vector<double> norms(xv.rows());
    for (std::size_t r = 0; r < xv.rows(); ++r) norms[r] = norm2(xv.row(r));
    Tensor yc = y;
    return t.record(std::move(y), {x},
                    [x, yc = std::move(yc), norms = std::move(norms)](Tape& tp, const Tensor& g) {
                        // J = (I − y yᵀ)/‖x‖
                        Tensor gx(g.shape());
                        for (std::size_t r = 0; r < g.rows(); ++r) {
                            const double gy = dot(g.row(r), yc.row(r));
                            for (std::size_t j = 0; j < g.cols(); ++j)
                                gx(r, j) = (g(r, j) - yc(r, j) * gy) / norms[r];
                        }
                        tp.accumulate(x, gx);
                    });
}

Var sum_product(Tape& t, Var x, const Tensor& weights) {
    const Tensor& xv = t.value(x);
    if (xv.size() != weights.size()) throw ShapeError("sum_product: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
    Tensor out({1}, {s});
    out.require_finite("sum_product");
    return t.record(std::move(out), {x}, [x, weights](Tape& tp, const Tensor& g) {
        Tensor gx(tp.value(x).shape());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[0] * weights[i];
        tp.accumulate(x, gx);
    });
}

Var weighted_sum(Tape& t, std::span<const Var> terms, std::span<const double> weights) {
    if (terms.size() != weights.size()) throw ShapeError("weighted_sum: term/weight count mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < terms.size(); ++k) {
        if (t.value(terms[k]).size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
        s += weights[k] * t.value(terms[k])[0];
    }
    std::vector<Var> ins(terms.begin(), terms.end());
    std::vector<double> ws(weights.begin(), weights.end());
    return t.record(Tensor({1}, {s}), ins, [ins, ws](Tape& tp, const Tensor& g) {
        for (std::size_t k = 0; k < ins.size(); ++k) {
            if (ws[k] == 0.0) continue;
            tp.accumulate(ins[k], Tensor({1}, {g[0] * ws[k]}));
        }
    });
}

Var soft_cross_entropy(Tape& t, Var logp, const Tensor& targets, std::span<const std::size_t> rows) {
    const Tensor& lp = t.value(logp);
    if (rows.empty()) return t.constant(Tensor({1}, {0.0}));
    if (targets.rows() != rows.size() || targets.cols() != lp.cols()) {
        throw ShapeError("soft_cross_entropy: targets " + targets.shape_string() + " vs logits " +
                         lp.shape_string());
    }
    const double floor = std::log(kLogClamp);
    const double inv = 1.0 / static_cast<double>(rows.size());
    double total = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < lp.cols(); ++j) {
            const double tj = targets(k, j);
            if (tj != 0.0) s -= tj * std::max(lp(rows[k], j), floor);
        }
        total += s;
    }
    Tensor out({1}, {total * inv});
    out.require_finite("soft_cross_entropy");
    std::vector<std::size_t> rs(rows.begin(), rows.end());
    return t.record(std::move(out), {logp},
                    [logp, targets, rs = std::move(rs), inv, floor](Tape& tp, const Tensor& g) {
                        const Tensor& lpv = tp.value(logp);
                        Tensor gx(lpv.shape());
                        for (std::size_t k = 0; k < rs.size(); ++k)
                            for (std::size_t j = 0; j < lpv.cols(); ++j)
                                if (lpv(rs[k], j) > floor) gx(rs[k], j) -= g[0] * inv * targets(k, j);
                        tp.accumulate(logp, gx);
                    });
}

Var pool_similarity(Tape& t, Var q, const Tensor& keys) {
    const Tensor& qv = t.value(q);
    if (keys.size() != 0 && keys.cols() != qv.cols()) throw ShapeError("pool_similarity: embedding width mismatch");
    const std::size_t b = qv.rows(), d = qv.cols(), m = keys.size() == 0 ? 0 : keys.rows();
    Tensor pool = Tensor::zeros(b + m, d);
    std::copy(qv.values().begin(), qv.values().end(), pool.values().begin());
    if (m) std::copy(keys.values().begin(), keys.values().end(), pool.values().begin() + b * d);
    Tensor s = kernels::matmul_bt(qv, pool);
    s.require_finite("pool_similarity");
    return t.record(std::move(s), {q}, [q, pool = std::move(pool), b](Tape& tp, const Tensor& g) {
        // S depends on Q twice: as the anchor rows and as the first B pool columns.
        Tensor gq = kernels::matmul(g, pool);
        const Tensor& qv2 = tp.value(q);
        Tensor gblock = Tensor::zeros(b, b);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < b; ++j) gblock(i, j) = g(i, j);
        Tensor extra = kernels::matmul_at(gblock, qv2);
        for (std::size_t i = 0; i < gq.size(); ++i) gq[i] += extra[i];
        tp.accumulate(q, gq);
    });
}

Var contrastive(Tape& t, Var similarity, std::span<const ContrastAnchor> anchors, double tau) {
    if (!(tau > 0.0)) throw NumericError("contrastive: temperature must be positive");
    if (anchors.empty()) return t.constant(Tensor({1}, {0.0}));
    const Tensor& s = t.value(similarity);
    const std::size_t m = s.cols();
    const double inv_a = 1.0 / static_cast<double>(anchors.size());

    // Per-anchor softmax over A(x) is kept for the adjoint.
    Tensor soft = Tensor::zeros(anchors.size(), m);
    double total = 0.0;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        const auto& an = anchors[a];
        if (an.row >= s.rows()) throw ShapeError("contrastive: anchor row out of range");
        if (an.positives.empty()) continue;
        auto srow = s.row(an.row);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < m; ++j)
            if (j != an.row) mx = std::max(mx, srow[j] / tau);
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j)
            if (j != an.row) z += std::exp(srow[j] / tau - mx);
        const double lse = mx + std::log(z);
        auto prow = soft.row(a);
        for (std::size_t j = 0; j < m; ++j)
            if (j != an.row) prow[j] = std::exp(srow[j] / tau - lse);
        double acc = 0.0;
        for (std::uint32_t p : an.positives) {
            if (p >= m || p == an.row) throw ShapeError("contrastive: invalid positive index");
            acc += srow[p] / tau - lse;
        }
        total -= acc / static_cast<double>(an.positives.size());
    }
    Tensor out({1}, {total * inv_a});
    out.require_finite("contrastive");
    std::vector<ContrastAnchor> an_copy(anchors.begin(), anchors.end());
    return t.record(std::move(out), {similarity},
                    [similarity, an = std::move(an_copy), soft = std::move(soft), tau, inv_a](
                        Tape& tp, const Tensor& g) {
                        Tensor gs(tp.value(similarity).shape());
                        const double scale = g[0] * inv_a / tau;
                        for (std::size_t a = 0; a < an.size(); ++a) {
                            if (an[a].positives.empty()) continue;
                            auto grow = gs.row(an[a].row);
                            auto prow = soft.row(a);
                            for (std::size_t j = 0; j < grow.size(); ++j) grow[j] += scale * prow[j];
                            const double w = scale / static_cast<double>(an[a].positives.size());
                            for (std::uint32_t p : an[a].positives) grow[p] -= w;
                        }
                        tp.accumulate(similarity, gs);
                    });
}

}  // namespace ad
}  // namespace pico
