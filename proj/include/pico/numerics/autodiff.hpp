#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pico/numerics/tensor.hpp"

namespace pico {

/// A trainable array together with its gradient accumulator and SGD velocity.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Tensor value);

    std::string name;
    Tensor value;
    Tensor grad;
    Tensor momentum_buffer;

    void zero_grad() { grad.fill(0.0); }
};

namespace ad {

/// Handle to a node recorded on a Tape.
struct Var {
    std::size_t id = SIZE_MAX;
    bool valid() const { return id != SIZE_MAX; }
};

class Tape;
using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

/// Ordered record of the primitive operations of one forward pass.
///
/// Nodes are appended as operations execute. `backward` replays the adjoint of
/// every node that needs a gradient exactly once, newest first, and then adds
/// the leaf gradients into their bound Parameters.
class Tape {
public:
    Var constant(Tensor value);
    Var parameter(Parameter& p);

    Var record(Tensor value, std::vector<Var> inputs, Backward backward);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    // Gradient buffer of a node, allocated on first use.
    Tensor& grad(Var v);
    void accumulate(Var v, const Tensor& g);

    void backward(Var scalar_root);

    std::size_t size() const { return nodes_.size(); }
    const std::vector<std::size_t>& last_replay() const { return replay_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<Var> inputs;
        Backward backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
    std::vector<std::size_t> replay_;
};

// y = x·W + b
Var affine(Tape& t, Var x, Var w, Var b);
Var relu(Tape& t, Var x);
Var log_softmax(Tape& t, Var x);

inline constexpr double kNormalizeEpsilon = 1e-12;
// Row-wise unit normalization; throws NumericError if a row norm is below eps.
Var l2_normalize(Tape& t, Var x, double eps = kNormalizeEpsilon);

// Σ x ⊙ w for a constant weight tensor of the same shape. Scalar output.
Var sum_product(Tape& t, Var x, const Tensor& weights);

// Σ_k w_k·x_k over scalar nodes.
Var weighted_sum(Tape& t, std::span<const Var> terms, std::span<const double> weights);

inline constexpr double kLogClamp = 1e-12;

/// Mean over `rows` of −Σ_j target(r,j)·max(logp(r,j), log 1e-12).
/// `targets` has one row per entry of `rows`. Empty `rows` gives a constant 0.
Var soft_cross_entropy(Tape& t, Var logp, const Tensor& targets, std::span<const std::size_t> rows);

/// S = Q·[Q; K]ᵀ where Q is a recorded [B×d] node and K a constant [m×d] block.
/// Column j < B refers to query row j; column B + r refers to key row r.
Var pool_similarity(Tape& t, Var q, const Tensor& keys);

/// One anchor of a contrastive loss: row of the similarity matrix and the
/// pool columns counted as positives. The anchor's own query column is
/// excluded from the denominator.
struct ContrastAnchor {
    std::size_t row;
    std::vector<std::uint32_t> positives;
};

/// Mean over anchors of
///   −(1/|P|)·Σ_{p∈P} log( exp(S_rp/τ) / Σ_{j≠r} exp(S_rj/τ) ),
/// with an empty P contributing 0. No anchors gives a constant 0.
Var contrastive(Tape& t, Var similarity, std::span<const ContrastAnchor> anchors, double tau);

}  // namespace ad

// Row-wise numerics shared by the graph ops and by gradient-free code paths.
Tensor log_softmax_rows(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor normalize_rows(const Tensor& x, double eps = ad::kNormalizeEpsilon);

}  // namespace pico
