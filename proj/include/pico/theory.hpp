#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pico/datagen.hpp"
#include "pico/numerics/tensor.hpp"

namespace pico::theory {

/// Unit embeddings partitioned into clusters S_0..S_{C−1} by label.
struct ClusterAssignment {
    Tensor embeddings;        // [n × d]
    std::vector<int> labels;  // one per row, in [0, num_clusters)
    int num_clusters = 0;

    std::size_t size() const { return labels.size(); }
    std::vector<std::size_t> cluster_sizes() const;
    // Euclidean mean μ_j of each cluster, [C × d]; empty clusters give zero rows.
    Tensor cluster_means() const;
    // Throws std::invalid_argument on label/row mismatches or out-of-range labels.
    void validate() const;
};

struct AlignmentForms {
    double pairwise = 0.0;     // Σ_j (1/(2n_j))·Σ_{x,x′∈S_j} ‖g(x)−g(x′)‖²
    double centered = 0.0;     // Σ_j Σ_{x∈S_j} ‖g(x)−μ_j‖²
    double closed_form = 0.0;  // Σ_j n_j·(1−‖μ_j‖²)
    // Pairwise form normalised by 1/(2(n_j−1)) instead, minus `pairwise`.
    // Singleton clusters contribute 0.
    double self_pair_gap = 0.0;
};

inline constexpr double kUnitTolerance = 1e-9;

/// All three forms of the intraclass alignment term. Every cluster must be
/// non-empty and every embedding unit-norm within `unit_tolerance` (pass
/// infinity to skip the norm check).
AlignmentForms alignment_two_ways(const ClusterAssignment& a, double unit_tolerance = kUnitTolerance);

struct Moments {
    double r1 = 0.0;  // Σ (n_j/n)·‖μ_j‖²
    double r2 = 0.0;  // Σ (n_j/n)·‖μ_j‖
};

Moments r1_r2(const ClusterAssignment& a);

enum class KappaRegime { Large, Small };

/// Approximate vMF concentration from the mean resultant length ‖μ‖.
///   large: (d−1) / (2(1−‖μ‖))
///   small: d‖μ‖·(1 + d/(d+2)·‖μ‖² + d²(d+8)/((d+2)²(d+4))·‖μ‖⁴)
/// Throws NumericError for ‖μ‖ = 1 in the large regime.
double vmf_kappa(double mu_norm, int dim, KappaRegime regime);

struct VmfComponent {
    std::vector<double> mean;       // μ_j
    std::vector<double> direction;  // μ_j/‖μ_j‖, zero when μ_j = 0
    double kappa = 0.0;
    int dim = 0;
};

std::vector<VmfComponent> fit_components(const ClusterAssignment& a, KappaRegime regime);

enum class PosteriorForm { Soft, Hard };

/// E-step weights π over the candidate set. Soft: f restricted to Y and
/// renormalised (uniform over Y if that mass is 0). Hard: one-hot at the
/// in-set argmax.
std::vector<double> em_posterior(std::span<const double> f, LabelSet candidates, PosteriorForm form);

/// θ-dependent part of the log-likelihood, κ·Σ_i Σ_j π_ij·μ̄_j·g(x_i),
/// summed term by term. c_d(κ) and the candidate-generation constant are
/// dropped since they do not depend on the network.
double log_likelihood_part(const Tensor& embeddings, const Tensor& posteriors, const Tensor& directions,
                           double kappa);

/// Same quantity under hard assignments given by the cluster labels, with
/// the cluster mean directions as μ̄. Equals κ·n·R2.
double brute_force_log_likelihood(const ClusterAssignment& a, double kappa);

// Verification suite --------------------------------------------------------

struct CheckResult {
    std::string name;
    bool passed = true;
    bool asserted = true;  // informational checks never fail the suite
    double residual = 0.0;
    double tolerance = 0.0;
    std::string detail;
};

enum class Fault {
    None,
    PerturbNorm,  // scale one embedding in each alignment instance by 1.01
};

struct VerifyOptions {
    std::uint64_t seed = 0;
    int instances = 1000;
    Fault fault = Fault::None;
};

struct VerifyReport {
    std::vector<CheckResult> checks;
    Moments two_cluster_example;  // R1, R2 of two_cluster_assignment()

    bool all_passed() const;
    std::string to_text() const;
    std::string to_json() const;
};

VerifyReport run_verification(const VerifyOptions& options = {});

// Random instances used by the suite and the tests.
ClusterAssignment random_assignment(std::size_t n, std::size_t dim, int clusters, Rng& rng);
// The two-cluster example with ‖μ_1‖ = 0.5 and ‖μ_2‖ = 1.
ClusterAssignment two_cluster_assignment();

}  // namespace pico::theory
