#include "pico/theory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "pico/networks.hpp"

namespace pico::theory {

void ClusterAssignment::validate() const {
    if (num_clusters < 1) throw std::invalid_argument("assignment needs at least one cluster");
    if (embeddings.rows() != labels.size() || (labels.empty() != (embeddings.size() == 0)))
        throw std::invalid_argument("assignment has " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(embeddings.rows()) + " embeddings");
    for (int y : labels)
        if (y < 0 || y >= num_clusters) throw std::invalid_argument("cluster label out of range");
}

std::vector<std::size_t> ClusterAssignment::cluster_sizes() const {
    std::vector<std::size_t> n(num_clusters, 0);
    for (int y : labels) ++n[y];
    return n;
}

Tensor ClusterAssignment::cluster_means() const {
    const std::size_t d = embeddings.cols();
    Tensor mu = Tensor::zeros(num_clusters, d);
    const auto n = cluster_sizes();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto row = mu.row(labels[i]);
        auto x = embeddings.row(i);
        for (std::size_t k = 0; k < d; ++k) row[k] += x[k];
    }
    for (int j = 0; j < num_clusters; ++j)
        if (n[j] > 0)
            for (double& v : mu.row(j)) v /= static_cast<double>(n[j]);
    return mu;
}

AlignmentForms alignment_two_ways(const ClusterAssignment& a, double unit_tolerance) {
    a.validate();
    const auto n = a.cluster_sizes();
    for (int j = 0; j < a.num_clusters; ++j)
        if (n[j] == 0) throw std::invalid_argument("cluster " + std::to_string(j) + " is empty");
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double len = norm2(a.embeddings.row(i));
        if (std::abs(len - 1.0) > unit_tolerance)
            throw std::invalid_argument("embedding " + std::to_string(i) + " is not unit-norm (norm " +
                                        std::to_string(len) + ")");
    }

    const Tensor mu = a.cluster_means();
    const std::size_t d = a.embeddings.cols();
    std::vector<double> pair_sum(a.num_clusters, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t k = 0; k < a.size(); ++k) {
            if (a.labels[i] != a.labels[k]) continue;
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = a.embeddings(i, t) - a.embeddings(k, t);
                s += diff * diff;
            }
            pair_sum[a.labels[i]] += s;
        }
    }

    AlignmentForms f;
    for (int j = 0; j < a.num_clusters; ++j) {
        const double nj = static_cast<double>(n[j]);
        f.pairwise += pair_sum[j] / (2.0 * nj);
        if (n[j] > 1) f.self_pair_gap += pair_sum[j] / (2.0 * (nj - 1.0)) - pair_sum[j] / (2.0 * nj);
        const double m = norm2(mu.row(j));
        f.closed_form += nj * (1.0 - m * m);
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto c = mu.row(a.labels[i]);
        for (std::size_t t = 0; t < d; ++t) {
            const double diff = a.embeddings(i, t) - c[t];
            f.centered += diff * diff;
        }
    }
    return f;
}

Moments r1_r2(const ClusterAssignment& a) {
    a.validate();
    const Tensor mu = a.cluster_means();
    const auto n = a.cluster_sizes();
    const double total = static_cast<double>(a.size());
    Moments m;
    if (total == 0.0) return m;
    for (int j = 0; j < a.num_clusters; ++j) {
        const double w = static_cast<double>(n[j]) / total;
        const double len = norm2(mu.row(j));
        m.r1 += w * len * len;
        m.r2 += w * len;
    }
    return m;
}

double vmf_kappa(double mu_norm, int dim, KappaRegime regime) {
    if (dim < 1) throw std::invalid_argument("dimension must be positive");
    if (!(mu_norm >= 0.0 && mu_norm <= 1.0)) throw std::invalid_argument("mean resultant length must lie in [0,1]");
    const double d = dim;
    if (regime == KappaRegime::Large) {
        if (mu_norm == 1.0) throw NumericError("vmf_kappa: concentration diverges at mean resultant length 1");
        return (d - 1.0) / (2.0 * (1.0 - mu_norm));
    }
    const double r2 = mu_norm * mu_norm;
    return d * mu_norm * (1.0 + d / (d + 2.0) * r2 + d * d * (d + 8.0) / ((d + 2.0) * (d + 2.0) * (d + 4.0)) * r2 * r2);
}

std::vector<VmfComponent> fit_components(const ClusterAssignment& a, KappaRegime regime) {
    const Tensor mu = a.cluster_means();
    const int d = static_cast<int>(a.embeddings.cols());
    std::vector<VmfComponent> out;
    for (int j = 0; j < a.num_clusters; ++j) {
        VmfComponent c;
        c.dim = d;
        c.mean.assign(mu.row(j).begin(), mu.row(j).end());
        const double len = norm2(c.mean);
        c.direction.assign(d, 0.0);
        if (len > 0.0)
            for (int t = 0; t < d; ++t) c.direction[t] = c.mean[t] / len;
        c.kappa = vmf_kappa(std::min(len, 1.0), d, regime);
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<double> em_posterior(std::span<const double> f, LabelSet candidates, PosteriorForm form) {
    if (candidates == 0) throw std::invalid_argument("em_posterior: empty candidate set");
    std::vector<double> pi(f.size(), 0.0);
    if (form == PosteriorForm::Hard) {
        pi[predict_within(f, candidates)] = 1.0;
        return pi;
    }
    double mass = 0.0;
    for (int j : members(candidates)) mass += f[j];
    for (int j : members(candidates)) pi[j] = mass > 0.0 ? f[j] / mass : 1.0 / set_size(candidates);
    return pi;
}

double log_likelihood_part(const Tensor& embeddings, const Tensor& posteriors, const Tensor& directions,
                           double kappa) {
    if (posteriors.rows() != embeddings.rows() || posteriors.cols() != directions.rows() ||
        directions.cols() != embeddings.cols())
        throw ShapeError("log_likelihood_part: shapes " + embeddings.shape_string() + ", " +
                         posteriors.shape_string() + ", " + directions.shape_string() + " disagree");
    double total = 0.0;
    for (std::size_t i = 0; i < embeddings.rows(); ++i)
        for (std::size_t j = 0; j < directions.rows(); ++j)
            if (posteriors(i, j) != 0.0) total += posteriors(i, j) * kappa * dot(directions.row(j), embeddings.row(i));
    return total;
}

double brute_force_log_likelihood(const ClusterAssignment& a, double kappa) {
    a.validate();
    const auto comps = fit_components(a, KappaRegime::Small);
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += kappa * dot(comps[a.labels[i]].direction, a.embeddings.row(i));
    return total;
}

// Instances -----------------------------------------------------------------

namespace {

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> v(dim);
    double len = 0.0;
    while (len < 1e-6) {
        for (double& x : v) x = n01(rng);
        len = norm2(v);
    }
    for (double& x : v) x /= len;
    return v;
}

}  // namespace

ClusterAssignment random_assignment(std::size_t n, std::size_t dim, int clusters, Rng& rng) {
    if (clusters < 1 || n < static_cast<std::size_t>(clusters))
        throw std::invalid_argument("random_assignment needs n >= clusters >= 1");
    ClusterAssignment a{Tensor::zeros(n, dim), std::vector<int>(n), clusters};
    // Mix tight and diffuse clusters so the moments cover (0, 1).
    std::uniform_real_distribution<double> spread_dist(0.0, 2.0);
    std::uniform_int_distribution<int> pick(0, clusters - 1);
    std::vector<std::vector<double>> centre;
    std::vector<double> spread;
    for (int j = 0; j < clusters; ++j) {
        centre.push_back(random_unit(dim, rng));
        spread.push_back(spread_dist(rng));
    }
    std::normal_distribution<double> n01(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = i < static_cast<std::size_t>(clusters) ? static_cast<int>(i) : pick(rng);
        a.labels[i] = y;
        auto row = a.embeddings.row(i);
        for (std::size_t t = 0; t < dim; ++t) row[t] = centre[y][t] + spread[y] * n01(rng);
        double len = norm2(row);
        if (len < 1e-6) {
            std::copy(centre[y].begin(), centre[y].end(), row.begin());
            len = 1.0;
        }
        for (double& v : row) v /= len;
    }
    return a;
}

ClusterAssignment two_cluster_assignment() {
    // Cluster 0: (1/2, ±√3/2) has mean (1/2, 0). Cluster 1: two copies of (0, 1).
    const double s = std::sqrt(3.0) / 2.0;
    return {Tensor::matrix({{0.5, s}, {0.5, -s}, {0.0, 1.0}, {0.0, 1.0}}), {0, 0, 1, 1}, 2};
}

// Verification suite ------------------------------------------------------------

bool VerifyReport::all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed || !c.asserted; });
}

std::string VerifyReport::to_text() const {
    std::ostringstream out;
    for (const auto& c : checks) {
        out << (c.asserted ? (c.passed ? "PASS " : "FAIL ") : "INFO ") << c.name << "  residual=" << c.residual;
        if (c.asserted) out << " tol=" << c.tolerance;
        if (!c.detail.empty()) out << "  " << c.detail;
        out << '\n';
    }
    out << "two-cluster example: R1=" << format_double(two_cluster_example.r1)
        << " R2=" << format_double(two_cluster_example.r2) << '\n';
    out << (all_passed() ? "all checks passed" : "verification FAILED") << '\n';
    return out.str();
}

std::string VerifyReport::to_json() const {
    nlohmann::json j;
    j["passed"] = all_passed();
    j["two_cluster_example"] = {{"r1", two_cluster_example.r1}, {"r2", two_cluster_example.r2}};
    for (const auto& c : checks)
        j["checks"].push_back({{"name", c.name},
                               {"passed", c.passed},
                               {"asserted", c.asserted},
                               {"residual", c.residual},
                               {"tolerance", c.tolerance},
                               {"detail", c.detail}});
    return j.dump(2);
}

namespace {

CheckResult check(std::string name, double residual, double tolerance, std::string detail = {}) {
    return {std::move(name), residual <= tolerance, true, residual, tolerance, std::move(detail)};
}

// Max over `count` seeded instances of a per-instance residual.
double sweep(int count, Rng& rng, const std::function<double(Rng&)>& residual) {
    double worst = 0.0;
    for (int i = 0; i < count; ++i) worst = std::max(worst, residual(rng));
    return worst;
}

ClusterAssignment sized_instance(Rng& rng, std::size_t max_n, std::size_t max_d, int max_c) {
    std::uniform_int_distribution<int> cdist(1, max_c);
    const int c = cdist(rng);
    std::uniform_int_distribution<std::size_t> ndist(static_cast<std::size_t>(c), max_n);
    std::uniform_int_distribution<std::size_t> ddist(2, max_d);
    const std::size_t n = ndist(rng);
    const std::size_t d = ddist(rng);
    return random_assignment(n, d, c, rng);
}

}  // namespace

VerifyReport run_verification(const VerifyOptions& options) {
    if (options.instances < 1) throw std::invalid_argument("instances must be positive");
    VerifyReport report;
    Rng rng(options.seed);
    const int count = options.instances;

    // Alignment identity: pairwise = centered = closed form.
    double gap_total = 0.0;
    const double align = sweep(count, rng, [&](Rng& r) {
        ClusterAssignment a = sized_instance(r, 100, 16, 6);
        double tol = kUnitTolerance;
        if (options.fault == Fault::PerturbNorm) {
            for (double& v : a.embeddings.row(0)) v *= 1.01;
            tol = std::numeric_limits<double>::infinity();
        }
        const AlignmentForms f = alignment_two_ways(a, tol);
        gap_total += f.self_pair_gap;
        return std::max({std::abs(f.pairwise - f.centered), std::abs(f.centered - f.closed_form),
                         std::abs(f.pairwise - f.closed_form)});
    });
    report.checks.push_back(check("alignment_identity", align, 1e-10,
                                  std::to_string(count) + " instances, n<=100, d<=16"));
    report.checks.push_back({"self_pair_normalisation_gap", true, false, gap_total / count, 0.0,
                             "mean of 1/(2(n_j-1)) form minus 1/(2n_j) form"});

    // Covariance = n·(1 − R1) on the same kind of instances.
    const double affine = sweep(count, rng, [](Rng& r) {
        const ClusterAssignment a = sized_instance(r, 60, 8, 4);
        const AlignmentForms f = alignment_two_ways(a);
        return std::abs(f.closed_form - static_cast<double>(a.size()) * (1.0 - r1_r2(a).r1));
    });
    report.checks.push_back(check("covariance_affine_in_r1", affine, 1e-10));

    // R2² ≤ R1 ≤ R2 ≤ 1.
    const double bounds = sweep(count, rng, [](Rng& r) {
        const Moments m = r1_r2(sized_instance(r, 100, 16, 6));
        return std::max({0.0, m.r2 * m.r2 - m.r1, m.r1 - m.r2, m.r2 - 1.0});
    });
    report.checks.push_back(check("moment_bounds", bounds, 1e-12, "max violation of R2^2 <= R1 <= R2 <= 1"));

    // R1 = R2 only when every ‖μ_j‖ is 0 or 1.
    const double equality = sweep(count, rng, [](Rng& r) {
        const ClusterAssignment a = sized_instance(r, 20, 4, 3);
        const Moments m = r1_r2(a);
        if (std::abs(m.r1 - m.r2) >= 1e-12) return 0.0;
        const Tensor mu = a.cluster_means();
        double worst = 0.0;
        for (int j = 0; j < a.num_clusters; ++j) {
            const double len = norm2(mu.row(j));
            worst = std::max(worst, len * (1.0 - len));
        }
        return worst;
    });
    report.checks.push_back(check("moment_equality_case", equality, 1e-6));

    report.two_cluster_example = r1_r2(two_cluster_assignment());
    report.checks.push_back(check(
        "two_cluster_moments",
        std::max(std::abs(report.two_cluster_example.r1 - 0.625), std::abs(report.two_cluster_example.r2 - 0.75)), 0.0,
        "expects R1=0.625, R2=0.75"));

    // κ approximations: spot value and monotonicity on a grid.
    double kappa_res = std::abs(vmf_kappa(0.9, 3, KappaRegime::Large) - 10.0);
    kappa_res = std::max(kappa_res, std::abs(vmf_kappa(0.0, 3, KappaRegime::Small)));
    for (KappaRegime regime : {KappaRegime::Large, KappaRegime::Small}) {
        for (int d : {2, 3, 16, 128}) {
            double prev = -1.0;
            for (int g = 0; g < 100; ++g) {
                const double k = vmf_kappa(g / 100.0, d, regime);
                if (k <= prev) kappa_res = std::max(kappa_res, prev - k + 1.0);
                prev = k;
            }
        }
    }
    report.checks.push_back(check("kappa_approximations", kappa_res, 1e-12, "d=3, |mu|=0.9 gives 10; grids increase"));

    // Posterior: hard form matches the in-set argmax, soft form is a simplex on Y.
    const double posterior = sweep(std::min(count, 100), rng, [](Rng& r) {
        std::uniform_int_distribution<int> cdist(2, 8);
        const int c = cdist(r);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<double> f(c);
        double z = 0.0;
        for (double& v : f) z += v = u(r);
        for (double& v : f) v /= z;
        LabelSet y = 0;
        while (y == 0)
            for (int j = 0; j < c; ++j)
                if (u(r) < 0.5) y |= singleton(j);
        const auto hard = em_posterior(f, y, PosteriorForm::Hard);
        const auto soft = em_posterior(f, y, PosteriorForm::Soft);
        const int z_in = predict_within(f, y);
        double res = 0.0, sum = 0.0;
        for (int j = 0; j < c; ++j) {
            res = std::max(res, std::abs(hard[j] - (j == z_in ? 1.0 : 0.0)));
            if (!contains(y, j)) res = std::max(res, std::abs(soft[j]));
            sum += soft[j];
        }
        return std::max(res, std::abs(sum - 1.0));
    });
    report.checks.push_back(check("posterior_forms", posterior, 1e-12));

    // Likelihood part: brute-force sum equals κ·n·R2, and picking the best of
    // several relabelings by likelihood agrees with picking by R2.
    double like_res = 0.0;
    int disagreements = 0;
    const int trials = std::min(count, 200);
    for (int t = 0; t < trials; ++t) {
        const ClusterAssignment base = random_assignment(30, 4, 3, rng);
        const double kappa = 5.0;
        double best_like = -INFINITY, best_r2 = -INFINITY;
        int arg_like = -1, arg_r2 = -1;
        for (int cand = 0; cand < 4; ++cand) {
            ClusterAssignment a = base;
            if (cand > 0) {
                // Random relabeling that keeps every cluster non-empty.
                std::uniform_int_distribution<int> pick(0, 2);
                for (std::size_t i = 3; i < a.size(); ++i) a.labels[i] = pick(rng);
            }
            const double like = brute_force_log_likelihood(a, kappa);
            const double r2 = r1_r2(a).r2;
            like_res = std::max(like_res, std::abs(like - kappa * static_cast<double>(a.size()) * r2));
            if (like > best_like) {
                best_like = like;
                arg_like = cand;
            }
            if (r2 > best_r2) {
                best_r2 = r2;
                arg_r2 = cand;
            }
        }
        disagreements += arg_like != arg_r2;
    }
    report.checks.push_back(check("likelihood_equals_kappa_n_r2", like_res, 1e-9));
    report.checks.push_back(check("likelihood_relabeling_argmax", disagreements, 0.0,
                                  std::to_string(trials) + " instances of 4 candidate labelings"));

    // Adding orthogonal noise in ± pairs strictly lowers R2.
    double noise_res = 0.0;
    for (int t = 0; t < std::min(count, 100); ++t) {
        const std::size_t d = 6;
        const std::vector<double> m = random_unit(d, rng);
        std::vector<std::vector<double>> eps;
        std::normal_distribution<double> n01(0.0, 1.0);
        for (int p = 0; p < 5; ++p) {
            std::vector<double> e(d);
            for (double& v : e) v = n01(rng);
            const double along = dot(e, m);
            for (std::size_t k = 0; k < d; ++k) e[k] -= along * m[k];
            eps.push_back(e);
        }
        double prev = INFINITY;
        for (int step = 0; step <= 20; ++step) {
            const double scale = 0.1 * step;
            ClusterAssignment a{Tensor::zeros(2 * eps.size(), d), std::vector<int>(2 * eps.size(), 0), 1};
            for (std::size_t p = 0; p < eps.size(); ++p) {
                for (int sign : {1, -1}) {
                    auto row = a.embeddings.row(2 * p + (sign < 0));
                    for (std::size_t k = 0; k < d; ++k) row[k] = m[k] + sign * scale * eps[p][k];
                    const double len = norm2(row);
                    for (double& v : row) v /= len;
                }
            }
            const double r2 = r1_r2(a).r2;
            if (r2 >= prev) noise_res = std::max(noise_res, r2 - prev + 1e-300);
            prev = r2;
        }
    }
    report.checks.push_back(check("noise_lowers_r2", noise_res, 0.0, "strictly decreasing over 21 noise levels"));
    return report;
}

}  // namespace pico::theory
