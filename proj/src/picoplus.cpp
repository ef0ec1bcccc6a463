#include "pico/picoplus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "epoch.hpp"

namespace pico {

std::string to_string(SelectionMode m) { return m == SelectionMode::Distance ? "distance" : "small-loss"; }

SelectionMode parse_selection_mode(std::string_view s) {
    if (s == "distance") return SelectionMode::Distance;
    if (s == "small-loss") return SelectionMode::SmallLoss;
    throw std::invalid_argument("unknown selection mode '" + std::string(s) + "'");
}

void PicoPlusConfig::validate() const {
    if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must lie in (0,1]");
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    if (!(mix_shape > 0.0)) throw std::invalid_argument("mix_shape must be positive");
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw std::invalid_argument("alpha and beta must be non-negative");
    if (knn_enable_epoch < 0) throw std::invalid_argument("knn_enable_epoch must be non-negative");
    if (start_epoch < 0) throw std::invalid_argument("start_epoch must be non-negative");
}

CleanSplit select_clean(std::span<const double> scores, double delta) {
    if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must lie in (0,1]");
    const std::size_t n = scores.size();
    CleanSplit split;
    split.is_clean.assign(n, false);
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const auto rank = static_cast<std::size_t>(std::llround(delta * static_cast<double>(n)));
    split.threshold = rank >= n ? -INFINITY : sorted[rank];
    for (std::size_t i = 0; i < n; ++i) {
        if (scores[i] > split.threshold) {
            split.is_clean[i] = true;
            split.clean.push_back(i);
        } else {
            split.noisy.push_back(i);
        }
    }
    return split;
}

int noisy_anchor_label(std::span<const double> probs, LabelSet candidates, bool clean) {
    return clean ? predict_within(probs, candidates) : predict_any(probs);
}

std::vector<std::uint32_t> noisy_positive_set(const Pool& pool, std::size_t anchor, int label) {
    std::vector<std::uint32_t> p;
    for (std::size_t j = 0; j < pool.size(); ++j)
        if (j != anchor && pool.tags[j].noisy_label == label) p.push_back(static_cast<std::uint32_t>(j));
    return p;
}

std::vector<std::uint32_t> knn_positive_set(std::span<const double> similarities, std::size_t anchor, std::size_t k) {
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    std::vector<std::uint32_t> cols;
    for (std::size_t j = 0; j < similarities.size(); ++j)
        if (j != anchor) cols.push_back(static_cast<std::uint32_t>(j));
    const std::size_t take = std::min(k, cols.size());
    std::partial_sort(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(take), cols.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                          if (similarities[a] != similarities[b]) return similarities[a] > similarities[b];
                          return a < b;
                      });
    cols.resize(take);
    std::sort(cols.begin(), cols.end());
    return cols;
}

std::vector<double> guess_labels(std::span<const double> q, const PrototypeBank& bank, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
    const int c = bank.num_classes();
    std::vector<double> p(c);
    double mx = -INFINITY;
    for (int j = 0; j < c; ++j) mx = std::max(mx, p[j] = dot(q, bank[j]) / tau);
    double z = 0.0;
    for (double& v : p) z += v = std::exp(v - mx);
    for (double& v : p) v /= z;
    return p;
}

double sample_beta(double a, double b, Rng& rng) {
    std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    // Both draws underflow only for tiny shapes; split the mass evenly then.
    return x + y > 0.0 ? x / (x + y) : 0.5;
}

MixedBatch mix_pairs(const Tensor& views, const Tensor& targets, std::span<const std::size_t> partner,
                     std::span<const double> sigma) {
    const std::size_t b = views.rows();
    if (targets.rows() != b || partner.size() != b || sigma.size() != b)
        throw ShapeError("mix_pairs: batch sizes disagree");
    MixedBatch out{Tensor::zeros(b, views.cols()), Tensor::zeros(b, targets.cols()),
                   std::vector<std::size_t>(partner.begin(), partner.end()),
                   std::vector<double>(sigma.begin(), sigma.end())};
    auto blend = [](std::span<const double> x, std::span<const double> y, double w, std::span<double> dst) {
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = w * x[j] + (1.0 - w) * y[j];
    };
    for (std::size_t i = 0; i < b; ++i) {
        if (partner[i] >= b) throw std::out_of_range("mix_pairs: partner index out of range");
        blend(views.row(i), views.row(partner[i]), sigma[i], out.inputs.row(i));
        blend(targets.row(i), targets.row(partner[i]), sigma[i], out.targets.row(i));
    }
    return out;
}

MixedBatch mixup_batch(const Tensor& views, const Tensor& targets, double shape, Rng& rng) {
    if (!(shape > 0.0)) throw std::invalid_argument("mixup shape must be positive");
    std::vector<std::size_t> partner(views.rows());
    std::iota(partner.begin(), partner.end(), std::size_t{0});
    std::shuffle(partner.begin(), partner.end(), rng);
    std::vector<double> sigma(partner.size());
    for (double& s : sigma) s = sample_beta(shape, shape, rng);
    return mix_pairs(views, targets, partner, sigma);
}

std::vector<double> prototype_similarities(const ModelState& model, const PrototypeBank& bank,
                                           const TrainingData& data) {
    const Evaluation ev = evaluate(model, data.features);
    std::vector<double> sims(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int y = predict_within(ev.probs.row(i), data.candidates[i]);
        sims[i] = dot(ev.embeddings.row(i), bank[y]);
    }
    return sims;
}

CleanSplit compute_split(const TrainState& state, const TrainingData& data, const PicoPlusConfig& config) {
    if (config.selection == SelectionMode::Distance)
        return select_clean(prototype_similarities(state.model, state.prototypes, data), config.delta);
    // Small-loss: negate the loss so that "larger is cleaner" still holds.
    const Evaluation ev = evaluate(state.model, data.features);
    std::vector<double> scores(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        scores[i] = -classification_loss(ev.probs.row(i), state.targets.row(i));
    return select_clean(scores, config.delta);
}

EpochMetrics picoplus_epoch(TrainState& state, const TrainingData& data, const PicoConfig& config,
                            const PicoPlusConfig& plus, int epoch, const TrainingData* test) {
    return detail::run_epoch(state, data, config, &plus, epoch, test);
}

}  // namespace pico
