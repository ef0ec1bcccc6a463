#pragma once

#include <span>
#include <vector>

#include "pico/pico.hpp"

namespace pico {

enum class SelectionMode {
    Distance,  // similarity to the predicted-class prototype
    SmallLoss, // lowest cross-entropy against the current pseudo-target
};

std::string to_string(SelectionMode m);
SelectionMode parse_selection_mode(std::string_view s);

struct PicoPlusConfig {
    double delta = 0.6;        // fraction of examples kept as clean
    std::size_t k = 16;        // neighbours for the kNN positive set
    double mix_shape = 4.0;    // Beta(ς, ς)
    double alpha = 2.0;        // weight of the clean PiCO loss
    double beta = 0.1;         // weight of the noisy-side losses
    int knn_enable_epoch = 100;
    // Plain PiCO runs on all data until this epoch (and through the PiCO warm-up).
    int start_epoch = 0;
    bool mixup = true;
    SelectionMode selection = SelectionMode::Distance;

    void validate() const;
};

/// Partition of the training set into examples treated as clean PLL data and
/// examples treated as unlabeled.
struct CleanSplit {
    std::vector<bool> is_clean;
    std::vector<std::size_t> clean;
    std::vector<std::size_t> noisy;
    double threshold = 0.0;  // κ_δ; membership is strictly above it
};

/// κ_δ is the value at rank round(δ·n) of the scores sorted descending
/// (−∞ when that rank is n); clean = { i : score_i > κ_δ }.
CleanSplit select_clean(std::span<const double> scores, double delta);

/// Label used to match positives in the noisy contrastive loss: the in-set
/// prediction for clean examples, the unrestricted argmax otherwise.
int noisy_anchor_label(std::span<const double> probs, LabelSet candidates, bool clean);

std::vector<std::uint32_t> noisy_positive_set(const Pool& pool, std::size_t anchor, int label);

/// The k pool columns most similar to the anchor among A(x) (ties to the
/// lower column). `similarities` is the anchor's row over all pool columns.
std::vector<std::uint32_t> knn_positive_set(std::span<const double> similarities, std::size_t anchor, std::size_t k);

/// Prototype softmax over all classes: s′_j ∝ exp(q·μ_j/τ).
std::vector<double> guess_labels(std::span<const double> q, const PrototypeBank& bank, double tau);

struct MixedBatch {
    Tensor inputs;   // [B × d_in]
    Tensor targets;  // [B × C]
    std::vector<std::size_t> partner;
    std::vector<double> sigma;
};

/// x^m_i = σ_i·x_i + (1−σ_i)·x_π(i), s^m_i = σ_i·ŝ_i + (1−σ_i)·ŝ_π(i),
/// π a seeded shuffle of the batch, σ_i ~ Beta(ς, ς).
MixedBatch mixup_batch(const Tensor& views, const Tensor& targets, double shape, Rng& rng);
// Same interpolation with explicit pairing and mixing weights.
MixedBatch mix_pairs(const Tensor& views, const Tensor& targets, std::span<const std::size_t> partner,
                     std::span<const double> sigma);

double sample_beta(double a, double b, Rng& rng);

/// Similarities q_i·μ_{ỹ_i} from an augmentation-free pass over the data.
std::vector<double> prototype_similarities(const ModelState& model, const PrototypeBank& bank,
                                           const TrainingData& data);

CleanSplit compute_split(const TrainState& state, const TrainingData& data, const PicoPlusConfig& config);

/// One PiCO+ epoch. Before max(`config.warmup_epochs`, `plus.start_epoch`)
/// this is exactly a PiCO epoch. Afterwards the clean split is recomputed once, then per batch
///   L = L_mix + α·L_clean + β·(L_n-cont + L_knn + L_n-cls).
EpochMetrics picoplus_epoch(TrainState& state, const TrainingData& data, const PicoConfig& config,
                            const PicoPlusConfig& plus, int epoch, const TrainingData* test = nullptr);

}  // namespace pico
