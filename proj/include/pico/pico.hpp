#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pico/datagen.hpp"
#include "pico/networks.hpp"

namespace pico {

// Configuration ------------------------------------------------------------

enum class PositiveStrategy {
    SameLabel,   // pool elements sharing the anchor's predicted label
    Filter,      // additionally drop pairs with dissimilar candidate sets early on
    Threshold,   // additionally drop low-confidence anchors late in training
};

enum class TargetPolicy {
    Pico,                  // moving average towards the nearest in-set prototype
    OneHotPrototype,       // nearest in-set prototype, no averaging
    SoftPrototypeProbs,    // prototype softmax over the candidate set
    MASoftPrototypeProbs,  // moving average towards the prototype softmax
    Uniform,               // no disambiguation
};

enum class PrototypeMode {
    MovingAverage,
    Recompute,  // class means of all training embeddings at each epoch end
};

std::string to_string(PositiveStrategy s);
std::string to_string(TargetPolicy p);
std::string to_string(PrototypeMode m);
PositiveStrategy parse_positive_strategy(std::string_view s);
TargetPolicy parse_target_policy(std::string_view s);
PrototypeMode parse_prototype_mode(std::string_view s);

struct PicoConfig {
    double tau = 0.07;
    double lambda = 0.5;
    double gamma = 0.99;  // prototype momentum
    double phi_start = 0.95;
    double phi_end = 0.8;
    int warmup_epochs = 1;

    PositiveStrategy positives = PositiveStrategy::SameLabel;
    double filter_rho = 0.5;
    int filter_until_epoch = 0;
    double confidence_threshold = 0.95;
    int threshold_from_epoch = 0;

    TargetPolicy policy = TargetPolicy::Pico;
    PrototypeMode prototype_mode = PrototypeMode::MovingAverage;

    // Optimization and augmentation.
    int total_epochs = 800;
    std::size_t batch_size = 256;
    double base_lr = 0.01;
    double sgd_momentum = 0.9;
    double key_momentum = 0.999;
    std::size_t queue_size = 8192;
    AugmentSpec augment{0.1, 0.05, 0.1, 0.0};

    void validate() const;
    // φ for an epoch: linear from phi_start at epoch 0 towards phi_end at total_epochs.
    double phi(int epoch) const;
};

// State --------------------------------------------------------------------

/// One unit-norm prototype per class.
class PrototypeBank {
public:
    PrototypeBank() = default;
    PrototypeBank(int num_classes, std::size_t dim, Rng& rng);
    explicit PrototypeBank(Tensor unit_rows);

    int num_classes() const { return static_cast<int>(mu_.rows()); }
    std::size_t dim() const { return mu_.cols(); }
    std::span<const double> operator[](int c) const { return mu_.row(static_cast<std::size_t>(c)); }
    const Tensor& matrix() const { return mu_; }

    /// μ_c ← Normalize(γ·μ_c + (1−γ)·q). A zero blend keeps the old μ_c.
    void update(std::span<const double> q, int label, double gamma);
    /// μ_c ← Normalize(mean of embeddings labelled c); classes without members keep μ_c.
    void recompute(const Tensor& embeddings, std::span<const int> labels);

    friend bool operator==(const PrototypeBank&, const PrototypeBank&) = default;

private:
    Tensor mu_;
};

/// What the pool remembers about an embedding besides the vector itself.
struct PoolTag {
    int label = 0;        // within-candidate prediction ỹ
    int noisy_label = 0;  // label used for the noisy positive set (ŷ)
    bool clean = true;
    std::size_t example = 0;

    friend bool operator==(const PoolTag&, const PoolTag&) = default;
};

/// Fixed-capacity FIFO of key embeddings and their tags.
class EmbeddingQueue {
public:
    EmbeddingQueue() = default;
    EmbeddingQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {}

    void push(std::span<const double> embedding, const PoolTag& tag);
    std::size_t size() const { return tags_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::size_t dim() const { return dim_; }
    // Oldest first.
    std::span<const double> embedding(std::size_t i) const { return {rows_[i].data(), dim_}; }
    const PoolTag& tag(std::size_t i) const { return tags_[i]; }

private:
    std::size_t capacity_ = 0;
    std::size_t dim_ = 0;
    std::deque<std::vector<double>> rows_;
    std::deque<PoolTag> tags_;
};

/// Contrastive pool A = B_q ∪ B_k ∪ queue. Columns 0..B−1 are the batch
/// queries, B..2B−1 the batch keys, the rest the queue oldest first.
struct Pool {
    std::size_t batch = 0;
    Tensor keys;  // [(B + |queue|) × d]: batch keys then queue
    std::vector<PoolTag> tags;  // one per column, size 2B + |queue|

    std::size_t size() const { return tags.size(); }
    // Size of A(x): the pool without the anchor's own query.
    std::size_t size_without_anchor() const { return tags.size() - 1; }
};

Pool build_pool(std::span<const PoolTag> batch_tags, const Tensor& batch_keys, const EmbeddingQueue& queue);

struct TrainingData {
    int num_classes = 0;
    Tensor features;  // [n × d_in]
    std::vector<LabelSet> candidates;
    std::vector<int> truth;  // evaluation only

    std::size_t size() const { return truth.size(); }
    static TrainingData from(const PartialDataset& d);
};

struct TrainState {
    ModelState model;
    Tensor targets;  // pseudo-targets s, [n × C]
    PrototypeBank prototypes;
    EmbeddingQueue queue;
    Rng rng;

    /// Uniform pseudo-targets over each candidate set, random unit prototypes,
    /// key network equal to the query network.
    static TrainState init(const EncoderConfig& enc, const TrainingData& data, std::size_t queue_size,
                           std::uint64_t seed);
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double phi = 0.0;
    double loss_cls = 0.0;
    double loss_cont = 0.0;
    double loss_total = 0.0;
    double pseudo_target_accuracy = 0.0;
    double mmc = 0.0;
    double test_accuracy = 0.0;
    // Robust training only.
    bool has_split = false;
    double clean_fraction = 0.0;
    double clean_precision = 0.0;
    double clean_recall = 0.0;
    double loss_clean = 0.0;
    double loss_noisy_cont = 0.0;
    double loss_knn = 0.0;
    double loss_noisy_cls = 0.0;
    double loss_mix = 0.0;
};

// Operations ---------------------------------------------------------------

/// Σ_j −s_j·log max(f_j, 1e-12).
double classification_loss(std::span<const double> probs, std::span<const double> target);

/// Pool columns (excluding the anchor's own query at column `anchor`) whose
/// label equals `label`.
std::vector<std::uint32_t> select_positives(const Pool& pool, std::size_t anchor, int label);

/// Standalone per-sample contrastive loss
///   −(1/|P|)·Σ_{k+∈P} log( exp(q·k+/τ) / Σ_{k′∈A(x)} exp(q·k′/τ) ),
/// 0 when P is empty.
double contrastive_loss(std::span<const double> q, std::span<const std::vector<double>> positives,
                        std::span<const std::vector<double>> pool_without_anchor, double tau);

/// New pseudo-target for one example under `policy`; support stays inside Y.
std::vector<double> disambiguate(std::span<const double> s, std::span<const double> q, const PrototypeBank& bank,
                                 LabelSet candidates, double phi, TargetPolicy policy, double tau);

/// argmax over candidates of q·μ_j, smallest index on ties.
int nearest_prototype(std::span<const double> q, const PrototypeBank& bank, LabelSet candidates);

/// Mean of max_j s_j over rows.
double mean_max_confidence(const Tensor& targets);
double pseudo_target_accuracy(const Tensor& targets, std::span<const int> truth);
double test_accuracy(const ModelState& model, const TrainingData& test);

/// One PiCO epoch: views → embeddings → pool → predictions, prototype updates
/// and positives → disambiguation → L_cls + λ·L_cont → SGD → key momentum
/// update → enqueue. During warm-up λ is 0 and targets stay uniform.
EpochMetrics pico_epoch(TrainState& state, const TrainingData& data, const PicoConfig& config, int epoch,
                        const TrainingData* test = nullptr);

}  // namespace pico
