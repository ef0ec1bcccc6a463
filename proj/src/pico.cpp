#include "pico/pico.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "epoch.hpp"

namespace pico {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::pair<std::string_view, E> (&table)[N], const char* what) {
    for (const auto& [name, value] : table)
        if (name == s) return value;
    throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

constexpr std::pair<std::string_view, PositiveStrategy> kStrategies[] = {
    {"same-label", PositiveStrategy::SameLabel},
    {"filter", PositiveStrategy::Filter},
    {"threshold", PositiveStrategy::Threshold},
};
constexpr std::pair<std::string_view, TargetPolicy> kPolicies[] = {
    {"pico", TargetPolicy::Pico},
    {"onehot-prototype", TargetPolicy::OneHotPrototype},
    {"soft-prototype", TargetPolicy::SoftPrototypeProbs},
    {"ma-soft-prototype", TargetPolicy::MASoftPrototypeProbs},
    {"uniform", TargetPolicy::Uniform},
};
constexpr std::pair<std::string_view, PrototypeMode> kModes[] = {
    {"moving-average", PrototypeMode::MovingAverage},
    {"recompute", PrototypeMode::Recompute},
};

template <typename E, std::size_t N>
std::string enum_name(E v, const std::pair<std::string_view, E> (&table)[N]) {
    for (const auto& [name, value] : table)
        if (value == v) return std::string(name);
    return "?";
}

}  // namespace

std::string to_string(PositiveStrategy s) { return enum_name(s, kStrategies); }
std::string to_string(TargetPolicy p) { return enum_name(p, kPolicies); }
std::string to_string(PrototypeMode m) { return enum_name(m, kModes); }
PositiveStrategy parse_positive_strategy(std::string_view s) { return parse_enum(s, kStrategies, "positive strategy"); }
TargetPolicy parse_target_policy(std::string_view s) { return parse_enum(s, kPolicies, "target policy"); }
PrototypeMode parse_prototype_mode(std::string_view s) { return parse_enum(s, kModes, "prototype mode"); }

void PicoConfig::validate() const {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
    if (!unit(gamma)) throw std::invalid_argument("gamma must lie in [0,1]");
    if (!unit(phi_start) || !unit(phi_end)) throw std::invalid_argument("phi must lie in [0,1]");
    if (warmup_epochs < 0 || total_epochs < 0) throw std::invalid_argument("epoch counts must be non-negative");
    if (batch_size < 1) throw std::invalid_argument("batch size must be ≥ 1");
    if (!(base_lr > 0.0)) throw std::invalid_argument("base learning rate must be positive");
    if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) throw std::invalid_argument("SGD momentum must lie in [0,1)");
    if (!unit(key_momentum)) throw std::invalid_argument("key momentum must lie in [0,1]");
    if (!unit(confidence_threshold) || !unit(filter_rho)) throw std::invalid_argument("filter/threshold must lie in [0,1]");
    if (!unit(augment.mask_prob_query) || !unit(augment.mask_prob_key) || augment.noise_sigma_query < 0.0 ||
        augment.noise_sigma_key < 0.0)
        throw std::invalid_argument("augmentation strengths out of range");
}

double PicoConfig::phi(int epoch) const {
    if (total_epochs == 0) return phi_start;
    return phi_start + (phi_end - phi_start) * static_cast<double>(epoch) / static_cast<double>(total_epochs);
}

// PrototypeBank ---------------------------------------------------------------

PrototypeBank::PrototypeBank(int num_classes, std::size_t dim, Rng& rng) : mu_(Tensor::zeros(num_classes, dim)) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int c = 0; c < num_classes; ++c) {
        auto row = mu_.row(c);
        for (double& v : row) v = normal(rng);
        const double n = norm2(row);
        for (double& v : row) v /= n;
    }
}

PrototypeBank::PrototypeBank(Tensor unit_rows) : mu_(std::move(unit_rows)) {}

void PrototypeBank::update(std::span<const double> q, int label, double gamma) {
    auto row = mu_.row(static_cast<std::size_t>(label));
    std::vector<double> blended(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) blended[j] = gamma * row[j] + (1.0 - gamma) * q[j];
    const double n = norm2(blended);
    if (!(n > 0.0)) return;
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = blended[j] / n;
}

void PrototypeBank::recompute(const Tensor& embeddings, std::span<const int> labels) {
    Tensor sums = Tensor::zeros(mu_.rows(), mu_.cols());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto src = embeddings.row(i);
        auto dst = sums.row(static_cast<std::size_t>(labels[i]));
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    for (std::size_t c = 0; c < mu_.rows(); ++c) {
        auto s = sums.row(c);
        const double n = norm2(s);
        if (!(n > 0.0)) continue;
        auto row = mu_.row(c);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = s[j] / n;
    }
}

// EmbeddingQueue ---------------------------------------------------------------

void EmbeddingQueue::push(std::span<const double> embedding, const PoolTag& tag) {
    if (capacity_ == 0) return;
    if (embedding.size() != dim_) throw ShapeError("queue: embedding width mismatch");
    if (rows_.size() == capacity_) {
        rows_.pop_front();
        tags_.pop_front();
    }
    rows_.emplace_back(embedding.begin(), embedding.end());
    tags_.push_back(tag);
}

Pool build_pool(std::span<const PoolTag> batch_tags, const Tensor& batch_keys, const EmbeddingQueue& queue) {
    const std::size_t b = batch_tags.size();
    if (batch_keys.rows() != b) throw ShapeError("build_pool: one key per batch example required");
    const std::size_t d = batch_keys.cols();
    Pool pool;
    pool.batch = b;
    pool.keys = Tensor::zeros(b + queue.size(), d);
    std::copy(batch_keys.values().begin(), batch_keys.values().end(), pool.keys.values().begin());
    for (std::size_t r = 0; r < queue.size(); ++r) {
        auto src = queue.embedding(r);
        std::copy(src.begin(), src.end(), pool.keys.row(b + r).begin());
    }
    pool.tags.reserve(2 * b + queue.size());
    pool.tags.insert(pool.tags.end(), batch_tags.begin(), batch_tags.end());
    pool.tags.insert(pool.tags.end(), batch_tags.begin(), batch_tags.end());
    for (std::size_t r = 0; r < queue.size(); ++r) pool.tags.push_back(queue.tag(r));
    return pool;
}

TrainingData TrainingData::from(const PartialDataset& d) {
    TrainingData t;
    t.num_classes = d.num_classes;
    t.features = Tensor::zeros(d.size(), d.dim);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto& e = d.examples[i];
        std::copy(e.features.begin(), e.features.end(), t.features.row(i).begin());
        t.candidates.push_back(e.candidates);
        t.truth.push_back(e.hidden_true_label);
    }
    return t;
}

TrainState TrainState::init(const EncoderConfig& enc, const TrainingData& data, std::size_t queue_size,
                            std::uint64_t seed) {
    TrainState st;
    st.rng = Rng(seed);
    st.model = ModelState(enc, st.rng());
    st.prototypes = PrototypeBank(enc.num_classes, enc.d_emb, st.rng);
    st.queue = EmbeddingQueue(queue_size, enc.d_emb);
    st.targets = Tensor::zeros(data.size(), static_cast<std::size_t>(enc.num_classes));
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double w = 1.0 / set_size(data.candidates[i]);
        for (int j : members(data.candidates[i])) st.targets(i, j) = w;
    }
    return st;
}

// Operations -------------------------------------------------------------------

double classification_loss(std::span<const double> probs, std::span<const double> target) {
    if (probs.size() != target.size()) throw ShapeError("classification_loss: length mismatch");
    double s = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j)
        if (target[j] != 0.0) s -= target[j] * std::log(std::max(probs[j], ad::kLogClamp));
    return s;
}

std::vector<std::uint32_t> select_positives(const Pool& pool, std::size_t anchor, int label) {
    std::vector<std::uint32_t> p;
    for (std::size_t j = 0; j < pool.size(); ++j)
        if (j != anchor && pool.tags[j].label == label) p.push_back(static_cast<std::uint32_t>(j));
    return p;
}

double contrastive_loss(std::span<const double> q, std::span<const std::vector<double>> positives,
                        std::span<const std::vector<double>> pool, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
    if (positives.empty()) return 0.0;
    double mx = -INFINITY;
    for (const auto& k : pool) mx = std::max(mx, dot(q, k) / tau);
    double z = 0.0;
    for (const auto& k : pool) z += std::exp(dot(q, k) / tau - mx);
    const double lse = mx + std::log(z);
    double acc = 0.0;
    for (const auto& k : positives) acc += dot(q, k) / tau - lse;
    return -acc / static_cast<double>(positives.size());
}

int nearest_prototype(std::span<const double> q, const PrototypeBank& bank, LabelSet candidates) {
    int best = -1;
    double best_sim = -INFINITY;
    for (int j = 0; j < bank.num_classes(); ++j) {
        if (!contains(candidates, j)) continue;
        const double s = dot(q, bank[j]);
        if (best < 0 || s > best_sim) {
            best = j;
            best_sim = s;
        }
    }
    if (best < 0) throw std::invalid_argument("nearest_prototype: empty candidate set");
    return best;
}

namespace {

std::vector<double> soft_prototype_probs(std::span<const double> q, const PrototypeBank& bank, LabelSet y,
                                         double tau) {
    const int c = bank.num_classes();
    std::vector<double> logits(c, -INFINITY);
    double mx = -INFINITY;
    for (int j = 0; j < c; ++j)
        if (contains(y, j)) mx = std::max(mx, logits[j] = dot(q, bank[j]) / tau);
    std::vector<double> p(c, 0.0);
    double z = 0.0;
    for (int j = 0; j < c; ++j)
        if (contains(y, j)) z += p[j] = std::exp(logits[j] - mx);
    for (double& v : p) v /= z;
    return p;
}

}  // namespace

std::vector<double> disambiguate(std::span<const double> s, std::span<const double> q, const PrototypeBank& bank,
                                 LabelSet candidates, double phi, TargetPolicy policy, double tau) {
    const int c = bank.num_classes();
    std::vector<double> out(c, 0.0);
    switch (policy) {
        case TargetPolicy::Pico:
        case TargetPolicy::OneHotPrototype: {
            const double keep = policy == TargetPolicy::Pico ? phi : 0.0;
            const int z = nearest_prototype(q, bank, candidates);
            for (int j = 0; j < c; ++j) out[j] = keep * s[j] + (1.0 - keep) * (j == z ? 1.0 : 0.0);
            break;
        }
        case TargetPolicy::SoftPrototypeProbs:
            out = soft_prototype_probs(q, bank, candidates, tau);
            break;
        case TargetPolicy::MASoftPrototypeProbs: {
            const auto p = soft_prototype_probs(q, bank, candidates, tau);
            for (int j = 0; j < c; ++j) out[j] = phi * s[j] + (1.0 - phi) * p[j];
            break;
        }
        case TargetPolicy::Uniform: {
            const double w = 1.0 / set_size(candidates);
            for (int j : members(candidates)) out[j] = w;
            break;
        }
    }
    return out;
}

double mean_max_confidence(const Tensor& targets) {
    if (targets.rows() == 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < targets.rows(); ++i) {
        auto r = targets.row(i);
        s += *std::max_element(r.begin(), r.end());
    }
    return s / static_cast<double>(targets.rows());
}

double pseudo_target_accuracy(const Tensor& targets, std::span<const int> truth) {
    if (truth.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        hits += predict_any(targets.row(i)) == truth[i];
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double test_accuracy(const ModelState& model, const TrainingData& test) {
    if (test.size() == 0) return 0.0;
    const Evaluation ev = evaluate(model, test.features);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i) hits += predict_any(ev.probs.row(i)) == test.truth[i];
    return static_cast<double>(hits) / static_cast<double>(test.size());
}

EpochMetrics pico_epoch(TrainState& state, const TrainingData& data, const PicoConfig& config, int epoch,
                        const TrainingData* test) {
    return detail::run_epoch(state, data, config, nullptr, epoch, test);
}

}  // namespace pico
