#include "epoch.hpp"

#include <algorithm>
#include <numeric>
#include <optional>

#include "pico/numerics/optim.hpp"

namespace pico::detail {

namespace {

double jaccard(LabelSet a, LabelSet b) {
    const int uni = set_size(a | b);
    return uni == 0 ? 0.0 : static_cast<double>(set_size(a & b)) / uni;
}

struct BatchLosses {
    double cls = 0.0, cont = 0.0, total = 0.0;
    double clean = 0.0, noisy_cont = 0.0, knn = 0.0, noisy_cls = 0.0, mix = 0.0;
};

class EpochRunner {
public:
    EpochRunner(TrainState& st, const TrainingData& data, const PicoConfig& cfg, const PicoPlusConfig* plus,
                int epoch)
        : st_(st), data_(data), cfg_(cfg), plus_(plus), epoch_(epoch) {
        warmup_ = epoch < cfg.warmup_epochs;
        if (plus_ && !warmup_ && epoch >= plus_->start_epoch) split_ = compute_split(st_, data_, *plus_);
        lr_ = cosine_lr(epoch, std::max(cfg.total_epochs, epoch), cfg.base_lr);
        phi_ = cfg.phi(epoch);
    }

    const std::optional<CleanSplit>& split() const { return split_; }
    double lr() const { return lr_; }
    double phi() const { return phi_; }

    BatchLosses step(std::span<const std::size_t> idx);

private:
    bool clean(std::size_t example) const { return !split_ || split_->is_clean[example]; }
    std::vector<std::uint32_t> pico_positives(const Pool& pool, std::size_t anchor, const Tensor& probs,
                                              std::span<const std::size_t> idx) const;

    TrainState& st_;
    const TrainingData& data_;
    const PicoConfig& cfg_;
    const PicoPlusConfig* plus_;
    int epoch_;
    bool warmup_ = false;
    double lr_ = 0.0;
    double phi_ = 0.0;
    std::optional<CleanSplit> split_;
};

std::vector<std::uint32_t> EpochRunner::pico_positives(const Pool& pool, std::size_t anchor, const Tensor& probs,
                                                       std::span<const std::size_t> idx) const {
    const PoolTag& me = pool.tags[anchor];
    if (cfg_.positives == PositiveStrategy::Threshold && epoch_ >= cfg_.threshold_from_epoch) {
        auto row = probs.row(anchor);
        if (*std::max_element(row.begin(), row.end()) <= cfg_.confidence_threshold) return {};
    }
    const bool filter = cfg_.positives == PositiveStrategy::Filter && epoch_ < cfg_.filter_until_epoch;
    const LabelSet my_set = data_.candidates[idx[anchor]];
    std::vector<std::uint32_t> p;
    for (std::size_t j = 0; j < pool.size(); ++j) {
        if (j == anchor) continue;
        const PoolTag& t = pool.tags[j];
        if (t.label != me.label || !t.clean) continue;
        if (filter && jaccard(my_set, data_.candidates[t.example]) <= cfg_.filter_rho) continue;
        p.push_back(static_cast<std::uint32_t>(j));
    }
    return p;
}

BatchLosses EpochRunner::step(std::span<const std::size_t> idx) {
    const std::size_t b = idx.size();
    const std::size_t din = data_.features.cols();
    const int c = data_.num_classes;
    const bool robust = split_.has_value();

    // Views.
    Tensor xq = Tensor::zeros(b, din), xk = Tensor::zeros(b, din);
    for (std::size_t i = 0; i < b; ++i) {
        const Views v = two_views(data_.features.row(idx[i]), cfg_.augment, st_.rng);
        std::copy(v.query.begin(), v.query.end(), xq.row(i).begin());
        std::copy(v.key.begin(), v.key.end(), xk.row(i).begin());
    }

    // Query and key embeddings.
    ad::Tape tape;
    const BoundModel bound = bind(tape, st_.model);
    const QueryForward fwd = forward_query(tape, bound, xq);
    const Tensor keys = forward_key(st_.model, xk);
    const Tensor& q = tape.value(fwd.embedding);
    Tensor probs = tape.value(fwd.log_probs);
    for (double& v : probs.values()) v = std::exp(v);

    // Predictions and prototype updates, in example order.
    std::vector<PoolTag> tags(b);
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t ex = idx[i];
        tags[i].example = ex;
        tags[i].clean = clean(ex);
        tags[i].label = predict_within(probs.row(i), data_.candidates[ex]);
        tags[i].noisy_label = robust ? noisy_anchor_label(probs.row(i), data_.candidates[ex], tags[i].clean)
                                     : tags[i].label;
        if (cfg_.prototype_mode == PrototypeMode::MovingAverage && tags[i].clean)
            st_.prototypes.update(q.row(i), tags[i].label, cfg_.gamma);
    }
    const Pool pool = build_pool(tags, keys, st_.queue);

    // Disambiguation over every example in the batch.
    if (!warmup_) {
        for (std::size_t i = 0; i < b; ++i) {
            auto s = st_.targets.row(idx[i]);
            const auto next = disambiguate(s, q.row(i), st_.prototypes, data_.candidates[idx[i]], phi_, cfg_.policy,
                                           cfg_.tau);
            std::copy(next.begin(), next.end(), s.begin());
        }
    }

    // PiCO loss on the (clean) examples.
    std::vector<std::size_t> cls_rows;
    for (std::size_t i = 0; i < b; ++i)
        if (tags[i].clean) cls_rows.push_back(i);
    Tensor cls_targets = Tensor::zeros(cls_rows.size(), c);
    for (std::size_t r = 0; r < cls_rows.size(); ++r) {
        auto s = st_.targets.row(idx[cls_rows[r]]);
        std::copy(s.begin(), s.end(), cls_targets.row(r).begin());
    }
    const ad::Var l_cls = ad::soft_cross_entropy(tape, fwd.log_probs, cls_targets, cls_rows);

    const double lambda = warmup_ ? 0.0 : cfg_.lambda;
    const bool need_noisy_terms = robust && plus_->beta > 0.0;
    std::optional<ad::Var> sim;
    if (lambda > 0.0 || need_noisy_terms) sim = ad::pool_similarity(tape, fwd.embedding, pool.keys);

    ad::Var l_cont = tape.constant(Tensor::vector({0.0}));
    if (lambda > 0.0) {
        std::vector<ad::ContrastAnchor> anchors;
        for (std::size_t i : cls_rows) anchors.push_back({i, pico_positives(pool, i, probs, idx)});
        l_cont = ad::contrastive(tape, *sim, anchors, cfg_.tau);
    }
    const ad::Var pico_terms[] = {l_cls, l_cont};
    const double pico_weights[] = {1.0, lambda};
    const ad::Var l_pico = ad::weighted_sum(tape, pico_terms, pico_weights);

    BatchLosses out;
    out.cls = tape.value(l_cls)[0];
    out.cont = tape.value(l_cont)[0];
    ad::Var root = l_pico;

    if (robust) {
        const PicoPlusConfig& pc = *plus_;
        out.clean = tape.value(l_pico)[0];
        std::vector<ad::Var> terms;
        std::vector<double> weights;

        std::vector<std::vector<double>> guessed(b);
        for (std::size_t i = 0; i < b; ++i)
            if (!tags[i].clean) guessed[i] = guess_labels(q.row(i), st_.prototypes, cfg_.tau);

        if (pc.mixup) {
            Tensor hat = Tensor::zeros(b, c);
            for (std::size_t i = 0; i < b; ++i) {
                auto src = tags[i].clean ? std::span<const double>(st_.targets.row(idx[i]))
                                         : std::span<const double>(guessed[i]);
                std::copy(src.begin(), src.end(), hat.row(i).begin());
            }
            const MixedBatch mixed = mixup_batch(xq, hat, pc.mix_shape, st_.rng);
            const ad::Var logp_mix = forward_classifier(tape, bound, mixed.inputs);
            std::vector<std::size_t> all(b);
            std::iota(all.begin(), all.end(), std::size_t{0});
            const ad::Var l_mix = ad::soft_cross_entropy(tape, logp_mix, mixed.targets, all);
            out.mix = tape.value(l_mix)[0];
            terms.push_back(l_mix);
            weights.push_back(1.0);
        }
        terms.push_back(l_pico);
        weights.push_back(pc.alpha);

        if (need_noisy_terms) {
            const Tensor& s_val = tape.value(*sim);
            std::vector<ad::ContrastAnchor> noisy_anchors, knn_anchors;
            std::vector<std::size_t> noisy_rows;
            for (std::size_t i = 0; i < b; ++i) {
                noisy_anchors.push_back({i, noisy_positive_set(pool, i, tags[i].noisy_label)});
                if (!tags[i].clean) {
                    noisy_rows.push_back(i);
                    if (epoch_ >= pc.knn_enable_epoch) knn_anchors.push_back({i, knn_positive_set(s_val.row(i), i, pc.k)});
                }
            }
            const ad::Var l_ncont = ad::contrastive(tape, *sim, noisy_anchors, cfg_.tau);
            const ad::Var l_knn = ad::contrastive(tape, *sim, knn_anchors, cfg_.tau);
            Tensor guess_targets = Tensor::zeros(noisy_rows.size(), c);
            for (std::size_t r = 0; r < noisy_rows.size(); ++r)
                std::copy(guessed[noisy_rows[r]].begin(), guessed[noisy_rows[r]].end(), guess_targets.row(r).begin());
            const ad::Var l_ncls = ad::soft_cross_entropy(tape, fwd.log_probs, guess_targets, noisy_rows);
            out.noisy_cont = tape.value(l_ncont)[0];
            out.knn = tape.value(l_knn)[0];
            out.noisy_cls = tape.value(l_ncls)[0];
            terms.insert(terms.end(), {l_ncont, l_knn, l_ncls});
            weights.insert(weights.end(), {pc.beta, pc.beta, pc.beta});
        }
        root = ad::weighted_sum(tape, terms, weights);
    }
    out.total = tape.value(root)[0];

    // Network update, key momentum update, enqueue.
    auto params = st_.model.parameters();
    for (Parameter* p : params) p->zero_grad();
    tape.backward(root);
    sgd_momentum_step(params, lr_, cfg_.sgd_momentum);
    st_.model.momentum_update(cfg_.key_momentum);
    for (std::size_t i = 0; i < b; ++i) st_.queue.push(keys.row(i), tags[i]);
    return out;
}

}  // namespace

EpochMetrics run_epoch(TrainState& st, const TrainingData& data, const PicoConfig& cfg, const PicoPlusConfig* plus,
                       int epoch, const TrainingData* test) {
    cfg.validate();
    if (plus) plus->validate();
    if (data.size() == 0) throw std::invalid_argument("training set is empty");
    EpochRunner runner(st, data, cfg, plus, epoch);

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), st.rng);

    BatchLosses sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        const BatchLosses l = runner.step(std::span<const std::size_t>(order).subspan(start, end - start));
        sum.cls += l.cls, sum.cont += l.cont, sum.total += l.total;
        sum.clean += l.clean, sum.noisy_cont += l.noisy_cont, sum.knn += l.knn;
        sum.noisy_cls += l.noisy_cls, sum.mix += l.mix;
        ++batches;
    }

    if (cfg.prototype_mode == PrototypeMode::Recompute) {
        const Evaluation ev = evaluate(st.model, data.features);
        std::vector<int> labels;
        for (std::size_t i = 0; i < data.size(); ++i) labels.push_back(predict_within(ev.probs.row(i), data.candidates[i]));
        st.prototypes.recompute(ev.embeddings, labels);
    }

    const double nb = static_cast<double>(batches);
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = runner.lr();
    m.phi = runner.phi();
    m.loss_cls = sum.cls / nb;
    m.loss_cont = sum.cont / nb;
    m.loss_total = sum.total / nb;
    m.pseudo_target_accuracy = pseudo_target_accuracy(st.targets, data.truth);
    m.mmc = mean_max_confidence(st.targets);
    m.test_accuracy = test ? test_accuracy(st.model, *test) : 0.0;
    if (const auto& split = runner.split()) {
        m.has_split = true;
        std::size_t clean_hits = 0, reliable = 0, reliable_hits = 0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const bool ok = contains(data.candidates[i], data.truth[i]);
            reliable += ok;
            if (split->is_clean[i]) clean_hits += ok;
            if (split->is_clean[i] && ok) ++reliable_hits;
        }
        const double n = static_cast<double>(data.size());
        m.clean_fraction = static_cast<double>(split->clean.size()) / n;
        m.clean_precision = split->clean.empty() ? 0.0 : static_cast<double>(clean_hits) / split->clean.size();
        m.clean_recall = reliable == 0 ? 0.0 : static_cast<double>(reliable_hits) / reliable;
        m.loss_clean = sum.clean / nb;
        m.loss_noisy_cont = sum.noisy_cont / nb;
        m.loss_knn = sum.knn / nb;
        m.loss_noisy_cls = sum.noisy_cls / nb;
        m.loss_mix = sum.mix / nb;
    }
    return m;
}

}  // namespace pico::detail
