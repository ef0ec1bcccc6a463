#include <doctest.h>

#include <cmath>
#include <random>

#include "pico/pico.hpp"

using namespace pico;

namespace {

std::vector<double> unit(std::vector<double> v) {
    const double n = norm2(v);
    for (double& x : v) x /= n;
    return v;
}

PartialDataset small_blobs(std::size_t n, int c, double spread, double q, std::uint64_t seed) {
    const auto clean = make_gaussian_blobs(n, c, 8, spread, seed);
    return {c, 8, apply_flip(clean, UniformFlip{q}, seed + 1)};
}

PicoConfig fast_config(int epochs) {
    PicoConfig cfg;
    cfg.total_epochs = epochs;
    cfg.batch_size = 32;
    cfg.queue_size = 256;
    cfg.base_lr = 0.05;
    return cfg;
}

EncoderConfig encoder(int c) {
    EncoderConfig e;
    e.d_in = 8;
    e.hidden = {32, 32};
    e.d_emb = 16;
    e.num_classes = c;
    return e;
}

bool candidate_supported_simplex(const Tensor& targets, const std::vector<LabelSet>& cands) {
    for (std::size_t i = 0; i < targets.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < targets.cols(); ++j) {
            const double v = targets(i, j);
            if (v < 0.0 || (!contains(cands[i], static_cast<int>(j)) && v != 0.0)) return false;
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-9) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("classification loss") {
    CHECK(classification_loss(std::vector<double>{0, 1, 0}, std::vector<double>{0, 1, 0}) == 0.0);
    CHECK(classification_loss(std::vector<double>{0.5, 0.5, 0}, std::vector<double>{0.5, 0.5, 0}) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    std::vector<double> f(5), s(5);
    double zf = 0, zs = 0;
    for (int j = 0; j < 5; ++j) zf += f[j] = u(rng), zs += s[j] = u(rng);
    double want = 0.0;
    for (int j = 0; j < 5; ++j) want -= (s[j] / zs) * std::log(f[j] / zf);
    for (int j = 0; j < 5; ++j) f[j] /= zf, s[j] /= zs;
    CHECK(std::abs(classification_loss(f, s) - want) < 1e-12);
    // A zero probability under positive target mass is clamped, not infinite.
    CHECK(classification_loss(std::vector<double>{1, 0}, std::vector<double>{0, 1}) ==
          doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("pool construction") {
    EmbeddingQueue empty(4, 2);
    const PoolTag t0{1, 1, true, 0};
    Pool p = build_pool(std::span(&t0, 1), Tensor::matrix({{1, 0}}), empty);
    CHECK(p.size() == 2);
    CHECK(p.size_without_anchor() == 1);
    // The anchor's own query is never a positive.
    CHECK(select_positives(p, 0, 1) == std::vector<std::uint32_t>{1});

    EmbeddingQueue full(3, 2);
    for (int i = 0; i < 5; ++i) full.push(std::vector<double>{1, 0}, PoolTag{i, i, true, std::size_t(i)});
    CHECK(full.size() == 3);
    CHECK(full.tag(0).label == 2);  // oldest first
    CHECK(full.tag(2).label == 4);
    const PoolTag batch[] = {{0, 0, true, 10}, {1, 1, true, 11}};
    Pool q = build_pool(batch, Tensor::matrix({{0, 1}, {1, 0}}), full);
    CHECK(q.size() == 2 * 2 + 3);
    CHECK(q.keys.rows() == 2 + 3);
    CHECK(q.tags[2].example == 10);
    CHECK(q.tags[4].label == 2);
    CHECK_THROWS_AS(full.push(std::vector<double>{1, 0, 0}, t0), ShapeError);
}

TEST_CASE("positive selection") {
    Pool p;
    p.batch = 1;
    for (int label : {0, 1, 1, 2, 3}) p.tags.push_back({label, label, true, 0});
    CHECK(select_positives(p, 0, 1) == std::vector<std::uint32_t>{1, 2});
    CHECK(select_positives(p, 0, 7).empty());
    Pool same;
    same.batch = 1;
    for (int i = 0; i < 4; ++i) same.tags.push_back({5, 5, true, 0});
    CHECK(select_positives(same, 0, 5).size() == same.size_without_anchor());
}

TEST_CASE("standalone contrastive loss") {
    const std::vector<double> q = {1, 0};
    const std::vector<std::vector<double>> one = {{0.6, 0.8}};
    CHECK(contrastive_loss(q, one, one, 0.07) == doctest::Approx(0.0));

    const std::vector<std::vector<double>> kp = {{1, 0}};
    const std::vector<std::vector<double>> pool = {{1, 0}, {-1, 0}};
    CHECK(contrastive_loss(q, kp, pool, 1.0) ==
          doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)))).epsilon(1e-14));

    // Equal similarities: loss is log|A(x)| for any temperature.
    const std::vector<std::vector<double>> ring = {{0, 1}, {0, -1}, {0, 1}};
    CHECK(contrastive_loss(q, std::vector<std::vector<double>>{{0, 1}}, ring, 0.5) ==
          doctest::Approx(std::log(3.0)));
    CHECK(contrastive_loss(q, std::vector<std::vector<double>>{{0, 1}}, ring, 1.0) ==
          doctest::Approx(std::log(3.0)));
    CHECK(contrastive_loss(q, {}, ring, 1.0) == 0.0);

    // Agrees with the batched graph op.
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n01;
    Tensor qs = Tensor::zeros(3, 4), keys = Tensor::zeros(5, 4);
    for (double& v : qs.values()) v = n01(rng);
    for (double& v : keys.values()) v = n01(rng);
    qs = normalize_rows(qs);
    keys = normalize_rows(keys);
    ad::Tape t;
    const ad::ContrastAnchor a{1, {0, 4, 6}};
    const double graph = t.value(ad::contrastive(t, ad::pool_similarity(t, t.constant(qs), keys), std::span(&a, 1), 0.2))[0];
    auto col = [&](std::size_t j) {
        auto r = j < 3 ? qs.row(j) : keys.row(j - 3);
        return std::vector<double>(r.begin(), r.end());
    };
    std::vector<std::vector<double>> all, pos;
    for (std::size_t j = 0; j < 8; ++j)
        if (j != 1) all.push_back(col(j));
    for (std::uint32_t j : a.positives) pos.push_back(col(j));
    const auto row = qs.row(1);
    CHECK(contrastive_loss(std::vector<double>(row.begin(), row.end()), pos, all, 0.2) ==
          doctest::Approx(graph).epsilon(1e-12));
}

TEST_CASE("prototype updates") {
    PrototypeBank bank(Tensor::matrix({{1, 0}, {0, 1}}));
    bank.update(std::vector<double>{0, 1}, 0, 1.0);
    CHECK(bank.matrix() == Tensor::matrix({{1, 0}, {0, 1}}));
    bank.update(std::vector<double>{0.6, 0.8}, 1, 0.0);
    CHECK(bank.matrix() == Tensor::matrix({{1, 0}, {0.6, 0.8}}));

    PrototypeBank half(Tensor::matrix({{1, 0}}));
    half.update(std::vector<double>{0, 1}, 0, 0.5);
    CHECK(half[0][0] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(half[0][1] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-15));

    PrototypeBank cancel(Tensor::matrix({{1, 0}}));
    cancel.update(std::vector<double>{-1, 0}, 0, 0.5);
    CHECK(cancel.matrix() == Tensor::matrix({{1, 0}}));

    PrototypeBank rec(Tensor::matrix({{1, 0}, {0, 1}, {0.6, 0.8}}));
    rec.recompute(Tensor::matrix({{1, 0}, {0, 1}, {0, -1}}), std::vector<int>{1, 1, 0});
    CHECK(rec.matrix() == Tensor::matrix({{0, -1}, {1 / std::sqrt(2.0), 1 / std::sqrt(2.0)}, {0.6, 0.8}}));

    Rng rng(3);
    PrototypeBank random(4, 6, rng);
    for (int c = 0; c < 4; ++c) CHECK(norm2(random[c]) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("disambiguation") {
    PrototypeBank bank(Tensor::matrix({{1, 0}, {0, 1}, {-1, 0}}));
    const std::vector<double> q = {1, 0};
    const LabelSet y = singleton(0) | singleton(1);
    const std::vector<double> s = {0.5, 0.5, 0};

    CHECK(disambiguate(s, q, bank, y, 1.0, TargetPolicy::Pico, 0.07) == s);
    const auto s1 = disambiguate(s, q, bank, y, 0.8, TargetPolicy::Pico, 0.07);
    CHECK(s1[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(s1[1] == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(s1[2] == 0.0);

    CHECK(disambiguate(s, q, bank, y, 0.8, TargetPolicy::OneHotPrototype, 0.07) == std::vector<double>{1, 0, 0});
    CHECK(disambiguate(s, q, bank, y, 0.8, TargetPolicy::Uniform, 0.07) == std::vector<double>{0.5, 0.5, 0});
    // The nearest prototype overall (class 0) is outside this candidate set.
    CHECK(nearest_prototype(q, bank, singleton(1) | singleton(2)) == 1);

    const auto soft = disambiguate(s, q, bank, y, 0.8, TargetPolicy::SoftPrototypeProbs, 1.0);
    CHECK(soft[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-14));
    CHECK(soft[2] == 0.0);
    const auto ma = disambiguate(s, q, bank, y, 0.8, TargetPolicy::MASoftPrototypeProbs, 1.0);
    CHECK(ma[0] == doctest::Approx(0.8 * 0.5 + 0.2 * soft[0]).epsilon(1e-14));

    // Fixed nearest prototype: the distance to it shrinks by φ per step.
    std::vector<double> st = {0.2, 0.5, 0.3};
    const LabelSet all = full_set(3);
    const double d0 = 0.8;
    for (int t = 1; t <= 50; ++t) {
        st = disambiguate(st, q, bank, all, 0.9, TargetPolicy::Pico, 0.07);
        double dist = 0.0;
        for (int j = 0; j < 3; ++j) dist = std::max(dist, std::abs(st[j] - (j == 0 ? 1.0 : 0.0)));
        CHECK(std::abs(dist - std::pow(0.9, t) * d0) < 1e-12);
    }
}

TEST_CASE("diagnostics") {
    const Tensor t = Tensor::matrix({{1, 0}, {0.5, 0.5}, {0.25, 0.75}});
    CHECK(mean_max_confidence(t) == doctest::Approx((1 + 0.5 + 0.75) / 3));
    CHECK(pseudo_target_accuracy(t, std::vector<int>{0, 0, 0}) == doctest::Approx(2.0 / 3));
}

TEST_CASE("config validation and phi schedule") {
    PicoConfig c;
    CHECK_NOTHROW(c.validate());
    c.total_epochs = 100;
    CHECK(c.phi(0) == 0.95);
    CHECK(c.phi(100) == doctest::Approx(0.8));
    CHECK(c.phi(50) == doctest::Approx(0.875));
    c.tau = 0;
    CHECK_THROWS(c.validate());
    CHECK(parse_target_policy("uniform") == TargetPolicy::Uniform);
    CHECK(to_string(PositiveStrategy::Filter) == "filter");
    CHECK_THROWS(parse_prototype_mode("average"));
}

TEST_CASE("initial state") {
    const TrainingData data = TrainingData::from(small_blobs(60, 4, 0.2, 0.5, 1));
    const TrainState st = TrainState::init(encoder(4), data, 64, 2);
    double inv = 0.0;
    for (LabelSet y : data.candidates) inv += 1.0 / set_size(y);
    CHECK(mean_max_confidence(st.targets) == doctest::Approx(inv / 60).epsilon(1e-15));
    CHECK(candidate_supported_simplex(st.targets, data.candidates));
}

TEST_CASE("one full-batch epoch updates each pseudo-target once") {
    const TrainingData data = TrainingData::from(small_blobs(48, 4, 0.2, 0.5, 3));
    PicoConfig cfg = fast_config(10);
    cfg.warmup_epochs = 0;
    cfg.batch_size = 48;
    TrainState st = TrainState::init(encoder(4), data, 64, 4);
    const Tensor before = st.targets;
    pico_epoch(st, data, cfg, 0);
    const double phi = cfg.phi(0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        bool matched = false;
        for (int z : members(data.candidates[i])) {
            bool ok = true;
            for (int j = 0; j < 4; ++j)
                ok &= std::abs(st.targets(i, j) - (phi * before(i, j) + (1 - phi) * (j == z))) < 1e-15;
            matched |= ok;
        }
        CHECK(matched);
    }
}

TEST_CASE("warm-up keeps uniform targets and drops the contrastive term") {
    const TrainingData data = TrainingData::from(small_blobs(64, 4, 0.2, 0.5, 5));
    PicoConfig cfg = fast_config(4);
    cfg.warmup_epochs = 2;
    TrainState st = TrainState::init(encoder(4), data, 64, 6);
    const Tensor before = st.targets;
    const EpochMetrics m = pico_epoch(st, data, cfg, 0);
    CHECK(st.targets == before);
    CHECK(m.loss_total == m.loss_cls);
    CHECK(m.loss_cont == 0.0);
}

TEST_CASE("lambda 0 with uniform targets is plain cross-entropy on the candidate sets") {
    const TrainingData data = TrainingData::from(small_blobs(64, 4, 0.2, 0.5, 7));
    PicoConfig cfg = fast_config(4);
    cfg.lambda = 0.0;
    cfg.policy = TargetPolicy::Uniform;
    TrainState st = TrainState::init(encoder(4), data, 64, 8);
    const Tensor before = st.targets;
    for (int e = 0; e < 3; ++e) {
        const EpochMetrics m = pico_epoch(st, data, cfg, e);
        CHECK(m.loss_total == m.loss_cls);
    }
    CHECK(st.targets == before);
}

TEST_CASE("training keeps targets on the candidate simplex for every variant") {
    const TrainingData data = TrainingData::from(small_blobs(96, 4, 0.3, 0.5, 9));
    for (TargetPolicy policy : {TargetPolicy::Pico, TargetPolicy::OneHotPrototype, TargetPolicy::SoftPrototypeProbs,
                                TargetPolicy::MASoftPrototypeProbs, TargetPolicy::Uniform}) {
        for (PositiveStrategy pos : {PositiveStrategy::SameLabel, PositiveStrategy::Filter, PositiveStrategy::Threshold}) {
            PicoConfig cfg = fast_config(4);
            cfg.policy = policy;
            cfg.positives = pos;
            cfg.filter_until_epoch = 2;
            cfg.threshold_from_epoch = 2;
            cfg.prototype_mode = pos == PositiveStrategy::Filter ? PrototypeMode::Recompute : PrototypeMode::MovingAverage;
            TrainState st = TrainState::init(encoder(4), data, 64, 10);
            for (int e = 0; e < 4; ++e) {
                const EpochMetrics m = pico_epoch(st, data, cfg, e);
                CHECK(std::isfinite(m.loss_total));
                CHECK(m.mmc >= 0.25 - 1e-12);
                CHECK(m.mmc <= 1.0 + 1e-12);
            }
            CHECK(candidate_supported_simplex(st.targets, data.candidates));
        }
    }
}

TEST_CASE("pseudo-targets recover the hidden labels on separable blobs") {
    const TrainingData data = TrainingData::from(small_blobs(400, 4, 0.15, 0.5, 11));
    PicoConfig cfg = fast_config(20);
    TrainState st = TrainState::init(encoder(4), data, 256, 12);
    EpochMetrics m;
    for (int e = 0; e < cfg.total_epochs; ++e) m = pico_epoch(st, data, cfg, e);
    CHECK(m.pseudo_target_accuracy > 0.9);
}

TEST_CASE("same seed, same trajectory") {
    const TrainingData data = TrainingData::from(small_blobs(64, 4, 0.2, 0.5, 13));
    PicoConfig cfg = fast_config(3);
    TrainState a = TrainState::init(encoder(4), data, 64, 14);
    TrainState b = TrainState::init(encoder(4), data, 64, 14);
    for (int e = 0; e < 3; ++e) {
        const EpochMetrics ma = pico_epoch(a, data, cfg, e);
        const EpochMetrics mb = pico_epoch(b, data, cfg, e);
        CHECK(ma.loss_total == mb.loss_total);
    }
    CHECK(a.model == b.model);
    CHECK(a.targets == b.targets);
}
