#include <doctest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "pico/datagen.hpp"

using namespace pico;

namespace {

// |observed − expected| within three binomial standard deviations of a mean of n draws.
bool within_3_sigma(double observed, double expected, double variance, std::size_t n) {
    return std::abs(observed - expected) <= 3.0 * std::sqrt(variance / static_cast<double>(n));
}

std::vector<LabeledExample> blobs(std::size_t n, int c, std::uint64_t seed) {
    return make_gaussian_blobs(n, c, 8, 0.2, seed);
}

}  // namespace

TEST_CASE("label sets") {
    LabelSet s = singleton(0) | singleton(3);
    CHECK(contains(s, 3));
    CHECK_FALSE(contains(s, 1));
    CHECK(set_size(s) == 2);
    CHECK(members(s) == std::vector<int>{0, 3});
    CHECK(set_size(full_set(64)) == 64);
}

TEST_CASE("gaussian blobs") {
    SUBCASE("one example per class when n = C") {
        const auto d = make_gaussian_blobs(4, 4, 8, 0.1, 1);
        std::vector<int> labels;
        for (const auto& e : d) labels.push_back(e.true_label);
        std::sort(labels.begin(), labels.end());
        CHECK(labels == std::vector<int>{0, 1, 2, 3});
    }
    SUBCASE("zero spread puts every example on its class mean") {
        Rng rng(2);
        const BlobModel m = make_blob_model(3, 5, 0.0, rng);
        for (const auto& e : sample_blobs(m, 30, rng))
            for (std::size_t k = 0; k < 5; ++k) CHECK(e.features[k] == m.means(e.true_label, k));
        for (int c = 0; c < 3; ++c) CHECK(norm2(m.means.row(c)) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("nearest class mean is perfect at spread 0.1") {
        Rng rng(3);
        const BlobModel m = make_blob_model(4, 8, 0.1, rng);
        std::size_t hits = 0;
        const auto d = sample_blobs(m, 400, rng);
        for (const auto& e : d) {
            int best = 0;
            double best_d = INFINITY;
            for (int c = 0; c < 4; ++c) {
                double s = 0.0;
                for (std::size_t k = 0; k < 8; ++k) s += std::pow(e.features[k] - m.means(c, k), 2);
                if (s < best_d) best_d = s, best = c;
            }
            hits += best == e.true_label;
        }
        CHECK(hits == 400);
    }
    CHECK_THROWS(make_gaussian_blobs(10, 1, 8, 0.1, 0));
    CHECK_THROWS(make_gaussian_blobs(10, 2, 1, 0.1, 0));
}

TEST_CASE("uniform flipping") {
    const auto d = blobs(200, 5, 4);
    for (const auto& e : apply_flip(d, UniformFlip{0.0}, 1)) CHECK(e.candidates == singleton(e.hidden_true_label));
    for (const auto& e : apply_flip(d, UniformFlip{1.0}, 1)) CHECK(e.candidates == full_set(5));

    const auto big = make_gaussian_blobs(10000, 10, 4, 0.2, 5);
    const auto flipped = apply_flip(big, UniformFlip{0.5}, 6);
    double total = 0.0;
    for (const auto& e : flipped) {
        CHECK(contains(e.candidates, e.hidden_true_label));
        total += set_size(e.candidates);
    }
    // |Y| − 1 is Binomial(9, 0.5).
    CHECK(within_3_sigma(total / 10000.0, 5.5, 9 * 0.25, 10000));
    CHECK(apply_flip(big, UniformFlip{0.5}, 6) == flipped);
    CHECK_THROWS(apply_flip(d, UniformFlip{1.5}, 1));
}

TEST_CASE("matrix and hierarchical flipping") {
    const auto d = blobs(3000, 6, 7);
    const MatrixFlip succ = successor_flip_matrix(6);
    std::size_t with_next = 0;
    for (const auto& e : apply_flip(d, succ, 8)) {
        const int next = (e.hidden_true_label + 1) % 6;
        CHECK((e.candidates & ~(singleton(e.hidden_true_label) | singleton(next))) == 0);
        with_next += contains(e.candidates, next);
    }
    CHECK(within_3_sigma(with_next / 3000.0, 0.5, 0.25, 3000));

    const MatrixFlip graded = graded_flip_matrix(10);
    CHECK(graded.inclusion(0, 1) == 0.9);
    CHECK(graded.inclusion(0, 5) == doctest::Approx(0.1));
    CHECK(graded.inclusion(0, 6) == 0.0);
    CHECK(graded.inclusion(9, 0) == 0.9);

    const HierarchicalFlip h = grouped_flip(6, 3, 1.0);
    for (const auto& e : apply_flip(d, h, 9)) {
        const int g = e.hidden_true_label / 3;
        CHECK(e.candidates == (singleton(3 * g) | singleton(3 * g + 1) | singleton(3 * g + 2)));
    }

    MatrixFlip bad = succ;
    bad.inclusion(2, 2) = 0.5;
    CHECK_THROWS(validate(bad, 6));
    CHECK_THROWS(grouped_flip(6, 4, 0.5));
}

TEST_CASE("noisy candidate sets") {
    const auto d = make_gaussian_blobs(10000, 6, 4, 0.2, 10);
    const auto pll = apply_flip(d, UniformFlip{0.3}, 11);
    CHECK(apply_noise(pll, d, NoiseSpec{0.0}, UniformFlip{0.3}, 12) == pll);

    const auto noisy = apply_noise(pll, d, NoiseSpec{0.2}, UniformFlip{0.3}, 12);
    std::size_t missing = 0;
    for (const auto& e : noisy) {
        CHECK(e.candidates != 0);
        missing += !contains(e.candidates, e.hidden_true_label);
    }
    CHECK(within_3_sigma(missing / 10000.0, 0.2, 0.16, 10000));

    // With q = 0 the regenerated noisy sets still hold at least one wrong label.
    const auto single = apply_flip(d, UniformFlip{0.0}, 13);
    for (const auto& e : apply_noise(single, d, NoiseSpec{0.5}, UniformFlip{0.0}, 14)) {
        CHECK(e.candidates != 0);
        if (!contains(e.candidates, e.hidden_true_label)) CHECK(set_size(e.candidates) == 1);
    }
    CHECK_THROWS(apply_noise(pll, d, NoiseSpec{1.0}, UniformFlip{0.3}, 1));
}

TEST_CASE("augmentation") {
    const std::vector<double> x = {1.0, -2.0, 3.0, 0.5};
    const Views same = two_views(x, AugmentSpec{}, 1);
    CHECK(same.query == x);
    CHECK(same.key == x);

    Rng rng(2);
    for (double v : augment(x, 0.3, 1.0, rng)) CHECK(v == 0.0);

    const std::size_t draws = 10000;
    const std::vector<double> zero(16, 0.0);
    double msd = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < draws; ++i) {
        const auto v = augment(zero, 0.1, 0.0, rng);
        double s = 0.0;
        for (double t : v) s += t * t;
        msd += s;
        sq += s * s;
    }
    // Σ of 16 squared N(0, 0.01): mean 0.16, variance 16·2·0.01².
    CHECK(within_3_sigma(msd / draws, 0.16, 16 * 2 * 1e-4, draws));

    CHECK(two_views(x, AugmentSpec{0.1, 0.05, 0.1, 0.0}, 7).query == two_views(x, AugmentSpec{0.1, 0.05, 0.1, 0.0}, 7).query);
}

TEST_CASE("dataset files round-trip exactly") {
    PartialDataset d{3, 2, {{{0.1, -1e-300}, singleton(0) | singleton(2), 0},
                            {{1.0 / 3.0, 5e10}, singleton(1), 1},
                            {{-0.0, 2.5}, full_set(3), 2}}};
    std::stringstream ss;
    write_dataset(ss, d);
    CHECK(read_dataset(ss) == d);

    auto big_flip = apply_flip(make_gaussian_blobs(10000, 8, 6, 0.4, 3), UniformFlip{0.4}, 4);
    PartialDataset big{8, 6, big_flip};
    std::stringstream a, b;
    write_dataset(a, big);
    const auto text = a.str();
    std::stringstream in(text);
    const PartialDataset back = read_dataset(in);
    CHECK(back == big);
    write_dataset(b, back);
    CHECK(std::hash<std::string>{}(b.str()) == std::hash<std::string>{}(text));
}

TEST_CASE("dataset reader reports positions") {
    auto error_of = [](const std::string& text) {
        std::stringstream ss(text);
        try {
            read_dataset(ss);
        } catch (const DataFormatError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    CHECK(error_of("pll v1 n=1 d=2 C=3\n0.1,0.2 | 3 | 0\n").find("line 2: candidate index 3") == 0);
    CHECK(error_of("pll v1 n=2 d=2 C=3\n0.1,0.2 | 1 | 0\n0.1,0.2 |  | 0\n").find("line 3: empty candidate") == 0);
    CHECK(error_of("pll v1 n=1 d=2 C=3\n0.1,x | 1 | 0\n").find("line 2:") == 0);
    CHECK(error_of("pll v1 n=1 d=2 C=3\n0.1,0.2,0.3 | 1 | 0\n").find("line 2: expected 2 features") == 0);
    CHECK(error_of("pll v1 n=2 d=2 C=3\n0.1,0.2 | 1 | 0\n").find("line 3: unexpected end") == 0);
    CHECK(error_of("csv\n").find("line 1:") == 0);
}
