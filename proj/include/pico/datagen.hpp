#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "pico/numerics/tensor.hpp"

namespace pico {

using Rng = std::mt19937_64;

/// Candidate labels as a bitmask over classes 0..63.
using LabelSet = std::uint64_t;
inline constexpr int kMaxClasses = 64;

inline bool contains(LabelSet s, int label) { return (s >> label) & 1u; }
inline LabelSet singleton(int label) { return LabelSet{1} << label; }
inline LabelSet full_set(int num_classes) {
    return num_classes == 64 ? ~LabelSet{0} : (LabelSet{1} << num_classes) - 1;
}
int set_size(LabelSet s);
std::vector<int> members(LabelSet s);

struct LabeledExample {
    std::vector<double> features;
    int true_label = 0;
};

struct PartialExample {
    std::vector<double> features;
    LabelSet candidates = 0;
    int hidden_true_label = 0;  // evaluation only

    friend bool operator==(const PartialExample&, const PartialExample&) = default;
};

struct PartialDataset {
    int num_classes = 0;
    std::size_t dim = 0;
    std::vector<PartialExample> examples;

    std::size_t size() const { return examples.size(); }
    friend bool operator==(const PartialDataset&, const PartialDataset&) = default;
};

// Candidate-set generation ------------------------------------------------

struct UniformFlip {
    double q = 0.0;
};

/// Row y, column j holds the probability that label j is a candidate when the
/// truth is y. The diagonal must be 1.
struct MatrixFlip {
    Tensor inclusion;
};

struct HierarchicalFlip {
    std::vector<int> superclass_of;  // one entry per class
    double q = 0.0;
};

using FlipSpec = std::variant<UniformFlip, MatrixFlip, HierarchicalFlip>;

// Banded presets: truth plus its cyclic successor at 0.5, or the next five
// successors at 0.9, 0.7, 0.5, 0.3, 0.1.
MatrixFlip successor_flip_matrix(int num_classes);
MatrixFlip graded_flip_matrix(int num_classes);

// Contiguous superclasses of `group_size` classes each.
HierarchicalFlip grouped_flip(int num_classes, int group_size, double q);

void validate(const FlipSpec& spec, int num_classes);

struct NoiseSpec {
    double eta = 0.0;
};

struct AugmentSpec {
    double noise_sigma_query = 0.0;
    double noise_sigma_key = 0.0;
    double mask_prob_query = 0.0;
    double mask_prob_key = 0.0;
};

// Operations --------------------------------------------------------------

/// Class means on the unit sphere with isotropic per-class spread.
struct BlobModel {
    int num_classes = 0;
    std::size_t dim = 0;
    double spread = 0.0;
    Tensor means;  // [C × d]
};

BlobModel make_blob_model(int num_classes, std::size_t dim, double spread, Rng& rng);
// Labels cycle 0,1,…,C−1 so classes are balanced within ±1.
std::vector<LabeledExample> sample_blobs(const BlobModel& model, std::size_t n, Rng& rng);
std::vector<LabeledExample> make_gaussian_blobs(std::size_t n, int num_classes, std::size_t dim,
                                                double spread, std::uint64_t seed);

std::vector<PartialExample> apply_flip(const std::vector<LabeledExample>& data, const FlipSpec& spec,
                                       std::uint64_t seed);

// Maximum regeneration attempts for a noisy candidate set.
inline constexpr int kMaxRegenerations = 1000;

/// With probability η, replaces the candidate set by freshly flipped wrong
/// labels (truth excluded), regenerating until non-empty. When the flip spec
/// gives every wrong label probability zero, one wrong label is drawn
/// uniformly instead.
std::vector<PartialExample> apply_noise(const std::vector<PartialExample>& data,
                                        const std::vector<LabeledExample>& originals,
                                        const NoiseSpec& noise, const FlipSpec& flip,
                                        std::uint64_t seed);

struct Views {
    std::vector<double> query;
    std::vector<double> key;
};

Views two_views(std::span<const double> x, const AugmentSpec& spec, Rng& rng);
Views two_views(std::span<const double> x, const AugmentSpec& spec, std::uint64_t seed);
// Single augmented draw with the given strength (used for the query view).
std::vector<double> augment(std::span<const double> x, double sigma, double mask_prob, Rng& rng);

// Dataset file ------------------------------------------------------------

struct DataFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Text format:
///   pll v1 n=<n> d=<d> C=<C>
///   f_1,...,f_d | c_1;c_2;... | y_true
void write_dataset(std::ostream& out, const PartialDataset& data);
PartialDataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const PartialDataset& data);
PartialDataset load_dataset(const std::filesystem::path& path);

std::string format_double(double v);  // shortest round-trip decimal
double parse_double(std::string_view text);

}  // namespace pico
