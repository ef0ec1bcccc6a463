#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "pico/datagen.hpp"
#include "pico/numerics/autodiff.hpp"

namespace pico {

struct EncoderConfig {
    std::size_t d_in = 0;
    std::vector<std::size_t> hidden{64, 64};  // backbone widths
    std::size_t d_emb = 128;
    int num_classes = 0;

    void validate() const;
    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct Linear {
    Parameter weight;  // [in × out]
    Parameter bias;    // [out]
};

// Gradient-free copy of a Linear, used for the key network.
struct FrozenLinear {
    Tensor weight;
    Tensor bias;
};

/// Query encoder g, classifier f (sharing g's backbone) and key encoder g′.
///
/// backbone: d_in → hidden[0] → … → hidden[last], ReLU after each layer.
/// projection: hidden[last] → hidden[last] → d_emb with a ReLU in between, then
/// L2 normalization. classifier: hidden[last] → C, read off the backbone
/// feature before the projection head.
class ModelState {
public:
    ModelState() = default;
    ModelState(EncoderConfig config, std::uint64_t seed);

    const EncoderConfig& config() const { return config_; }

    std::vector<Linear>& backbone() { return backbone_; }
    std::vector<Linear>& projection() { return projection_; }
    Linear& classifier() { return classifier_; }
    const std::vector<Linear>& backbone() const { return backbone_; }
    const std::vector<Linear>& projection() const { return projection_; }
    const Linear& classifier() const { return classifier_; }
    const std::vector<FrozenLinear>& key_backbone() const { return key_backbone_; }
    const std::vector<FrozenLinear>& key_projection() const { return key_projection_; }

    // Every parameter the optimizer updates. Key weights are not included.
    std::vector<Parameter*> parameters();

    /// key ← m·key + (1−m)·query, elementwise.
    void momentum_update(double m);

    void save(std::ostream& out) const;
    static ModelState load(std::istream& in);
    void save(const std::filesystem::path& path) const;
    static ModelState load(const std::filesystem::path& path);

    friend bool operator==(const ModelState& a, const ModelState& b);

private:
    void sync_key();

    EncoderConfig config_;
    std::vector<Linear> backbone_;
    std::vector<Linear> projection_;
    Linear classifier_;
    std::vector<FrozenLinear> key_backbone_;
    std::vector<FrozenLinear> key_projection_;
};

struct QueryForward {
    ad::Var feature;    // shared backbone activation
    ad::Var embedding;  // q, unit rows
    ad::Var log_probs;  // log f
};

/// Parameters of a ModelState bound as leaves on one tape.
struct BoundModel {
    std::vector<std::pair<ad::Var, ad::Var>> backbone;
    std::vector<std::pair<ad::Var, ad::Var>> projection;
    std::pair<ad::Var, ad::Var> classifier;
};

BoundModel bind(ad::Tape& tape, ModelState& model);

QueryForward forward_query(ad::Tape& tape, const BoundModel& bound, const Tensor& views);
// Backbone + classifier head only.
ad::Var forward_classifier(ad::Tape& tape, const BoundModel& bound, const Tensor& views);

struct Evaluation {
    Tensor embeddings;  // [n × d_emb]
    Tensor probs;       // [n × C]
};

// Query network and classifier without recording gradients.
Evaluation evaluate(const ModelState& model, const Tensor& inputs);
// Key network; nothing is recorded and key weights never receive gradients.
Tensor forward_key(const ModelState& model, const Tensor& views);

/// argmax of probs over the candidate labels, smallest index on ties.
int predict_within(std::span<const double> probs, LabelSet candidates);
int predict_any(std::span<const double> probs);

}  // namespace pico
