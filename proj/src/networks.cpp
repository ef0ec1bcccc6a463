#include "pico/networks.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pico/numerics/kernels.hpp"
#include "pico/numerics/optim.hpp"

namespace pico {

void EncoderConfig::validate() const {
    if (d_in < 1 || d_emb < 1 || num_classes < 1 || hidden.empty())
        throw std::invalid_argument("encoder dimensions must all be ≥ 1 with at least one hidden layer");
    for (auto h : hidden)
        if (h < 1) throw std::invalid_argument("hidden widths must be ≥ 1");
    if (num_classes > kMaxClasses) throw std::invalid_argument("at most 64 classes are supported");
}

namespace {

Linear make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    Tensor w = uniform_init(in, out, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor b({out});
    for (double& v : b.values()) v = dist(rng);
    return {Parameter(name + ".weight", std::move(w)), Parameter(name + ".bias", std::move(b))};
}

FrozenLinear freeze(const Linear& l) { return {l.weight.value, l.bias.value}; }

void blend(Tensor& key, const Tensor& query, double m) {
    for (std::size_t i = 0; i < key.size(); ++i) key[i] = m * key[i] + (1.0 - m) * query[i];
}

Tensor dense(const Tensor& x, const FrozenLinear& l, bool relu) {
    Tensor y = kernels::matmul(x, l.weight);
    for (std::size_t r = 0; r < y.rows(); ++r) {
        auto row = y.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] += l.bias[j];
            if (relu && row[j] < 0.0) row[j] = 0.0;
        }
    }
    return y;
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
    out << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << ' ' << t.rank() << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (i) out << ',';
        out << format_double(t[i]);
    }
    out << '\n';
}

Tensor read_tensor(std::istream& in, const std::string& expected) {
    std::string tag, name, values;
    std::size_t rows = 0, cols = 0, rank = 0;
    if (!(in >> tag >> name >> rows >> cols >> rank) || tag != "tensor")
        throw DataFormatError("checkpoint: expected tensor record for " + expected);
    if (name != expected) throw DataFormatError("checkpoint: expected " + expected + ", found " + name);
    in >> std::ws;
    std::getline(in, values);
    std::vector<double> v;
    v.reserve(rows * cols);
    std::string_view rest(values);
    while (!rest.empty()) {
        const auto comma = rest.find(',');
        v.push_back(parse_double(rest.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
    }
    std::vector<std::size_t> shape = rank == 1 ? std::vector<std::size_t>{cols} : std::vector<std::size_t>{rows, cols};
    return Tensor(shape, std::move(v));
}

}  // namespace

ModelState::ModelState(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    std::size_t width = config_.d_in;
    for (std::size_t i = 0; i < config_.hidden.size(); ++i) {
        backbone_.push_back(make_linear("backbone." + std::to_string(i), width, config_.hidden[i], rng));
        width = config_.hidden[i];
    }
    projection_.push_back(make_linear("projection.0", width, width, rng));
    projection_.push_back(make_linear("projection.1", width, config_.d_emb, rng));
    classifier_ = make_linear("classifier", width, static_cast<std::size_t>(config_.num_classes), rng);
    sync_key();
}

void ModelState::sync_key() {
    key_backbone_.clear();
    key_projection_.clear();
    for (const auto& l : backbone_) key_backbone_.push_back(freeze(l));
    for (const auto& l : projection_) key_projection_.push_back(freeze(l));
}

std::vector<Parameter*> ModelState::parameters() {
    std::vector<Parameter*> ps;
    for (auto& l : backbone_) ps.insert(ps.end(), {&l.weight, &l.bias});
    for (auto& l : projection_) ps.insert(ps.end(), {&l.weight, &l.bias});
    ps.insert(ps.end(), {&classifier_.weight, &classifier_.bias});
    return ps;
}

void ModelState::momentum_update(double m) {
    if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("key momentum must lie in [0,1]");
    for (std::size_t i = 0; i < backbone_.size(); ++i) {
        blend(key_backbone_[i].weight, backbone_[i].weight.value, m);
        blend(key_backbone_[i].bias, backbone_[i].bias.value, m);
    }
    for (std::size_t i = 0; i < projection_.size(); ++i) {
        blend(key_projection_[i].weight, projection_[i].weight.value, m);
        blend(key_projection_[i].bias, projection_[i].bias.value, m);
    }
}

void ModelState::save(std::ostream& out) const {
    out << "pico-checkpoint v1\n";
    out << "d_in " << config_.d_in << " d_emb " << config_.d_emb << " classes " << config_.num_classes
        << " hidden " << config_.hidden.size();
    for (auto h : config_.hidden) out << ' ' << h;
    out << '\n';
    auto put = [&](const Parameter& p) { write_tensor(out, p.name, p.value); };
    for (const auto& l : backbone_) put(l.weight), put(l.bias);
    for (const auto& l : projection_) put(l.weight), put(l.bias);
    put(classifier_.weight);
    put(classifier_.bias);
    for (std::size_t i = 0; i < key_backbone_.size(); ++i) {
        write_tensor(out, "key." + backbone_[i].weight.name, key_backbone_[i].weight);
        write_tensor(out, "key." + backbone_[i].bias.name, key_backbone_[i].bias);
    }
    for (std::size_t i = 0; i < key_projection_.size(); ++i) {
        write_tensor(out, "key." + projection_[i].weight.name, key_projection_[i].weight);
        write_tensor(out, "key." + projection_[i].bias.name, key_projection_[i].bias);
    }
}

ModelState ModelState::load(std::istream& in) {
    std::string line;
    std::getline(in, line);
    if (line != "pico-checkpoint v1") throw DataFormatError("checkpoint: bad magic line");
    EncoderConfig cfg;
    std::string k1, k2, k3, k4;
    std::size_t layers = 0;
    if (!(in >> k1 >> cfg.d_in >> k2 >> cfg.d_emb >> k3 >> cfg.num_classes >> k4 >> layers) || k1 != "d_in" ||
        k2 != "d_emb" || k3 != "classes" || k4 != "hidden")
        throw DataFormatError("checkpoint: malformed config line");
    cfg.hidden.resize(layers);
    for (auto& h : cfg.hidden) in >> h;
    ModelState m(cfg, 0);
    auto get = [&](Parameter& p) {
        Tensor t = read_tensor(in, p.name);
        if (!t.same_shape(p.value)) throw DataFormatError("checkpoint: shape mismatch for " + p.name);
        p.value = std::move(t);
    };
    for (auto& l : m.backbone_) get(l.weight), get(l.bias);
    for (auto& l : m.projection_) get(l.weight), get(l.bias);
    get(m.classifier_.weight);
    get(m.classifier_.bias);
    for (std::size_t i = 0; i < m.key_backbone_.size(); ++i) {
        m.key_backbone_[i].weight = read_tensor(in, "key." + m.backbone_[i].weight.name);
        m.key_backbone_[i].bias = read_tensor(in, "key." + m.backbone_[i].bias.name);
    }
    for (std::size_t i = 0; i < m.key_projection_.size(); ++i) {
        m.key_projection_[i].weight = read_tensor(in, "key." + m.projection_[i].weight.name);
        m.key_projection_[i].bias = read_tensor(in, "key." + m.projection_[i].bias.name);
    }
    return m;
}

void ModelState::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    save(out);
}

ModelState ModelState::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return load(in);
}

bool operator==(const ModelState& a, const ModelState& b) {
    auto same = [](const std::vector<Linear>& x, const std::vector<Linear>& y) {
        if (x.size() != y.size()) return false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (!(x[i].weight.value == y[i].weight.value) || !(x[i].bias.value == y[i].bias.value)) return false;
        return true;
    };
    auto same_frozen = [](const std::vector<FrozenLinear>& x, const std::vector<FrozenLinear>& y) {
        if (x.size() != y.size()) return false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (!(x[i].weight == y[i].weight) || !(x[i].bias == y[i].bias)) return false;
        return true;
    };
    return a.config_ == b.config_ && same(a.backbone_, b.backbone_) && same(a.projection_, b.projection_) &&
           a.classifier_.weight.value == b.classifier_.weight.value &&
           a.classifier_.bias.value == b.classifier_.bias.value && same_frozen(a.key_backbone_, b.key_backbone_) &&
           same_frozen(a.key_projection_, b.key_projection_);
}

BoundModel bind(ad::Tape& tape, ModelState& model) {
    BoundModel b;
    for (auto& l : model.backbone()) b.backbone.emplace_back(tape.parameter(l.weight), tape.parameter(l.bias));
    for (auto& l : model.projection()) b.projection.emplace_back(tape.parameter(l.weight), tape.parameter(l.bias));
    b.classifier = {tape.parameter(model.classifier().weight), tape.parameter(model.classifier().bias)};
    return b;
}

namespace {

ad::Var backbone_feature(ad::Tape& tape, const BoundModel& bound, const Tensor& views) {
    ad::Var h = tape.constant(views);
    for (const auto& [w, b] : bound.backbone) h = ad::relu(tape, ad::affine(tape, h, w, b));
    return h;
}

}  // namespace

QueryForward forward_query(ad::Tape& tape, const BoundModel& bound, const Tensor& views) {
    QueryForward out;
    out.feature = backbone_feature(tape, bound, views);
    ad::Var z = ad::relu(tape, ad::affine(tape, out.feature, bound.projection[0].first, bound.projection[0].second));
    z = ad::affine(tape, z, bound.projection[1].first, bound.projection[1].second);
    out.embedding = ad::l2_normalize(tape, z);
    out.log_probs =
        ad::log_softmax(tape, ad::affine(tape, out.feature, bound.classifier.first, bound.classifier.second));
    return out;
}

ad::Var forward_classifier(ad::Tape& tape, const BoundModel& bound, const Tensor& views) {
    const ad::Var h = backbone_feature(tape, bound, views);
    return ad::log_softmax(tape, ad::affine(tape, h, bound.classifier.first, bound.classifier.second));
}

Evaluation evaluate(const ModelState& model, const Tensor& inputs) {
    Tensor h = inputs;
    for (const auto& l : model.backbone()) h = dense(h, {l.weight.value, l.bias.value}, true);
    const auto& p = model.projection();
    Tensor z = dense(h, {p[0].weight.value, p[0].bias.value}, true);
    z = dense(z, {p[1].weight.value, p[1].bias.value}, false);
    const auto& c = model.classifier();
    Evaluation e;
    e.embeddings = normalize_rows(z);
    e.probs = softmax_rows(dense(h, {c.weight.value, c.bias.value}, false));
    return e;
}

Tensor forward_key(const ModelState& model, const Tensor& views) {
    Tensor h = views;
    for (const auto& l : model.key_backbone()) h = dense(h, l, true);
    const auto& p = model.key_projection();
    Tensor z = dense(h, p[0], true);
    z = dense(z, p[1], false);
    return normalize_rows(z);
}

int predict_within(std::span<const double> probs, LabelSet candidates) {
    int best = -1;
    for (int j = 0; j < static_cast<int>(probs.size()); ++j) {
        if (!contains(candidates, j)) continue;
        if (best < 0 || probs[j] > probs[best]) best = j;
    }
    if (best < 0) throw std::invalid_argument("predict_within: empty candidate set");
    return best;
}

int predict_any(std::span<const double> probs) {
    return predict_within(probs, full_set(static_cast<int>(probs.size())));
}

}  // namespace pico
