#include "pico/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace pico::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
    return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error("invalid configuration: " + join(problems, "; ")), problems_(std::move(problems)) {}

// Configuration keys --------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

double to_double(std::string_view v) {
    try {
        return parse_double(v);
    } catch (const DataFormatError&) {
        throw std::invalid_argument("expected a number, got '" + std::string(v) + "'");
    }
}

template <typename Int>
Int to_int(std::string_view v) {
    Int out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw std::invalid_argument("expected an integer, got '" + std::string(v) + "'");
    return out;
}

bool to_bool(std::string_view v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::size_t> to_widths(std::string_view v) {
    std::vector<std::size_t> out;
    while (!v.empty()) {
        const auto comma = v.find(',');
        out.push_back(to_int<std::size_t>(trim(v.substr(0, comma))));
        v = comma == std::string_view::npos ? std::string_view{} : v.substr(comma + 1);
    }
    return out;
}

constexpr std::pair<std::string_view, FlipKind> kFlips[] = {
    {"uniform", FlipKind::Uniform},
    {"successor", FlipKind::Successor},
    {"graded", FlipKind::Graded},
    {"grouped", FlipKind::Grouped},
};

std::string flip_name(FlipKind k) {
    for (const auto& [name, v] : kFlips)
        if (v == k) return std::string(name);
    return "?";
}

FlipKind parse_flip(std::string_view s) {
    for (const auto& [name, v] : kFlips)
        if (name == s) return v;
    throw std::invalid_argument("unknown flip kind '" + std::string(s) + "'");
}

struct Field {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
};

#define PICO_NUM(KEY, MEMBER)                                                              \
    Field {                                                                                \
        KEY, [](const RunConfig& c) { return format_double(c.MEMBER); },                   \
            [](RunConfig& c, std::string_view v) { c.MEMBER = to_double(v); }              \
    }
#define PICO_INT(KEY, MEMBER)                                                              \
    Field {                                                                                \
        KEY, [](const RunConfig& c) { return std::to_string(c.MEMBER); },                  \
            [](RunConfig& c, std::string_view v) { c.MEMBER = to_int<decltype(c.MEMBER)>(v); } \
    }
#define PICO_STR(KEY, MEMBER)                                                              \
    Field {                                                                                \
        KEY, [](const RunConfig& c) { return c.MEMBER; },                                  \
            [](RunConfig& c, std::string_view v) { c.MEMBER = std::string(v); }            \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        PICO_INT("seed", seed),
        PICO_STR("method", method),
        PICO_INT("epochs", pico.total_epochs),
        PICO_INT("batch_size", pico.batch_size),
        PICO_NUM("lr", pico.base_lr),
        PICO_NUM("sgd_momentum", pico.sgd_momentum),
        PICO_NUM("validation_fraction", validation_fraction),

        PICO_STR("data.train", data.train_path),
        PICO_STR("data.test", data.test_path),
        PICO_INT("data.classes", data.classes),
        PICO_INT("data.dim", data.dim),
        PICO_INT("data.n_train", data.n_train),
        PICO_INT("data.n_test", data.n_test),
        PICO_NUM("data.spread", data.spread),
        Field{"data.flip", [](const RunConfig& c) { return flip_name(c.data.flip); },
              [](RunConfig& c, std::string_view v) { c.data.flip = parse_flip(v); }},
        PICO_NUM("data.q", data.q),
        PICO_INT("data.group_size", data.group_size),
        PICO_NUM("data.eta", data.eta),
        PICO_INT("data.seed", data.seed),

        Field{"model.hidden",
              [](const RunConfig& c) {
                  std::vector<std::string> w;
                  for (auto h : c.hidden) w.push_back(std::to_string(h));
                  return join(w, ",");
              },
              [](RunConfig& c, std::string_view v) { c.hidden = to_widths(v); }},
        PICO_INT("model.d_emb", d_emb),

        PICO_NUM("tau", pico.tau),
        PICO_NUM("lambda", pico.lambda),
        PICO_NUM("gamma", pico.gamma),
        PICO_NUM("phi_start", pico.phi_start),
        PICO_NUM("phi_end", pico.phi_end),
        PICO_INT("warmup_epochs", pico.warmup_epochs),
        PICO_NUM("key_momentum", pico.key_momentum),
        PICO_INT("queue_size", queue_size),
        Field{"policy", [](const RunConfig& c) { return to_string(c.pico.policy); },
              [](RunConfig& c, std::string_view v) { c.pico.policy = parse_target_policy(v); }},
        Field{"prototype_mode", [](const RunConfig& c) { return to_string(c.pico.prototype_mode); },
              [](RunConfig& c, std::string_view v) { c.pico.prototype_mode = parse_prototype_mode(v); }},
        Field{"positives", [](const RunConfig& c) { return to_string(c.pico.positives); },
              [](RunConfig& c, std::string_view v) { c.pico.positives = parse_positive_strategy(v); }},
        PICO_NUM("filter_rho", pico.filter_rho),
        PICO_INT("filter_until_epoch", pico.filter_until_epoch),
        PICO_NUM("confidence_threshold", pico.confidence_threshold),
        PICO_INT("threshold_from_epoch", pico.threshold_from_epoch),

        PICO_NUM("aug.sigma_q", pico.augment.noise_sigma_query),
        PICO_NUM("aug.sigma_k", pico.augment.noise_sigma_key),
        PICO_NUM("aug.mask_q", pico.augment.mask_prob_query),
        PICO_NUM("aug.mask_k", pico.augment.mask_prob_key),

        PICO_NUM("plus.delta", plus.delta),
        PICO_INT("plus.k", plus.k),
        PICO_NUM("plus.mix_shape", plus.mix_shape),
        PICO_NUM("plus.alpha", plus.alpha),
        PICO_NUM("plus.beta", plus.beta),
        PICO_INT("plus.knn_enable_epoch", plus.knn_enable_epoch),
        PICO_INT("plus.start_epoch", plus.start_epoch),
        Field{"plus.mixup", [](const RunConfig& c) { return std::string(c.plus.mixup ? "true" : "false"); },
              [](RunConfig& c, std::string_view v) { c.plus.mixup = to_bool(v); }},
        Field{"plus.selection", [](const RunConfig& c) { return to_string(c.plus.selection); },
              [](RunConfig& c, std::string_view v) { c.plus.selection = parse_selection_mode(v); }},
    };
    return table;
}

#undef PICO_NUM
#undef PICO_INT
#undef PICO_STR

bool is_policy_name(std::string_view s) {
    try {
        parse_target_policy(s);
        return true;
    } catch (const std::invalid_argument&) {
        return false;
    }
}

}  // namespace

RunConfig parse_config(std::istream& in) {
    RunConfig cfg;
    std::vector<std::string> problems;
    std::string line;
    bool explicit_policy = false;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        std::string_view text = line;
        if (const auto hash = text.find('#'); hash != std::string_view::npos) text = text.substr(0, hash);
        text = trim(text);
        if (text.empty()) continue;
        const std::string where = "line " + std::to_string(lineno);
        const auto eq = text.find('=');
        if (eq == std::string_view::npos) {
            problems.push_back(where + ": expected key = value");
            continue;
        }
        const std::string key(trim(text.substr(0, eq)));
        const std::string_view value = trim(text.substr(eq + 1));
        const auto& table = fields();
        const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
        if (it == table.end()) {
            problems.push_back(where + ": unknown key '" + key + "'");
            continue;
        }
        try {
            it->set(cfg, value);
            explicit_policy |= key == "policy";
        } catch (const std::exception& e) {
            problems.push_back(where + ": " + key + ": " + e.what());
        }
    }
    // A policy name as the method selects PiCO with that policy.
    if (is_policy_name(cfg.method)) {
        const TargetPolicy p = parse_target_policy(cfg.method);
        if (explicit_policy && p != cfg.pico.policy)
            problems.push_back("method '" + cfg.method + "' conflicts with policy '" + to_string(cfg.pico.policy) + "'");
        cfg.pico.policy = p;
    }
    if (!problems.empty()) throw ConfigError(problems);
    return cfg;
}

RunConfig parse_config_text(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open config file '" + path.string() + "'"});
    return parse_config(in);
}

std::string echo_config(const RunConfig& config) {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
    return out;
}

std::vector<std::string> validate(const RunConfig& c) {
    std::vector<std::string> p;
    auto need = [&](bool ok, const std::string& msg) {
        if (!ok) p.push_back(msg);
    };
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    const auto& d = c.data;
    const auto& pc = c.pico;

    need(c.method == "pico" || c.method == "picoplus" || is_policy_name(c.method),
         "method must be pico, picoplus or a target policy name");
    need(pc.total_epochs >= 0, "epochs must be >= 0");
    need(pc.batch_size >= 1, "batch_size must be >= 1");
    need(pc.base_lr > 0.0 && std::isfinite(pc.base_lr), "lr must be positive");
    need(pc.sgd_momentum >= 0.0 && pc.sgd_momentum < 1.0, "sgd_momentum must lie in [0,1)");
    need(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0, "validation_fraction must lie in [0,1)");

    if (d.train_path.empty()) {
        need(d.classes >= 2 && d.classes <= 64, "data.classes must lie in [2,64]");
        need(d.dim >= 1, "data.dim must be >= 1");
        need(d.n_train >= 1, "data.n_train must be >= 1");
        need(d.spread >= 0.0 && std::isfinite(d.spread), "data.spread must be >= 0");
        need(unit(d.q), "data.q must lie in [0,1]");
        need(d.eta >= 0.0 && d.eta < 1.0, "data.eta must lie in [0,1)");
        if (d.flip == FlipKind::Grouped)
            need(d.group_size >= 1 && d.classes % std::max(d.group_size, 1) == 0,
                 "data.group_size must divide data.classes");
    }
    need(d.seed >= -1, "data.seed must be >= -1");

    need(!c.hidden.empty(), "model.hidden needs at least one width");
    for (auto h : c.hidden) need(h >= 1, "model.hidden widths must be >= 1");
    need(c.d_emb >= 1, "model.d_emb must be >= 1");

    need(pc.tau > 0.0, "tau must be positive");
    need(pc.lambda >= 0.0, "lambda must be >= 0");
    need(unit(pc.gamma), "gamma must lie in [0,1]");
    need(unit(pc.phi_start), "phi_start must lie in [0,1]");
    need(unit(pc.phi_end), "phi_end must lie in [0,1]");
    need(pc.warmup_epochs >= 0, "warmup_epochs must be >= 0");
    need(unit(pc.key_momentum), "key_momentum must lie in [0,1]");
    need(unit(pc.filter_rho), "filter_rho must lie in [0,1]");
    need(unit(pc.confidence_threshold), "confidence_threshold must lie in [0,1]");
    need(pc.filter_until_epoch >= 0, "filter_until_epoch must be >= 0");
    need(pc.threshold_from_epoch >= 0, "threshold_from_epoch must be >= 0");
    need(pc.augment.noise_sigma_query >= 0.0 && pc.augment.noise_sigma_key >= 0.0, "aug.sigma_* must be >= 0");
    need(unit(pc.augment.mask_prob_query) && unit(pc.augment.mask_prob_key), "aug.mask_* must lie in [0,1]");

    if (c.method == "picoplus") {
        const auto& pl = c.plus;
        need(pl.delta > 0.0 && pl.delta <= 1.0, "plus.delta must lie in (0,1]");
        need(pl.k >= 1, "plus.k must be >= 1");
        need(pl.mix_shape > 0.0, "plus.mix_shape must be positive");
        need(pl.alpha >= 0.0, "plus.alpha must be >= 0");
        need(pl.beta >= 0.0, "plus.beta must be >= 0");
        need(pl.knn_enable_epoch >= 0, "plus.knn_enable_epoch must be >= 0");
        need(pl.start_epoch >= 0, "plus.start_epoch must be >= 0");
    }
    return p;
}

// Data ----------------------------------------------------------------------------

GeneratedData generate(const DatasetSpec& spec, std::uint64_t seed) {
    FlipSpec flip;
    switch (spec.flip) {
        case FlipKind::Uniform: flip = UniformFlip{spec.q}; break;
        case FlipKind::Successor: flip = successor_flip_matrix(spec.classes); break;
        case FlipKind::Graded: flip = graded_flip_matrix(spec.classes); break;
        case FlipKind::Grouped: flip = grouped_flip(spec.classes, spec.group_size, spec.q); break;
    }
    validate(flip, spec.classes);

    // Independent streams for the blob model, the samples and the candidate sets.
    std::seed_seq seq{seed, std::uint64_t{0x9e3779b97f4a7c15ULL}};
    std::uint64_t streams[4];
    seq.generate(std::begin(streams), std::end(streams));
    Rng rng(streams[0]);
    const BlobModel model = make_blob_model(spec.classes, spec.dim, spec.spread, rng);
    const auto train = sample_blobs(model, spec.n_train, rng);
    const auto test = sample_blobs(model, spec.n_test, rng);

    GeneratedData out;
    out.train = {spec.classes, spec.dim, apply_noise(apply_flip(train, flip, streams[1]), train, NoiseSpec{spec.eta},
                                                      flip, streams[2])};
    out.test = {spec.classes, spec.dim, {}};
    for (const auto& e : test) out.test.examples.push_back({e.features, singleton(e.true_label), e.true_label});
    return out;
}

DatasetStats dataset_stats(const PartialDataset& data) {
    DatasetStats s;
    s.n = data.size();
    if (s.n == 0) return s;
    std::size_t sizes = 0, noisy = 0;
    for (const auto& e : data.examples) {
        sizes += static_cast<std::size_t>(set_size(e.candidates));
        noisy += !contains(e.candidates, e.hidden_true_label);
    }
    s.mean_candidates = static_cast<double>(sizes) / static_cast<double>(s.n);
    s.noisy_fraction = static_cast<double>(noisy) / static_cast<double>(s.n);
    return s;
}

namespace {

void require_valid(const RunConfig& config) {
    if (auto problems = validate(config); !problems.empty()) throw ConfigError(std::move(problems));
}

std::uint64_t data_seed(const RunConfig& c) {
    return c.data.seed >= 0 ? static_cast<std::uint64_t>(c.data.seed) : c.seed;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

json stats_json(const DatasetStats& s) {
    return {{"n", s.n}, {"mean_candidates", s.mean_candidates}, {"noisy_fraction", s.noisy_fraction}};
}

}  // namespace

GeneratedData cmd_gen(const RunConfig& config, const fs::path& out) {
    require_valid(config);
    GeneratedData data = generate(config.data, data_seed(config));
    fs::create_directories(out);
    save_dataset(out / "train.pll", data.train);
    save_dataset(out / "test.pll", data.test);
    const json sidecar = {
        {"generator",
         {{"classes", config.data.classes},
          {"dim", config.data.dim},
          {"n_train", config.data.n_train},
          {"n_test", config.data.n_test},
          {"spread", config.data.spread},
          {"flip", flip_name(config.data.flip)},
          {"q", config.data.q},
          {"group_size", config.data.group_size},
          {"eta", config.data.eta},
          {"seed", data_seed(config)}}},
        {"train", stats_json(dataset_stats(data.train))},
        {"test", stats_json(dataset_stats(data.test))},
    };
    write_text(out / "gen.json", sidecar.dump(2) + "\n");
    return data;
}

// Training ------------------------------------------------------------------------

std::string metrics_row(const EpochMetrics& m, double val_accuracy) {
    const double values[] = {m.lr,
                             m.phi,
                             m.loss_total,
                             m.loss_cls,
                             m.loss_cont,
                             m.loss_clean,
                             m.loss_noisy_cont,
                             m.loss_knn,
                             m.loss_noisy_cls,
                             m.loss_mix,
                             m.test_accuracy,
                             val_accuracy,
                             m.pseudo_target_accuracy,
                             m.mmc,
                             m.clean_fraction,
                             m.clean_precision,
                             m.clean_recall};
    std::string row = std::to_string(m.epoch);
    for (double v : values) row += "," + format_double(v);
    return row;
}

namespace {

struct Splits {
    TrainingData train;
    TrainingData validation;
    std::optional<TrainingData> test;
};

Splits load_splits(const RunConfig& c) {
    PartialDataset train, test;
    bool have_test = true;
    if (c.data.train_path.empty()) {
        GeneratedData g = generate(c.data, data_seed(c));
        train = std::move(g.train);
        test = std::move(g.test);
    } else {
        train = load_dataset(c.data.train_path);
        if (c.data.test_path.empty())
            have_test = false;
        else
            test = load_dataset(c.data.test_path);
        if (have_test && (test.dim != train.dim || test.num_classes != train.num_classes))
            throw ConfigError({"test set dimensions do not match the training set"});
    }
    if (train.size() == 0) throw ConfigError({"training set is empty"});

    Splits s;
    const auto n_val = static_cast<std::size_t>(std::floor(c.validation_fraction * static_cast<double>(train.size())));
    if (n_val > 0) {
        // Held-out examples are picked by a seeded permutation.
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(c.seed ^ 0x5a17ULL);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<bool> held(train.size(), false);
        for (std::size_t i = 0; i < n_val; ++i) held[order[i]] = true;
        PartialDataset kept{train.num_classes, train.dim, {}}, val{train.num_classes, train.dim, {}};
        for (std::size_t i = 0; i < train.size(); ++i) (held[i] ? val : kept).examples.push_back(train.examples[i]);
        if (kept.size() == 0) throw ConfigError({"validation_fraction leaves no training data"});
        train = std::move(kept);
        s.validation = TrainingData::from(val);
    }
    s.train = TrainingData::from(train);
    if (have_test) s.test = TrainingData::from(test);
    return s;
}

double train_accuracy(const ModelState& model, const TrainingData& data) {
    return test_accuracy(model, data);
}

void check_finite(const EpochMetrics& m) {
    const double v[] = {m.loss_total, m.loss_cls, m.loss_cont, m.mmc, m.pseudo_target_accuracy, m.test_accuracy};
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError("epoch " + std::to_string(m.epoch) + " produced a non-finite metric");
}

}  // namespace

RunSummary cmd_train(const RunConfig& config, const std::optional<fs::path>& out, const EpochObserver& observe) {
    require_valid(config);
    const auto start = std::chrono::steady_clock::now();
    const Splits splits = load_splits(config);
    const TrainingData& data = splits.train;
    const TrainingData* test = splits.test ? &*splits.test : nullptr;

    EncoderConfig enc;
    enc.d_in = data.features.cols();
    enc.hidden = config.hidden;
    enc.d_emb = config.d_emb;
    enc.num_classes = data.num_classes;
    const std::size_t queue = config.queue_size ? config.queue_size : std::min<std::size_t>(8192, 4 * data.size());
    PicoConfig pc = config.pico;
    pc.queue_size = queue;
    TrainState state = TrainState::init(enc, data, queue, config.seed);

    std::ofstream csv;
    if (out) {
        fs::create_directories(*out);
        write_text(*out / "config.txt", echo_config(config));
        csv.open(*out / "metrics.csv");
        csv << kMetricsHeader << '\n';
    }

    RunSummary summary;
    summary.initial_mmc = mean_max_confidence(state.targets);
    const bool robust = config.method == "picoplus";
    for (int epoch = 0; epoch < pc.total_epochs; ++epoch) {
        EpochMetrics m = robust ? picoplus_epoch(state, data, pc, config.plus, epoch, test)
                                : pico_epoch(state, data, pc, epoch, test);
        check_finite(m);
        const double val = splits.validation.size() ? test_accuracy(state.model, splits.validation) : 0.0;
        if (out) csv << metrics_row(m, val) << '\n' << std::flush;
        if (observe) observe(m, state, data);
        summary.history.push_back(m);
    }

    summary.test_accuracy = test ? test_accuracy(state.model, *test) : 0.0;
    summary.train_accuracy = train_accuracy(state.model, data);
    summary.pseudo_target_accuracy = pseudo_target_accuracy(state.targets, data.truth);
    summary.mmc = mean_max_confidence(state.targets);
    summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (out) {
        state.model.save(*out / "checkpoint.txt");

        std::ostringstream targets;
        for (std::size_t i = 0; i < data.size(); ++i) {
            auto row = state.targets.row(i);
            for (std::size_t j = 0; j < row.size(); ++j) targets << (j ? "," : "") << format_double(row[j]);
            targets << '\n';
        }
        write_text(*out / "pseudo_targets.csv", targets.str());

        std::ostringstream emb;
        if (test) {
            const Evaluation ev = evaluate(state.model, test->features);
            for (std::size_t j = 0; j < ev.embeddings.cols(); ++j) emb << 'e' << j << ',';
            emb << "true_label,predicted_label\n";
            for (std::size_t i = 0; i < test->size(); ++i) {
                for (double v : ev.embeddings.row(i)) emb << format_double(v) << ',';
                emb << test->truth[i] << ',' << predict_any(ev.probs.row(i)) << '\n';
            }
        }
        write_text(*out / "test_embeddings.csv", emb.str());

        json config_echo;
        for (const auto& f : fields()) config_echo[f.key] = f.get(config);
        const json j = {
            {"method", config.method},
            {"epochs", pc.total_epochs},
            {"test_accuracy", test ? json(summary.test_accuracy) : json(nullptr)},
            {"train_accuracy", summary.train_accuracy},
            {"pseudo_target_accuracy", summary.pseudo_target_accuracy},
            {"mmc", summary.mmc},
            {"initial_mmc", summary.initial_mmc},
            {"queue_size", queue},
            {"wall_seconds", summary.wall_seconds},
            {"config", config_echo},
        };
        write_text(*out / "summary.json", j.dump(2) + "\n");
    }
    return summary;
}

// Evaluation ----------------------------------------------------------------------

std::string EvalReport::to_json() const {
    json per = json::array();
    for (double a : per_class_accuracy) per.push_back(std::isnan(a) ? json(nullptr) : json(a));
    return json{{"n", n}, {"accuracy", accuracy}, {"per_class_accuracy", per}, {"mmc", mmc}}.dump(2);
}

EvalReport evaluate_model(const ModelState& model, const PartialDataset& data) {
    const auto& enc = model.config();
    if (data.dim != enc.d_in || data.num_classes != enc.num_classes)
        throw ShapeError("dataset has d=" + std::to_string(data.dim) + ", C=" + std::to_string(data.num_classes) +
                         " but the checkpoint expects d=" + std::to_string(enc.d_in) +
                         ", C=" + std::to_string(enc.num_classes));
    EvalReport r;
    r.n = data.size();
    r.per_class_accuracy.assign(data.num_classes, 0.0);
    if (r.n == 0) return r;
    const TrainingData td = TrainingData::from(data);
    const Evaluation ev = evaluate(model, td.features);
    std::vector<std::size_t> seen(data.num_classes, 0), hit(data.num_classes, 0);
    std::size_t hits = 0;
    double conf = 0.0;
    for (std::size_t i = 0; i < r.n; ++i) {
        auto p = ev.probs.row(i);
        const bool ok = predict_any(p) == td.truth[i];
        hits += ok;
        ++seen[td.truth[i]];
        hit[td.truth[i]] += ok;
        conf += *std::max_element(p.begin(), p.end());
    }
    r.accuracy = static_cast<double>(hits) / static_cast<double>(r.n);
    r.mmc = conf / static_cast<double>(r.n);
    for (int c = 0; c < data.num_classes; ++c)
        r.per_class_accuracy[c] = seen[c] ? static_cast<double>(hit[c]) / static_cast<double>(seen[c]) : NAN;
    return r;
}

EvalReport cmd_eval(const fs::path& checkpoint, const fs::path& dataset, const std::optional<fs::path>& out) {
    const ModelState model = ModelState::load(checkpoint);
    const EvalReport r = evaluate_model(model, load_dataset(dataset));
    if (out) {
        fs::create_directories(*out);
        write_text(*out / "eval.json", r.to_json() + "\n");
    }
    return r;
}

theory::VerifyReport cmd_verify(const theory::VerifyOptions& options, const std::optional<fs::path>& out) {
    theory::VerifyReport report = theory::run_verification(options);
    if (out) {
        fs::create_directories(*out);
        write_text(*out / "verify.txt", report.to_text());
        write_text(*out / "verify.json", report.to_json() + "\n");
    }
    return report;
}

}  // namespace pico::harness
