#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pico/picoplus.hpp"
#include "pico/theory.hpp"

namespace pico::harness {

/// Invalid or inconsistent configuration. Carries every problem found.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

enum class FlipKind { Uniform, Successor, Graded, Grouped };

struct DatasetSpec {
    // Existing dataset files. When `train_path` is empty the data are generated.
    std::string train_path;
    std::string test_path;

    int classes = 6;
    std::size_t dim = 16;
    std::size_t n_train = 3000;
    std::size_t n_test = 1000;
    double spread = 0.3;
    FlipKind flip = FlipKind::Uniform;
    double q = 0.5;
    int group_size = 2;
    double eta = 0.0;
    long long seed = -1;  // −1: use the run seed
};

struct RunConfig {
    DatasetSpec data;
    // pico, picoplus, or a target-policy name (PiCO with that policy).
    std::string method = "pico";
    std::vector<std::size_t> hidden{64, 64};
    std::size_t d_emb = 128;
    std::size_t queue_size = 0;  // 0: min(8192, 4·n)
    double validation_fraction = 0.0;
    std::uint64_t seed = 0;
    PicoConfig pico;
    PicoPlusConfig plus;
};

/// Parses flat `key = value` text; `#` starts a comment. Unknown keys and
/// malformed values are collected and reported together as a ConfigError.
RunConfig parse_config(std::istream& in);
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its current value, one per line, in a stable order.
/// Parsing the result gives back an identical configuration.
std::string echo_config(const RunConfig& config);

/// All range and consistency problems, empty when the configuration is usable.
std::vector<std::string> validate(const RunConfig& config);

// Runs --------------------------------------------------------------------

struct GeneratedData {
    PartialDataset train;
    PartialDataset test;  // candidate sets are the true singletons
};

GeneratedData generate(const DatasetSpec& spec, std::uint64_t seed);

struct DatasetStats {
    std::size_t n = 0;
    double mean_candidates = 0.0;
    double noisy_fraction = 0.0;  // truth missing from the candidate set
};

DatasetStats dataset_stats(const PartialDataset& data);

/// Writes train.pll, test.pll and gen.json (parameters and statistics).
GeneratedData cmd_gen(const RunConfig& config, const std::filesystem::path& out);

inline constexpr const char* kMetricsHeader =
    "epoch,lr,phi,loss_total,loss_cls,loss_cont,loss_clean,loss_noisy_cont,loss_knn,loss_noisy_cls,loss_mix,"
    "test_accuracy,val_accuracy,pseudo_target_accuracy,mmc,clean_fraction,clean_precision,clean_recall";

std::string metrics_row(const EpochMetrics& m, double val_accuracy);

struct RunSummary {
    std::vector<EpochMetrics> history;
    double test_accuracy = 0.0;
    double train_accuracy = 0.0;
    double pseudo_target_accuracy = 0.0;
    double mmc = 0.0;
    double initial_mmc = 0.0;
    double wall_seconds = 0.0;
};

// Called after every epoch with that epoch's metrics and the live state.
using EpochObserver = std::function<void(const EpochMetrics&, const TrainState&, const TrainingData&)>;

/// Trains per the configuration. With an output directory, writes
/// metrics.csv, checkpoint.txt, pseudo_targets.csv, test_embeddings.csv,
/// summary.json and config.txt there.
RunSummary cmd_train(const RunConfig& config, const std::optional<std::filesystem::path>& out,
                     const EpochObserver& observe = {});

struct EvalReport {
    std::size_t n = 0;
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;  // NaN for classes absent from the split
    double mmc = 0.0;                        // mean max predicted probability

    std::string to_json() const;
};

EvalReport evaluate_model(const ModelState& model, const PartialDataset& data);
EvalReport cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                    const std::optional<std::filesystem::path>& out);

/// Runs the theory suite and writes verify.txt/verify.json when `out` is set.
/// Callers decide what a failed check means via `all_passed()`.
theory::VerifyReport cmd_verify(const theory::VerifyOptions& options, const std::optional<std::filesystem::path>& out);

}  // namespace pico::harness
