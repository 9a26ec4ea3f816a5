#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairtrain/balance.hpp"
#include "fairtrain/data.hpp"
#include "fairtrain/inlp.hpp"
#include "fairtrain/metrics.hpp"
#include "fairtrain/model.hpp"
#include "fairtrain/train.hpp"
#include "fairtrain/tuning.hpp"

namespace fairtrain {

// Invalid configuration; `field` is the dotted path of the offending key.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string field, const std::string& message)
        : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

struct SplitSizes {
    std::size_t train = 0, dev = 0, test = 0;
};

struct DataConfig {
    // either files or a synthetic generator
    std::optional<std::filesystem::path> train_path, dev_path, test_path;
    SyntheticConfig synthetic;
    // per-split generation; otherwise `synthetic.n` instances are split by fractions
    std::optional<SplitSizes> split_sizes;
    SplitFractions fractions;
    // skew of generated dev/test splits (split_sizes only); defaults to the train skew
    std::optional<double> eval_skew;
    DatasetFormat format = DatasetFormat::binary;
};

enum class BalanceMethod { none, rw, ds };

struct BalanceConfig {
    BalanceMethod method = BalanceMethod::none;
    BalanceObjective objective;
    std::optional<double> target_skew;
    WeightConvention convention = WeightConvention::normalized;
};

struct InlpSection {
    bool enabled = false;
    InlpConfig config;
};

struct ExperimentConfig {
    std::string label;
    DataConfig data;
    ModelSpec model;  // input_dim and counts are filled from the data
    BalanceConfig balance;
    GatePolicy gating;
    InlpSection inlp;
    TrainConfig train;
    SelectionRule sweep_rule;
    std::size_t sweep_resolution = 21;
    std::vector<std::uint64_t> seeds{0};
    std::optional<std::filesystem::path> output;
    nlohmann::json source;  // the validated document, defaults filled in
};

// Schema-checked parse; unknown keys are errors. Relative data paths resolve
// against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& document,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// FNV-1a over the canonical experiment document, without the output location,
// the seed list and the sweep settings.
std::string config_hash(const ExperimentConfig& config);

struct Splits {
    Dataset train, dev, test;
};

Splits load_data(const ExperimentConfig& config);

struct RunOutcome {
    Checkpoint checkpoint;
    TrainHistory history;
    std::size_t selected_epoch = 0;
    std::vector<double> weights;  // rw only
    std::size_t train_size = 0;   // after down-sampling
    std::optional<ProjectionStack> projection;
    std::optional<LinearProbe> inlp_classifier;
    FairnessReport dev_report, test_report;
    double train_seconds = 0.0;
};

// balance -> train -> optional INLP -> evaluate on dev and test.
RunOutcome run_experiment(const ExperimentConfig& config, const Splits& data, std::uint64_t seed);

// Artifacts of a finished run as read back from its directory.
struct StoredRun {
    Checkpoint checkpoint;
    std::optional<ProjectionStack> projection;
    std::optional<LinearProbe> inlp_classifier;
};

StoredRun load_run(const std::filesystem::path& dir);

// Predictions on `dataset` (gating from the config; INLP runs go through the
// projection and the final classifier).
std::vector<int> run_predictions(const ExperimentConfig& config, const Model& model,
                                 const ProjectionStack* projection, const LinearProbe* classifier,
                                 const Dataset& dataset);

std::filesystem::path output_root(const ExperimentConfig& config,
                                  const std::optional<std::filesystem::path>& override_root);
std::filesystem::path run_directory(const std::filesystem::path& root,
                                    const ExperimentConfig& config, std::uint64_t seed);

// Writes checkpoint.bin, history.jsonl, report_dev.json, report_test.json,
// run.json, weights.txt (rw), projection.bin and classifier.json (INLP), and
// timing.json (the only file with wall-clock values).
void write_run(const std::filesystem::path& dir, const ExperimentConfig& config,
               std::uint64_t seed, const RunOutcome& outcome);

struct SweepOutcome {
    SweepMatrix matrix;
    std::size_t selected = 0;
    FairnessReport test_report;
};

SweepOutcome run_sweep(const ExperimentConfig& config, const Splits& data, const Checkpoint& checkpoint);
void write_sweep(const std::filesystem::path& dir, const SweepOutcome& outcome, const SelectionRule& rule);

struct SummaryRow {
    std::string label;
    std::size_t runs = 0;
    AggregateReport test;
    double tradeoff = 0.0;
    std::optional<double> relative_time;
};

// Groups run directories by label; every label needs at least two seeds.
std::vector<SummaryRow> summarize_runs(const std::vector<std::filesystem::path>& run_dirs);
nlohmann::json summary_json(const std::vector<SummaryRow>& rows);
std::string summary_csv(const std::vector<SummaryRow>& rows);

}  // namespace fairtrain
