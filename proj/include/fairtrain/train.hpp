#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairtrain/data.hpp"
#include "fairtrain/model.hpp"

namespace fairtrain {

enum class DevSelection { final_epoch, best_dev_accuracy, best_dev_gap_at_threshold };
enum class OptimizerKind { adam, sgd };

std::string to_string(DevSelection selection);
DevSelection dev_selection_from_string(const std::string& name);

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 1024;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;
    DevSelection dev_selection = DevSelection::best_dev_accuracy;
    // accuracy points below the best dev accuracy still eligible for gap selection
    double selection_offset = 0.02;
    OptimizerKind optimizer = OptimizerKind::adam;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double dev_accuracy = 0.0;
    double dev_rms_gap = 0.0;  // NaN when undefined
    double seconds = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

nlohmann::json to_json(const EpochRecord& record);
// One JSON object per line.
std::string history_jsonl(const TrainHistory& history);

// (1/n) sum_i w_i * -log softmax(logits_i)[y_i]
double weighted_cross_entropy(const Matrix& logits, std::span<const int> labels,
                              std::span<const double> weights);

struct LayerGradient {
    Matrix weight;
    std::vector<double> bias;
};

// Same order as layers_of(model).
using Gradients = std::vector<LayerGradient>;

Gradients zero_gradients(const Model& model);

// Exact gradient of weighted_cross_entropy over the batch; returns the loss.
// `coeffs` is required for gated models and ignored for standard ones.
double backward(const Model& model, const Matrix& features, std::span<const int> labels,
                std::span<const double> weights, const GateCoefficients* coeffs,
                Gradients& grads);

class Optimizer {
public:
    Optimizer(const Model& model, const TrainConfig& config);
    void step(Model& model, const Gradients& grads);

private:
    TrainConfig config_;
    std::vector<std::vector<double>> first_, second_;
    std::size_t steps_ = 0;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    Model model;
    TrainHistory history;
    std::size_t selected_epoch = 0;
};

// `weights` empty means unit weights. The gate policy applies to gated models
// during training and dev evaluation.
TrainResult train(const ModelSpec& spec, const Dataset& train_set, const Dataset& dev_set,
                  std::span<const double> weights, const GatePolicy& gate,
                  const TrainConfig& config);

// Same loop starting from an existing model.
TrainResult train_model(Model initial, const Dataset& train_set, const Dataset& dev_set,
                        std::span<const double> weights, const GatePolicy& gate,
                        const TrainConfig& config);

}  // namespace fairtrain
