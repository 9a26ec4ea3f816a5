#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "fairtrain/balance.hpp"
#include "fairtrain/data.hpp"
#include "fairtrain/matrix.hpp"
#include "fairtrain/train.hpp"

namespace fairtrain {

struct LogisticConfig {
    double l2 = 1e-4;
    double tolerance = 1e-6;  // max absolute gradient entry at convergence
    std::size_t max_iterations = 5000;
};

// Multinomial logistic regression with class 0 as the reference class: one
// weight row per non-reference class.
struct LinearProbe {
    Matrix weight;  // (classes - 1) x d
    std::vector<double> bias;
    int class_count = 2;
    double train_accuracy = 0.0;
    std::size_t iterations = 0;

    Matrix decision(const Matrix& x) const;
    std::vector<int> predict(const Matrix& x) const;
};

// Deterministic accelerated full-batch gradient descent from zero. `weights`
// empty means unit instance weights.
LinearProbe fit_logistic(const Matrix& x, std::span<const int> targets, int class_count,
                         std::span<const double> weights = {}, const LogisticConfig& config = {});

// Probe for the protected attribute; errors when fewer than two groups occur.
LinearProbe fit_linear_probe(const Matrix& representations, std::span<const int> groups,
                             int group_count, const LogisticConfig& config = {});

// Orthogonal projector onto the complement of span(directions).
Matrix nullspace_projection(const std::vector<std::vector<double>>& directions);

struct ProjectionStack {
    std::size_t dim = 0;
    std::vector<std::vector<double>> directions;  // orthonormal
    Matrix projection;                            // I - sum u u^T
    std::vector<double> probe_accuracy;           // one per fitted probe
    double majority = 0.0;

    std::size_t rank() const { return dim - directions.size(); }
};

struct InlpConfig {
    std::size_t iterations = 10;
    double stop_margin = 0.02;
    LogisticConfig probe;
};

ProjectionStack run_inlp(const Matrix& representations, std::span<const int> groups,
                         int group_count, const InlpConfig& config);

Matrix apply_projection(const ProjectionStack& stack, const Matrix& representations);

// Binary: magic, u64 d, u64 count, then the directions as f64.
void save_projection(const ProjectionStack& stack, const std::filesystem::path& path);
ProjectionStack load_projection(const std::filesystem::path& path);

enum class InlpBase { standard, rw, ds };

std::string to_string(InlpBase base);
InlpBase inlp_base_from_string(const std::string& name);

struct InlpPipelineConfig {
    InlpBase base = InlpBase::standard;
    BalanceObjective objective;
    ModelSpec spec;
    TrainConfig train;
    InlpConfig inlp;
    LogisticConfig classifier;
};

struct InlpPipelineResult {
    TrainResult base;
    std::vector<double> weights;  // rw base only
    ProjectionStack stack;
    LinearProbe classifier;
    std::vector<int> dev_predictions;
    std::vector<int> test_predictions;
};

// Trains a standard base model, removes the group subspace from its last
// hidden layer and fits a logistic classifier on the projected layer.
InlpPipelineResult inlp_pipeline(const Dataset& train_set, const Dataset& dev_set,
                                 const Dataset& test_set, const InlpPipelineConfig& config);

}  // namespace fairtrain
