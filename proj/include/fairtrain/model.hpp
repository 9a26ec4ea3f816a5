#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fairtrain/kernels.hpp"
#include "fairtrain/matrix.hpp"
#include "fairtrain/rng.hpp"

namespace fairtrain {

using kernels::Activation;

std::string to_string(Activation act);
Activation activation_from_string(const std::string& name);

struct Layer {
    Matrix weight;  // out x in
    std::vector<double> bias;
    Activation activation = Activation::identity;

    std::size_t in() const noexcept { return weight.cols(); }
    std::size_t out() const noexcept { return weight.rows(); }
    friend bool operator==(const Layer&, const Layer&) = default;
};

struct Mlp {
    std::vector<Layer> layers;

    std::size_t input_dim() const { return layers.front().in(); }
    std::size_t output_dim() const { return layers.back().out(); }
    void validate() const;
    friend bool operator==(const Mlp&, const Mlp&) = default;
};

// Shared encoder E, one encoder E_j per group and a classifier C over
// concat(E(x), sum_j g_j E_j(x)).
struct GatedModel {
    Mlp shared;
    std::vector<Mlp> group_encoders;
    Mlp classifier;

    int group_count() const noexcept { return static_cast<int>(group_encoders.size()); }
    std::size_t input_dim() const { return shared.input_dim(); }
    std::size_t output_dim() const { return classifier.output_dim(); }
    void validate() const;
    friend bool operator==(const GatedModel&, const GatedModel&) = default;
};

using Model = std::variant<Mlp, GatedModel>;

enum class ModelKind { standard, gated };

struct ModelSpec {
    ModelKind kind = ModelKind::standard;
    std::size_t input_dim = 0;
    int label_count = 2;
    int group_count = 2;
    std::size_t hidden_width = 64;
    // affine layers of the standard MLP, including the output layer
    std::size_t standard_layers = 3;
    std::size_t encoder_layers = 1;
    // affine layers of the gated classifier head, including the output layer
    std::size_t classifier_layers = 2;
    Activation activation = Activation::tanh;

    void validate() const;
};

// Weights ~ N(0, 1/fan_in), zero biases.
Mlp make_mlp(std::span<const std::size_t> widths, Activation hidden, bool output_head, Rng& rng);
Model make_model(const ModelSpec& spec, std::uint64_t seed);

// Layer outputs after activation; front() is the input, back() the MLP output.
std::vector<Matrix> forward_trace(const Mlp& mlp, const Matrix& input);

Matrix forward_standard(const Mlp& mlp, const Matrix& features);
// Output of the last hidden layer (the input of the output layer).
Matrix last_hidden(const Mlp& mlp, const Matrix& features);

// Per-instance simplex weights over groups; one row per instance.
using GateCoefficients = Matrix;

std::vector<double> gate_onehot(int group, int group_count);
// Gold group 0 -> (1 - alpha, alpha); gold group 1 -> (beta, 1 - beta).
std::vector<double> gate_soft(int gold_group, double alpha, double beta);
std::vector<double> gate_uniform(int group_count);

void check_simplex_rows(const GateCoefficients& coeffs, int group_count);

// h_g = sum_j coeffs(i, j) * E_j(x_i). Zero coefficients contribute nothing,
// so a 1-hot row reproduces the selected encoder's output bitwise.
Matrix mix_group_encodings(const std::vector<Matrix>& encodings, const GateCoefficients& coeffs);
Matrix forward_gated(const GatedModel& model, const Matrix& features,
                     const GateCoefficients& coeffs);

// p(y|x) = sum_g prior(g) softmax(C(x | 1-hot g)).
Matrix bayes_average(const GatedModel& model, const Matrix& features,
                     std::span<const double> prior);

struct GatePolicy {
    enum class Kind { onehot, uniform, soft, bayes };
    Kind kind = Kind::onehot;
    double alpha = 0.0;
    double beta = 0.0;
    std::vector<double> prior;  // bayes only; empty means uniform

    static GatePolicy onehot() { return {}; }
    static GatePolicy uniform() { return {Kind::uniform, 0.0, 0.0, {}}; }
    static GatePolicy soft(double alpha, double beta) { return {Kind::soft, alpha, beta, {}}; }
    static GatePolicy bayes(std::vector<double> prior = {}) {
        return {Kind::bayes, 0.0, 0.0, std::move(prior)};
    }
};

std::string to_string(GatePolicy::Kind kind);

// Coefficient rows for a non-bayes policy given each instance's gold group.
GateCoefficients gate_matrix(const GatePolicy& policy, std::span<const int> groups,
                             int group_count);

// Class probabilities; the policy is ignored for standard models.
Matrix predict_proba(const Model& model, const Matrix& features, std::span<const int> groups,
                     const GatePolicy& policy);
std::vector<int> argmax_rows(const Matrix& scores);
std::vector<int> predict(const Model& model, const Matrix& features, std::span<const int> groups,
                         const GatePolicy& policy);

std::size_t parameter_count(const Model& model);
// Layers in checkpoint order: shared, group encoders, classifier for gated models.
std::vector<Layer*> layers_of(Model& model);
std::vector<const Layer*> layers_of(const Model& model);

// Binary checkpoint: magic, u32 header length, JSON header describing the
// architecture, then all parameters as little-endian f64 in layer order
// (weights row-major, then bias).
struct Checkpoint {
    Model model;
    ModelSpec spec;
    std::uint64_t seed = 0;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fairtrain
