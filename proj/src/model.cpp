#include "fairtrain/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fairtrain {

std::string to_string(Activation act) {
    switch (act) {
        case Activation::identity: return "identity";
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
    }
    return "identity";
}

Activation activation_from_string(const std::string& name) {
    if (name == "identity") return Activation::identity;
    if (name == "tanh") return Activation::tanh;
    if (name == "relu") return Activation::relu;
    throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(GatePolicy::Kind kind) {
    switch (kind) {
        case GatePolicy::Kind::onehot: return "onehot";
        case GatePolicy::Kind::uniform: return "uniform";
        case GatePolicy::Kind::soft: return "soft";
        case GatePolicy::Kind::bayes: return "bayes";
    }
    return "onehot";
}

void Mlp::validate() const {
    if (layers.empty()) throw std::invalid_argument("MLP has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        if (layer.bias.size() != layer.out() || layer.out() == 0 || layer.in() == 0) {
            throw std::invalid_argument("MLP layer " + std::to_string(l) + " is malformed");
        }
        if (l > 0 && layers[l - 1].out() != layer.in()) {
            throw std::invalid_argument("MLP layer " + std::to_string(l) + " expects width " +
                                        std::to_string(layer.in()) + ", previous layer emits " +
                                        std::to_string(layers[l - 1].out()));
        }
        for (double v : layer.weight.values())
            if (!std::isfinite(v)) throw std::invalid_argument("non-finite MLP weight");
        for (double v : layer.bias)
            if (!std::isfinite(v)) throw std::invalid_argument("non-finite MLP bias");
    }
}

void GatedModel::validate() const {
    shared.validate();
    classifier.validate();
    if (group_encoders.empty()) throw std::invalid_argument("gated model has no group encoders");
    for (const auto& enc : group_encoders) {
        enc.validate();
        if (enc.input_dim() != shared.input_dim()) {
            throw std::invalid_argument("group encoder input width differs from shared encoder");
        }
        if (enc.output_dim() != group_encoders.front().output_dim()) {
            throw std::invalid_argument("group encoders differ in output width");
        }
    }
    if (classifier.input_dim() != shared.output_dim() + group_encoders.front().output_dim()) {
        throw std::invalid_argument("classifier input width must equal shared + group width");
    }
}

void ModelSpec::validate() const {
    if (input_dim == 0) throw std::invalid_argument("model input_dim must be positive");
    if (label_count < 2) throw std::invalid_argument("model needs at least two labels");
    if (hidden_width == 0) throw std::invalid_argument("hidden_width must be positive");
    if (kind == ModelKind::standard && standard_layers < 1) {
        throw std::invalid_argument("standard_layers must be at least 1");
    }
    if (kind == ModelKind::gated) {
        if (group_count < 1) throw std::invalid_argument("gated model needs at least one group");
        if (encoder_layers < 1 || classifier_layers < 1) {
            throw std::invalid_argument("gated model needs encoder and classifier layers");
        }
    }
}

Mlp make_mlp(std::span<const std::size_t> widths, Activation hidden, bool output_head, Rng& rng) {
    if (widths.size() < 2) throw std::invalid_argument("make_mlp needs at least two widths");
    Mlp mlp;
    const std::size_t count = widths.size() - 1;
    for (std::size_t l = 0; l < count; ++l) {
        Layer layer;
        layer.weight = Matrix(widths[l + 1], widths[l]);
        layer.bias.assign(widths[l + 1], 0.0);
        layer.activation = (output_head && l + 1 == count) ? Activation::identity : hidden;
        std::normal_distribution<double> init(0.0, std::sqrt(1.0 / static_cast<double>(widths[l])));
        for (double& w : layer.weight.values()) w = init(rng);
        mlp.layers.push_back(std::move(layer));
    }
    return mlp;
}

Model make_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(derive_seed(seed, streams::init));
    const std::size_t h = spec.hidden_width;
    const auto labels = static_cast<std::size_t>(spec.label_count);
    if (spec.kind == ModelKind::standard) {
        std::vector<std::size_t> widths{spec.input_dim};
        for (std::size_t l = 0; l + 1 < spec.standard_layers; ++l) widths.push_back(h);
        widths.push_back(labels);
        return make_mlp(widths, spec.activation, true, rng);
    }
    std::vector<std::size_t> enc_widths{spec.input_dim};
    for (std::size_t l = 0; l < spec.encoder_layers; ++l) enc_widths.push_back(h);
    GatedModel gated;
    gated.shared = make_mlp(enc_widths, spec.activation, false, rng);
    for (int g = 0; g < spec.group_count; ++g) {
        gated.group_encoders.push_back(make_mlp(enc_widths, spec.activation, false, rng));
    }
    std::vector<std::size_t> head_widths{2 * h};
    for (std::size_t l = 0; l + 1 < spec.classifier_layers; ++l) head_widths.push_back(h);
    head_widths.push_back(labels);
    gated.classifier = make_mlp(head_widths, spec.activation, true, rng);
    return gated;
}

std::vector<Matrix> forward_trace(const Mlp& mlp, const Matrix& input) {
    if (mlp.layers.empty()) throw std::invalid_argument("MLP has no layers");
    if (input.cols() != mlp.input_dim()) {
        throw std::invalid_argument("feature width " + std::to_string(input.cols()) +
                                    " does not match model input width " +
                                    std::to_string(mlp.input_dim()));
    }
    std::vector<Matrix> trace;
    trace.reserve(mlp.layers.size() + 1);
    trace.push_back(input);
    for (const auto& layer : mlp.layers) {
        Matrix out;
        kernels::affine_forward(trace.back(), layer.weight, layer.bias, out);
        kernels::activate(layer.activation, out);
        trace.push_back(std::move(out));
    }
    return trace;
}

namespace {

Matrix run_layers(const Mlp& mlp, const Matrix& input, std::size_t layer_count) {
    if (input.cols() != mlp.input_dim()) {
        throw std::invalid_argument("feature width " + std::to_string(input.cols()) +
                                    " does not match model input width " +
                                    std::to_string(mlp.input_dim()));
    }
    Matrix current = input;
    for (std::size_t l = 0; l < layer_count; ++l) {
        const auto& layer = mlp.layers[l];
        Matrix out;
        kernels::affine_forward(current, layer.weight, layer.bias, out);
        kernels::activate(layer.activation, out);
        current = std::move(out);
    }
    return current;
}

}  // namespace

Matrix forward_standard(const Mlp& mlp, const Matrix& features) {
    if (mlp.layers.empty()) throw std::invalid_argument("MLP has no layers");
    return run_layers(mlp, features, mlp.layers.size());
}

Matrix last_hidden(const Mlp& mlp, const Matrix& features) {
    if (mlp.layers.size() < 2) throw std::invalid_argument("MLP has no hidden layer");
    return run_layers(mlp, features, mlp.layers.size() - 1);
}

std::vector<double> gate_onehot(int group, int group_count) {
    if (group < 0 || group >= group_count) {
        throw std::out_of_range("group " + std::to_string(group) + " outside [0, " +
                                std::to_string(group_count) + ")");
    }
    std::vector<double> coeffs(static_cast<std::size_t>(group_count), 0.0);
    coeffs[static_cast<std::size_t>(group)] = 1.0;
    return coeffs;
}

std::vector<double> gate_soft(int gold_group, double alpha, double beta) {
    if (!(alpha >= 0.0 && alpha <= 1.0) || !(beta >= 0.0 && beta <= 1.0)) {
        throw std::out_of_range("gate_soft: alpha and beta must lie in [0, 1]");
    }
    if (gold_group == 0) return {1.0 - alpha, alpha};
    if (gold_group == 1) return {beta, 1.0 - beta};
    throw std::out_of_range("gate_soft: gold group must be 0 or 1");
}

std::vector<double> gate_uniform(int group_count) {
    if (group_count < 1) throw std::invalid_argument("gate_uniform: group_count must be >= 1");
    return std::vector<double>(static_cast<std::size_t>(group_count),
                               1.0 / static_cast<double>(group_count));
}

void check_simplex_rows(const GateCoefficients& coeffs, int group_count) {
    if (coeffs.cols() != static_cast<std::size_t>(group_count)) {
        throw std::invalid_argument("gate coefficients have " + std::to_string(coeffs.cols()) +
                                    " columns, model has " + std::to_string(group_count) +
                                    " groups");
    }
    for (std::size_t i = 0; i < coeffs.rows(); ++i) {
        double sum = 0.0;
        for (double c : coeffs.row(i)) {
            if (!(c >= 0.0)) {
                throw std::invalid_argument("gate coefficient row " + std::to_string(i) +
                                            " has a negative entry");
            }
            sum += c;
        }
        if (std::abs(sum - 1.0) > 1e-12) {
            throw std::invalid_argument("gate coefficient row " + std::to_string(i) +
                                        " is not on the simplex");
        }
    }
}

Matrix mix_group_encodings(const std::vector<Matrix>& encodings, const GateCoefficients& coeffs) {
    const std::size_t n = coeffs.rows();
    std::size_t width = 0;
    for (const auto& e : encodings)
        if (!e.empty()) width = e.cols();
    Matrix mixed(n, width);
    for (std::size_t i = 0; i < n; ++i) {
        auto out = mixed.row(i);
        bool first = true;
        for (std::size_t j = 0; j < encodings.size(); ++j) {
            const double c = coeffs(i, j);
            if (c == 0.0) continue;
            auto e = encodings[j].row(i);
            for (std::size_t k = 0; k < width; ++k) {
                const double term = c == 1.0 ? e[k] : c * e[k];
                out[k] = first ? term : out[k] + term;
            }
            first = false;
        }
    }
    return mixed;
}

namespace {

// E_j(x) for every group with a non-zero coefficient somewhere in the batch.
std::vector<Matrix> group_encodings(const GatedModel& model, const Matrix& features,
                                    const GateCoefficients& coeffs) {
    std::vector<Matrix> encodings(model.group_encoders.size());
    for (std::size_t j = 0; j < encodings.size(); ++j) {
        bool used = false;
        for (std::size_t i = 0; i < coeffs.rows() && !used; ++i) used = coeffs(i, j) != 0.0;
        if (used) encodings[j] = forward_standard(model.group_encoders[j], features);
    }
    return encodings;
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), a.cols() + b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        std::copy(a.row(i).begin(), a.row(i).end(), dst.begin());
        std::copy(b.row(i).begin(), b.row(i).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
    }
    return out;
}

}  // namespace

Matrix forward_gated(const GatedModel& model, const Matrix& features,
                     const GateCoefficients& coeffs) {
    if (coeffs.rows() != features.rows()) {
        throw std::invalid_argument("gate coefficients need one row per instance");
    }
    check_simplex_rows(coeffs, model.group_count());
    const Matrix shared = forward_standard(model.shared, features);
    const Matrix group = mix_group_encodings(group_encodings(model, features, coeffs), coeffs);
    return forward_standard(model.classifier, concat_cols(shared, group));
}

namespace {

void check_prior(std::span<const double> prior, int group_count) {
    if (prior.size() != static_cast<std::size_t>(group_count)) {
        throw std::invalid_argument("prior must have one entry per group");
    }
    double sum = 0.0;
    for (double p : prior) {
        if (!(p >= 0.0)) throw std::invalid_argument("prior has a negative entry");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("prior is not on the simplex");
}

}  // namespace

Matrix bayes_average(const GatedModel& model, const Matrix& features,
                     std::span<const double> prior) {
    const int G = model.group_count();
    check_prior(prior, G);
    Matrix mixed(features.rows(), model.output_dim(), 0.0);
    bool first = true;
    for (int g = 0; g < G; ++g) {
        const double weight = prior[static_cast<std::size_t>(g)];
        if (weight == 0.0) continue;
        Matrix coeffs(features.rows(), static_cast<std::size_t>(G), 0.0);
        for (std::size_t i = 0; i < features.rows(); ++i) coeffs(i, static_cast<std::size_t>(g)) = 1.0;
        Matrix probs;
        kernels::softmax_rows(forward_gated(model, features, coeffs), probs);
        auto dst = mixed.values();
        auto src = probs.values();
        for (std::size_t k = 0; k < dst.size(); ++k) {
            const double term = weight == 1.0 ? src[k] : weight * src[k];
            dst[k] = first ? term : dst[k] + term;
        }
        first = false;
    }
    return mixed;
}

GateCoefficients gate_matrix(const GatePolicy& policy, std::span<const int> groups,
                             int group_count) {
    GateCoefficients coeffs(groups.size(), static_cast<std::size_t>(group_count), 0.0);
    for (std::size_t i = 0; i < groups.size(); ++i) {
        std::vector<double> row;
        switch (policy.kind) {
            case GatePolicy::Kind::onehot: row = gate_onehot(groups[i], group_count); break;
            case GatePolicy::Kind::uniform: row = gate_uniform(group_count); break;
            case GatePolicy::Kind::soft:
                if (group_count != 2) {
                    throw std::invalid_argument("soft gating requires exactly two groups");
                }
                row = gate_soft(groups[i], policy.alpha, policy.beta);
                break;
            case GatePolicy::Kind::bayes:
                throw std::invalid_argument("bayes policy has no gate coefficients");
        }
        std::copy(row.begin(), row.end(), coeffs.row(i).begin());
    }
    return coeffs;
}

Matrix predict_proba(const Model& model, const Matrix& features, std::span<const int> groups,
                     const GatePolicy& policy) {
    Matrix probs;
    if (const auto* mlp = std::get_if<Mlp>(&model)) {
        kernels::softmax_rows(forward_standard(*mlp, features), probs);
        return probs;
    }
    const auto& gated = std::get<GatedModel>(model);
    if (policy.kind == GatePolicy::Kind::bayes) {
        const auto prior = policy.prior.empty() ? gate_uniform(gated.group_count()) : policy.prior;
        return bayes_average(gated, features, prior);
    }
    if (groups.size() != features.rows()) {
        throw std::invalid_argument("gated prediction needs one group per instance");
    }
    kernels::softmax_rows(
        forward_gated(gated, features, gate_matrix(policy, groups, gated.group_count())), probs);
    return probs;
}

std::vector<int> argmax_rows(const Matrix& scores) {
    std::vector<int> out(scores.rows());
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        auto r = scores.row(i);
        out[i] = static_cast<int>(std::distance(r.begin(), std::max_element(r.begin(), r.end())));
    }
    return out;
}

std::vector<int> predict(const Model& model, const Matrix& features, std::span<const int> groups,
                         const GatePolicy& policy) {
    return argmax_rows(predict_proba(model, features, groups, policy));
}

std::vector<Layer*> layers_of(Model& model) {
    std::vector<Layer*> out;
    auto add = [&](Mlp& mlp) {
        for (auto& l : mlp.layers) out.push_back(&l);
    };
    if (auto* mlp = std::get_if<Mlp>(&model)) {
        add(*mlp);
    } else {
        auto& gated = std::get<GatedModel>(model);
        add(gated.shared);
        for (auto& enc : gated.group_encoders) add(enc);
        add(gated.classifier);
    }
    return out;
}

std::vector<const Layer*> layers_of(const Model& model) {
    auto layers = layers_of(const_cast<Model&>(model));
    return {layers.begin(), layers.end()};
}

std::size_t parameter_count(const Model& model) {
    std::size_t count = 0;
    for (const auto* layer : layers_of(model)) count += layer->weight.size() + layer->bias.size();
    return count;
}

}  // namespace fairtrain
