#include "fairtrain/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "fairtrain/metrics.hpp"

namespace fairtrain {

std::string to_string(DevSelection selection) {
    switch (selection) {
        case DevSelection::final_epoch: return "final_epoch";
        case DevSelection::best_dev_accuracy: return "best_dev_accuracy";
        case DevSelection::best_dev_gap_at_threshold: return "best_dev_gap_at_threshold";
    }
    return "final_epoch";
}

DevSelection dev_selection_from_string(const std::string& name) {
    if (name == "final_epoch") return DevSelection::final_epoch;
    if (name == "best_dev_accuracy") return DevSelection::best_dev_accuracy;
    if (name == "best_dev_gap_at_threshold") return DevSelection::best_dev_gap_at_threshold;
    throw std::invalid_argument("unknown dev_selection '" + name + "'");
}

void TrainConfig::validate() const {
    if (epochs == 0) throw std::invalid_argument("epochs must be positive");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("adam decay rates must lie in (0, 1)");
    }
    if (!(epsilon > 0.0)) throw std::invalid_argument("adam epsilon must be positive");
    if (!(selection_offset >= 0.0)) throw std::invalid_argument("selection_offset must be >= 0");
}

nlohmann::json to_json(const EpochRecord& record) {
    nlohmann::json j = {{"epoch", record.epoch},
                        {"loss", record.loss},
                        {"dev_accuracy", record.dev_accuracy},
                        {"seconds", record.seconds}};
    j["dev_rms_gap"] = std::isfinite(record.dev_rms_gap) ? nlohmann::json(record.dev_rms_gap)
                                                          : nlohmann::json(nullptr);
    return j;
}

std::string history_jsonl(const TrainHistory& history) {
    std::string out;
    for (const auto& r : history) out += to_json(r).dump() + "\n";
    return out;
}

double weighted_cross_entropy(const Matrix& logits, std::span<const int> labels,
                              std::span<const double> weights) {
    const std::size_t n = logits.rows();
    if (labels.size() != n || weights.size() != n || n == 0) {
        throw std::invalid_argument("weighted_cross_entropy: shape mismatch");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto z = logits.row(i);
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - mx);
        const double log_normalizer = mx + std::log(sum);
        total += weights[i] * (log_normalizer - z[static_cast<std::size_t>(labels[i])]);
    }
    return total / static_cast<double>(n);
}

Gradients zero_gradients(const Model& model) {
    Gradients grads;
    for (const auto* layer : layers_of(model)) {
        grads.push_back({Matrix(layer->out(), layer->in()), std::vector<double>(layer->out(), 0.0)});
    }
    return grads;
}

namespace {

// d loss / d logits for the weighted mean cross-entropy; returns the loss.
double loss_gradient(const Matrix& logits, std::span<const int> labels,
                     std::span<const double> weights, Matrix& grad) {
    const double loss = weighted_cross_entropy(logits, labels, weights);
    kernels::softmax_rows(logits, grad);
    const double inv_n = 1.0 / static_cast<double>(logits.rows());
    for (std::size_t i = 0; i < grad.rows(); ++i) {
        auto g = grad.row(i);
        g[static_cast<std::size_t>(labels[i])] -= 1.0;
        const double scale = weights[i] * inv_n;
        for (double& v : g) v *= scale;
    }
    return loss;
}

// Backpropagates `grad_out` (w.r.t. the MLP output) through the traced MLP,
// writing parameter gradients to grads[first .. first + layers). Returns the
// gradient w.r.t. the MLP input when requested.
Matrix backprop(const Mlp& mlp, const std::vector<Matrix>& trace, Matrix grad_out,
                Gradients& grads, std::size_t first, bool want_input_grad) {
    const std::size_t L = mlp.layers.size();
    for (std::size_t l = L; l-- > 0;) {
        const auto& layer = mlp.layers[l];
        kernels::activate_backward(layer.activation, trace[l + 1], grad_out);
        auto& g = grads[first + l];
        kernels::affine_backward_params(grad_out, trace[l], g.weight, g.bias);
        if (l > 0 || want_input_grad) {
            Matrix grad_in;
            kernels::affine_backward_input(grad_out, layer.weight, grad_in);
            grad_out = std::move(grad_in);
        }
    }
    return want_input_grad ? grad_out : Matrix{};
}

void zero_fill(Gradients& grads, std::size_t first, std::size_t count) {
    for (std::size_t l = first; l < first + count; ++l) {
        grads[l].weight.fill(0.0);
        std::fill(grads[l].bias.begin(), grads[l].bias.end(), 0.0);
    }
}

}  // namespace

double backward(const Model& model, const Matrix& features, std::span<const int> labels,
                std::span<const double> weights, const GateCoefficients* coeffs,
                Gradients& grads) {
    if (features.rows() == 0) throw std::invalid_argument("backward: empty batch");
    if (grads.size() != layers_of(model).size()) grads = zero_gradients(model);

    if (const auto* mlp = std::get_if<Mlp>(&model)) {
        const auto trace = forward_trace(*mlp, features);
        Matrix grad;
        const double loss = loss_gradient(trace.back(), labels, weights, grad);
        backprop(*mlp, trace, std::move(grad), grads, 0, false);
        return loss;
    }

    const auto& gated = std::get<GatedModel>(model);
    if (coeffs == nullptr || coeffs->rows() != features.rows()) {
        throw std::invalid_argument("backward: gated model needs one coefficient row per instance");
    }
    check_simplex_rows(*coeffs, gated.group_count());
    const std::size_t G = gated.group_encoders.size();

    const auto shared_trace = forward_trace(gated.shared, features);
    std::vector<std::vector<Matrix>> enc_traces(G);
    std::vector<Matrix> encodings(G);
    for (std::size_t j = 0; j < G; ++j) {
        bool used = false;
        for (std::size_t i = 0; i < coeffs->rows() && !used; ++i) used = (*coeffs)(i, j) != 0.0;
        if (!used) continue;
        enc_traces[j] = forward_trace(gated.group_encoders[j], features);
        encodings[j] = enc_traces[j].back();
    }
    const Matrix mixed = mix_group_encodings(encodings, *coeffs);
    const Matrix& shared_out = shared_trace.back();
    const std::size_t hs = shared_out.cols(), hg = mixed.cols();
    Matrix joined(features.rows(), hs + hg);
    for (std::size_t i = 0; i < features.rows(); ++i) {
        auto dst = joined.row(i);
        std::copy(shared_out.row(i).begin(), shared_out.row(i).end(), dst.begin());
        std::copy(mixed.row(i).begin(), mixed.row(i).end(),
                  dst.begin() + static_cast<std::ptrdiff_t>(hs));
    }
    const auto cls_trace = forward_trace(gated.classifier, joined);

    const std::size_t shared_layers = gated.shared.layers.size();
    const std::size_t enc_layers = gated.group_encoders.front().layers.size();
    const std::size_t cls_first = shared_layers + G * enc_layers;

    Matrix grad;
    const double loss = loss_gradient(cls_trace.back(), labels, weights, grad);
    const Matrix grad_joined = backprop(gated.classifier, cls_trace, std::move(grad), grads, cls_first, true);

    Matrix grad_shared(features.rows(), hs);
    for (std::size_t i = 0; i < features.rows(); ++i) {
        std::copy_n(grad_joined.row(i).begin(), hs, grad_shared.row(i).begin());
    }
    backprop(gated.shared, shared_trace, std::move(grad_shared), grads, 0, false);

    for (std::size_t j = 0; j < G; ++j) {
        const std::size_t first = shared_layers + j * enc_layers;
        if (enc_traces[j].empty()) {
            zero_fill(grads, first, enc_layers);
            continue;
        }
        Matrix grad_enc(features.rows(), hg);
        for (std::size_t i = 0; i < features.rows(); ++i) {
            const double c = (*coeffs)(i, j);
            auto src = grad_joined.row(i).subspan(hs);
            auto dst = grad_enc.row(i);
            for (std::size_t k = 0; k < hg; ++k) dst[k] = c * src[k];
        }
        backprop(gated.group_encoders[j], enc_traces[j], std::move(grad_enc), grads, first, false);
    }
    return loss;
}

Optimizer::Optimizer(const Model& model, const TrainConfig& config) : config_(config) {
    for (const auto* layer : layers_of(model)) {
        const std::size_t size = layer->weight.size() + layer->bias.size();
        first_.emplace_back(size, 0.0);
        second_.emplace_back(size, 0.0);
    }
}

void Optimizer::step(Model& model, const Gradients& grads) {
    ++steps_;
    const double lr = config_.learning_rate;
    const double b1 = config_.beta1, b2 = config_.beta2, eps = config_.epsilon;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    auto layers = layers_of(model);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto update = [&](double& param, double g, std::size_t k) {
            if (config_.optimizer == OptimizerKind::sgd) {
                param -= lr * g;
                return;
            }
            double& m = first_[l][k];
            double& v = second_[l][k];
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            const double m_hat = m / correction1;
            const double v_hat = v / correction2;
            param -= lr * m_hat / (std::sqrt(v_hat) + eps);
        };
        auto w = layers[l]->weight.values();
        auto gw = grads[l].weight.values();
        for (std::size_t k = 0; k < w.size(); ++k) update(w[k], gw[k], k);
        auto& b = layers[l]->bias;
        for (std::size_t k = 0; k < b.size(); ++k) update(b[k], grads[l].bias[k], w.size() + k);
    }
}

TrainResult train(const ModelSpec& spec, const Dataset& train_set, const Dataset& dev_set,
                  std::span<const double> weights, const GatePolicy& gate,
                  const TrainConfig& config) {
    return train_model(make_model(spec, config.seed), train_set, dev_set, weights, gate, config);
}

namespace {

struct Candidate {
    std::size_t epoch;
    double accuracy;
    double gap;
    Model model;
};

double dev_gap(const EvalRecord& record) {
    if (record.group_count != 2) return std::numeric_limits<double>::quiet_NaN();
    const auto included = tpr_gap_per_class(record).included();
    return included.empty() ? std::numeric_limits<double>::quiet_NaN() : rms_gap(included);
}

}  // namespace

TrainResult train_model(Model initial, const Dataset& train_set, const Dataset& dev_set,
                        std::span<const double> weights, const GatePolicy& gate,
                        const TrainConfig& config) {
    config.validate();
    train_set.validate();
    dev_set.validate();
    const std::size_t n = train_set.size();
    std::vector<double> unit;
    if (weights.empty()) {
        unit.assign(n, 1.0);
        weights = unit;
    }
    if (weights.size() != n) {
        throw std::invalid_argument("weights length " + std::to_string(weights.size()) +
                                    " does not match training size " + std::to_string(n));
    }
    for (double w : weights) {
        if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("training weights must be finite and positive");
    }

    Model model = std::move(initial);
    const auto* gated = std::get_if<GatedModel>(&model);
    GateCoefficients train_coeffs;
    if (gated != nullptr) {
        GatePolicy train_gate = gate.kind == GatePolicy::Kind::bayes ? GatePolicy::onehot() : gate;
        train_coeffs = gate_matrix(train_gate, train_set.groups, gated->group_count());
    }

    Optimizer optimizer(model, config);
    Rng shuffle_rng(derive_seed(config.seed, streams::shuffle));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Gradients grads = zero_gradients(model);

    TrainResult result;
    std::optional<Candidate> best_accuracy;
    std::vector<Candidate> eligible;  // epochs still within the accuracy threshold
    double best_dev_accuracy = -1.0;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t begin = 0; begin < n; begin += config.batch_size, ++batch_index) {
            const std::size_t end = std::min(n, begin + config.batch_size);
            const std::span<const std::size_t> idx(order.data() + begin, end - begin);
            const Matrix x = gather_rows(train_set.features, idx);
            std::vector<int> y(idx.size());
            std::vector<double> w(idx.size());
            for (std::size_t k = 0; k < idx.size(); ++k) {
                y[k] = train_set.labels[idx[k]];
                w[k] = weights[idx[k]];
            }
            GateCoefficients c;
            if (gated != nullptr) c = gather_rows(train_coeffs, idx);
            const double loss = backward(model, x, y, w, gated ? &c : nullptr, grads);
            if (!std::isfinite(loss)) {
                throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(batch_index));
            }
            optimizer.step(model, grads);
            gated = std::get_if<GatedModel>(&model);
            loss_sum += loss * static_cast<double>(idx.size());
        }

        EvalRecord record{predict(model, dev_set.features, dev_set.groups, gate), dev_set.labels,
                          dev_set.groups, dev_set.label_count, dev_set.group_count};
        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(n);
        rec.dev_accuracy = accuracy(record);
        rec.dev_rms_gap = dev_gap(record);
        rec.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.history.push_back(rec);

        switch (config.dev_selection) {
            case DevSelection::final_epoch:
                break;
            case DevSelection::best_dev_accuracy:
                if (!best_accuracy || rec.dev_accuracy > best_accuracy->accuracy) {
                    best_accuracy = Candidate{epoch, rec.dev_accuracy, rec.dev_rms_gap, model};
                }
                break;
            case DevSelection::best_dev_gap_at_threshold: {
                if (dev_set.group_count != 2) {
                    throw std::invalid_argument("gap-based selection requires two groups");
                }
                best_dev_accuracy = std::max(best_dev_accuracy, rec.dev_accuracy);
                const double threshold = best_dev_accuracy - config.selection_offset;
                std::erase_if(eligible, [&](const Candidate& c) { return c.accuracy < threshold; });
                if (rec.dev_accuracy >= threshold) {
                    eligible.push_back({epoch, rec.dev_accuracy, rec.dev_rms_gap, model});
                }
                break;
            }
        }
    }

    switch (config.dev_selection) {
        case DevSelection::final_epoch:
            result.selected_epoch = config.epochs;
            result.model = std::move(model);
            break;
        case DevSelection::best_dev_accuracy:
            result.selected_epoch = best_accuracy->epoch;
            result.model = std::move(best_accuracy->model);
            break;
        case DevSelection::best_dev_gap_at_threshold: {
            auto key = [](const Candidate& c) {
                return std::isnan(c.gap) ? std::numeric_limits<double>::infinity() : c.gap;
            };
            auto best = std::min_element(eligible.begin(), eligible.end(),
                                         [&](const Candidate& a, const Candidate& b) {
                                             if (key(a) != key(b)) return key(a) < key(b);
                                             if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
                                             return a.epoch < b.epoch;
                                         });
            result.selected_epoch = best->epoch;
            result.model = std::move(best->model);
            break;
        }
    }
    return result;
}

}  // namespace fairtrain
