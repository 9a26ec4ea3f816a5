#include "fairtrain/inlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "binary_io.hpp"

namespace fairtrain {

Matrix LinearProbe::decision(const Matrix& x) const {
    Matrix partial;
    kernels::affine_forward(x, weight, bias, partial);
    Matrix logits(x.rows(), static_cast<std::size_t>(class_count));
    for (std::size_t i = 0; i < x.rows(); ++i) {
        std::copy(partial.row(i).begin(), partial.row(i).end(), logits.row(i).begin() + 1);
    }
    return logits;
}

std::vector<int> LinearProbe::predict(const Matrix& x) const { return argmax_rows(decision(x)); }

namespace {

// Largest eigenvalue of the weighted second-moment matrix of [x, 1].
double moment_spectral_bound(const Matrix& x, std::span<const double> w) {
    const std::size_t n = x.rows(), d = x.cols() + 1;
    Matrix m(d, d);
    std::vector<double> row(d);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(x.row(i).begin(), x.row(i).end(), row.begin());
        row[d - 1] = 1.0;
        for (std::size_t a = 0; a < d; ++a) {
            const double s = w[i] * row[a];
            for (std::size_t b = 0; b < d; ++b) m(a, b) += s * row[b];
        }
    }
    for (double& v : m.values()) v /= static_cast<double>(n);
    std::vector<double> v(d, 1.0), next(d);
    double lambda = 0.0;
    for (int it = 0; it < 200; ++it) {
        for (std::size_t a = 0; a < d; ++a) {
            double acc = 0.0;
            for (std::size_t b = 0; b < d; ++b) acc += m(a, b) * v[b];
            next[a] = acc;
        }
        double norm = 0.0;
        for (double t : next) norm += t * t;
        norm = std::sqrt(norm);
        if (norm == 0.0) break;
        for (std::size_t a = 0; a < d; ++a) v[a] = next[a] / norm;
        if (std::abs(norm - lambda) <= 1e-9 * norm) {
            lambda = norm;
            break;
        }
        lambda = norm;
    }
    // Frobenius norm as a safe fallback if power iteration has not settled
    double frob = 0.0;
    for (double t : m.values()) frob += t * t;
    return std::min(std::sqrt(frob), lambda * 1.05);
}

}  // namespace

LinearProbe fit_logistic(const Matrix& x, std::span<const int> targets, int class_count,
                         std::span<const double> weights, const LogisticConfig& config) {
    const std::size_t n = x.rows(), d = x.cols();
    if (n == 0 || targets.size() != n) throw std::invalid_argument("fit_logistic: shape mismatch");
    if (class_count < 2) throw std::invalid_argument("fit_logistic: need at least two classes");
    std::vector<double> unit;
    if (weights.empty()) {
        unit.assign(n, 1.0);
        weights = unit;
    }
    if (weights.size() != n) throw std::invalid_argument("fit_logistic: weight length mismatch");
    for (int t : targets) {
        if (t < 0 || t >= class_count) throw std::invalid_argument("fit_logistic: target out of range");
    }

    const std::size_t k = static_cast<std::size_t>(class_count) - 1;
    const double step = 1.0 / (0.5 * moment_spectral_bound(x, weights) + config.l2);
    const double inv_n = 1.0 / static_cast<double>(n);

    LinearProbe current{Matrix(k, d), std::vector<double>(k, 0.0), class_count, 0.0, 0};
    LinearProbe previous = current, lookahead = current;
    Matrix grad_w(k, d), probs, grad_logits(n, k);
    std::vector<double> grad_b(k);

    for (std::size_t it = 1; it <= config.max_iterations; ++it) {
        kernels::softmax_rows(lookahead.decision(x), probs);
        for (std::size_t i = 0; i < n; ++i) {
            const double s = weights[i] * inv_n;
            for (std::size_t c = 0; c < k; ++c) {
                const double indicator = targets[i] == static_cast<int>(c + 1) ? 1.0 : 0.0;
                grad_logits(i, c) = s * (probs(i, c + 1) - indicator);
            }
        }
        kernels::affine_backward_params(grad_logits, x, grad_w, grad_b);
        double worst = 0.0;
        auto gw = grad_w.values();
        auto lw = lookahead.weight.values();
        for (std::size_t j = 0; j < gw.size(); ++j) {
            gw[j] += config.l2 * lw[j];
            worst = std::max(worst, std::abs(gw[j]));
        }
        for (double g : grad_b) worst = std::max(worst, std::abs(g));
        current.iterations = it;
        if (worst < config.tolerance) {
            current = lookahead;
            current.iterations = it;
            break;
        }

        previous = current;
        for (std::size_t j = 0; j < gw.size(); ++j) current.weight.values()[j] = lw[j] - step * gw[j];
        for (std::size_t c = 0; c < k; ++c) current.bias[c] = lookahead.bias[c] - step * grad_b[c];
        const double momentum = static_cast<double>(it - 1) / static_cast<double>(it + 2);
        for (std::size_t j = 0; j < gw.size(); ++j) {
            const double now = current.weight.values()[j];
            lookahead.weight.values()[j] = now + momentum * (now - previous.weight.values()[j]);
        }
        for (std::size_t c = 0; c < k; ++c) {
            lookahead.bias[c] = current.bias[c] + momentum * (current.bias[c] - previous.bias[c]);
        }
    }

    for (double v : current.weight.values()) {
        if (!std::isfinite(v)) throw std::runtime_error("fit_logistic: non-finite parameters");
    }
    const auto predicted = current.predict(x);
    double hits = 0.0, total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += weights[i];
        if (predicted[i] == targets[i]) hits += weights[i];
    }
    current.train_accuracy = hits / total;
    return current;
}

LinearProbe fit_linear_probe(const Matrix& representations, std::span<const int> groups,
                             int group_count, const LogisticConfig& config) {
    const std::set<int> present(groups.begin(), groups.end());
    if (present.size() < 2) throw std::invalid_argument("fit_linear_probe: fewer than two groups present");
    return fit_logistic(representations, groups, group_count, {}, config);
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Gram-Schmidt (two passes) of `v` against `basis`; returns false when `v`
// lies in span(basis).
bool orthonormalize(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
    const double original = std::sqrt(dot(v, v));
    for (int pass = 0; pass < 2; ++pass) {
        for (const auto& u : basis) {
            const double c = dot(v, u);
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * u[i];
        }
    }
    const double norm = std::sqrt(dot(v, v));
    if (norm <= 1e-10 * original) return false;
    for (double& t : v) t /= norm;
    return true;
}

Matrix projector(std::size_t d, const std::vector<std::vector<double>>& basis) {
    Matrix p(d, d);
    for (std::size_t i = 0; i < d; ++i) p(i, i) = 1.0;
    for (const auto& u : basis) {
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) p(a, b) -= u[a] * u[b];
    }
    // exact symmetry regardless of rounding order
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a + 1; b < d; ++b) p(b, a) = p(a, b);
    return p;
}

void check_direction(std::span<const double> v, std::size_t d) {
    if (v.size() != d) throw std::invalid_argument("direction width mismatch");
    bool nonzero = false;
    for (double t : v) {
        if (!std::isfinite(t)) throw std::invalid_argument("direction has non-finite entries");
        nonzero = nonzero || t != 0.0;
    }
    if (!nonzero) throw std::invalid_argument("all-zero direction");
}

}  // namespace

Matrix nullspace_projection(const std::vector<std::vector<double>>& directions) {
    if (directions.empty()) throw std::invalid_argument("nullspace_projection: no directions");
    const std::size_t d = directions.front().size();
    std::vector<std::vector<double>> basis;
    for (auto v : directions) {
        check_direction(v, d);
        if (orthonormalize(v, basis)) basis.push_back(std::move(v));
    }
    return projector(d, basis);
}

ProjectionStack run_inlp(const Matrix& representations, std::span<const int> groups,
                         int group_count, const InlpConfig& config) {
    const std::size_t d = representations.cols();
    if (config.iterations == 0) throw std::invalid_argument("run_inlp: iterations must be >= 1");
    if (config.iterations > d) {
        throw std::invalid_argument("run_inlp: " + std::to_string(config.iterations) +
                                    " iterations exceed the representation width " + std::to_string(d));
    }
    if (groups.size() != representations.rows()) throw std::invalid_argument("run_inlp: length mismatch");

    ProjectionStack stack;
    stack.dim = d;
    std::vector<std::size_t> counts(static_cast<std::size_t>(group_count), 0);
    for (int g : groups) {
        if (g < 0 || g >= group_count) throw std::invalid_argument("run_inlp: group out of range");
        ++counts[static_cast<std::size_t>(g)];
    }
    stack.majority = static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
                     static_cast<double>(groups.size());
    stack.projection = projector(d, {});

    Matrix current = representations;
    for (std::size_t it = 0; it < config.iterations; ++it) {
        const LinearProbe probe = fit_linear_probe(current, groups, group_count, config.probe);
        stack.probe_accuracy.push_back(probe.train_accuracy);
        if (it > 0 && probe.train_accuracy <= stack.majority + config.stop_margin) break;
        std::size_t added = 0;
        for (std::size_t r = 0; r < probe.weight.rows(); ++r) {
            std::vector<double> v(probe.weight.row(r).begin(), probe.weight.row(r).end());
            if (std::all_of(v.begin(), v.end(), [](double t) { return t == 0.0; })) continue;
            if (orthonormalize(v, stack.directions)) {
                stack.directions.push_back(std::move(v));
                ++added;
            }
        }
        if (added == 0 || stack.directions.size() >= d) break;
        stack.projection = projector(d, stack.directions);
        current = apply_projection(stack, representations);
    }
    if (stack.directions.empty()) throw std::runtime_error("run_inlp: probe found no direction to remove");
    stack.projection = projector(d, stack.directions);
    return stack;
}

Matrix apply_projection(const ProjectionStack& stack, const Matrix& representations) {
    if (representations.cols() != stack.dim) {
        throw std::invalid_argument("apply_projection: width " + std::to_string(representations.cols()) +
                                    " does not match projection width " + std::to_string(stack.dim));
    }
    if (stack.directions.empty()) throw std::invalid_argument("apply_projection: empty stack");
    // P is symmetric, so x P^T = x P
    const std::vector<double> zero(stack.dim, 0.0);
    Matrix out;
    kernels::affine_forward(representations, stack.projection, zero, out);
    return out;
}

namespace {
constexpr char kProjectionMagic[8] = {'F', 'T', 'P', 'R', 'O', 'J', '0', '1'};
}

void save_projection(const ProjectionStack& stack, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(kProjectionMagic, sizeof kProjectionMagic);
    binio::write_u64(os, stack.dim);
    binio::write_u64(os, stack.directions.size());
    for (const auto& u : stack.directions)
        for (double t : u) binio::write_f64(os, t);
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

ProjectionStack load_projection(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    binio::Reader reader(is, path.string());
    reader.expect_magic(kProjectionMagic);
    ProjectionStack stack;
    stack.dim = reader.u64("dimension");
    const auto count = reader.u64("direction count");
    if (stack.dim == 0 || count == 0 || count > stack.dim) reader.fail("invalid projection shape");
    for (std::uint64_t c = 0; c < count; ++c) {
        std::vector<double> u(stack.dim);
        for (double& t : u) t = reader.f64("direction");
        stack.directions.push_back(std::move(u));
    }
    reader.expect_end();
    stack.projection = projector(stack.dim, stack.directions);
    return stack;
}

std::string to_string(InlpBase base) {
    switch (base) {
        case InlpBase::standard: return "standard";
        case InlpBase::rw: return "rw";
        case InlpBase::ds: return "ds";
    }
    return "standard";
}

InlpBase inlp_base_from_string(const std::string& name) {
    if (name == "standard") return InlpBase::standard;
    if (name == "rw") return InlpBase::rw;
    if (name == "ds") return InlpBase::ds;
    throw std::invalid_argument("unknown INLP base '" + name + "'");
}

InlpPipelineResult inlp_pipeline(const Dataset& train_set, const Dataset& dev_set,
                                 const Dataset& test_set, const InlpPipelineConfig& config) {
    if (config.spec.kind != ModelKind::standard) {
        throw std::invalid_argument("inlp_pipeline: the base model must be a standard model");
    }
    InlpPipelineResult result;
    const Dataset* fit_set = &train_set;
    Dataset sampled;
    if (config.base == InlpBase::rw) {
        result.weights = compute_weights(train_set, config.objective);
    } else if (config.base == InlpBase::ds) {
        sampled = downsample(train_set, config.objective, config.train.seed);
        fit_set = &sampled;
    }
    result.base = train(config.spec, *fit_set, dev_set, result.weights, GatePolicy::onehot(), config.train);
    const auto& mlp = std::get<Mlp>(result.base.model);

    const Matrix hidden = last_hidden(mlp, fit_set->features);
    result.stack = run_inlp(hidden, fit_set->groups, fit_set->group_count, config.inlp);
    const Matrix projected = apply_projection(result.stack, hidden);
    result.classifier =
        fit_logistic(projected, fit_set->labels, fit_set->label_count, result.weights, config.classifier);

    result.dev_predictions =
        result.classifier.predict(apply_projection(result.stack, last_hidden(mlp, dev_set.features)));
    result.test_predictions =
        result.classifier.predict(apply_projection(result.stack, last_hidden(mlp, test_set.features)));
    return result;
}

}  // namespace fairtrain
