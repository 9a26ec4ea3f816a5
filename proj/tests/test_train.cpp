#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fairtrain/balance.hpp"
#include "fairtrain/train.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"

using namespace fairtrain;

namespace {

using testing::forward_loss;
using testing::gradient_check;
using testing::rel_error;

double model_loss(const Model& m, const Matrix& x, const std::vector<int>& y, const std::vector<double>& w,
                  const GateCoefficients* coeffs) {
    Gradients scratch = zero_gradients(m);
    return backward(m, x, y, w, coeffs, scratch);
}

struct Batch {
    Matrix x;
    std::vector<int> y, g;
    std::vector<double> w;
};

Batch random_batch(std::size_t n, std::size_t d, int labels, std::uint64_t seed) {
    Batch b{testing::random_matrix(n, d, seed), {}, {}, {}};
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        b.y.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(labels)));
        b.g.push_back(static_cast<int>(rng() % 2));
        b.w.push_back(0.5 + static_cast<double>(rng() % 100) / 50.0);
    }
    return b;
}

Dataset separable_toy(std::uint64_t seed) {
    Dataset d;
    d.features = Matrix(200, 2);
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t i = 0; i < 200; ++i) {
        double a, b;
        do {
            a = u(rng);
            b = u(rng);
        } while (std::abs(a + 0.5 * b) < 0.1);
        d.features(i, 0) = a;
        d.features(i, 1) = b;
        d.labels.push_back(a + 0.5 * b > 0 ? 1 : 0);
        d.groups.push_back(static_cast<int>(i % 2));
    }
    return d;
}

// Perceptron with bias; returns the number of passes needed to separate, or 0.
std::size_t perceptron_passes(const Dataset& d, std::size_t max_passes) {
    double w0 = 0, w1 = 0, b = 0;
    for (std::size_t pass = 1; pass <= max_passes; ++pass) {
        bool clean = true;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double s = d.labels[i] == 1 ? 1.0 : -1.0;
            if (s * (w0 * d.features(i, 0) + w1 * d.features(i, 1) + b) <= 0) {
                w0 += s * d.features(i, 0);
                w1 += s * d.features(i, 1);
                b += s;
                clean = false;
            }
        }
        if (clean) return pass;
    }
    return 0;
}

TrainConfig quick_config(std::size_t epochs = 5) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 64;
    c.learning_rate = 1e-2;
    c.dev_selection = DevSelection::final_epoch;
    return c;
}

SyntheticConfig small_synthetic(std::uint64_t seed, std::size_t n = 400) {
    SyntheticConfig s;
    s.n = n;
    s.d = 4;
    s.seed = seed;
    return s;
}

ModelSpec spec_for(const Dataset& d, ModelKind kind, std::size_t width = 8) {
    ModelSpec s;
    s.kind = kind;
    s.input_dim = d.dim();
    s.label_count = d.label_count;
    s.group_count = d.group_count;
    s.hidden_width = width;
    return s;
}

}  // namespace

TEST_CASE("cross-entropy examples") {
    const Matrix zero(1, 2, 0.0);
    const std::vector<int> y{0};
    CHECK(weighted_cross_entropy(zero, y, std::vector<double>{1.0}) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    const auto logits = testing::random_matrix(5, 3, 2);
    const std::vector<int> labels{0, 2, 1, 1, 0};
    double mean = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        double z = 0.0;
        for (double v : logits.row(i)) z += std::exp(v);
        mean += -(logits(i, static_cast<std::size_t>(labels[i])) - std::log(z)) / 5;
    }
    CHECK(weighted_cross_entropy(logits, labels, std::vector<double>(5, 1.0)) == doctest::Approx(mean).epsilon(1e-14));
    // large logits stay finite
    const Matrix big(1, 2, std::vector<double>{1000.0, -1000.0});
    CHECK(weighted_cross_entropy(big, std::vector<int>{1}, std::vector<double>{1.0}) == doctest::Approx(2000.0));
    CHECK_THROWS(weighted_cross_entropy(logits, labels, std::vector<double>(4, 1.0)));
}

TEST_CASE("weight two equals listing an instance twice") {
    const auto logits = testing::random_matrix(3, 2, 5);
    Matrix twice(4, 2);
    for (std::size_t i = 0; i < 3; ++i) std::copy(logits.row(i).begin(), logits.row(i).end(), twice.row(i).begin());
    std::copy(logits.row(0).begin(), logits.row(0).end(), twice.row(3).begin());
    const double weighted = weighted_cross_entropy(logits, std::vector<int>{1, 0, 1}, std::vector<double>{2, 1, 1});
    const double listed = weighted_cross_entropy(twice, std::vector<int>{1, 0, 1, 1}, std::vector<double>(4, 1.0));
    CHECK(weighted * 3 == doctest::Approx(listed * 4).epsilon(1e-15));
}

TEST_CASE("backward matches central differences for standard models") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto b = random_batch(12, 5, 3, seed);
        ModelSpec s;
        s.input_dim = 5;
        s.label_count = 3;
        s.hidden_width = 6;
        CHECK(gradient_check(make_model(s, seed), b.x, b.y, b.w, nullptr) < 1e-4);
        s.activation = Activation::relu;
        CHECK(gradient_check(make_model(s, seed), b.x, b.y, b.w, nullptr) < 1e-4);
    }
}

TEST_CASE("backward matches central differences for gated models") {
    for (std::uint64_t seed : {4, 5, 6}) {
        const auto b = random_batch(10, 4, 2, seed);
        ModelSpec s;
        s.kind = ModelKind::gated;
        s.input_dim = 4;
        s.hidden_width = 5;
        const Model model = make_model(s, seed);
        for (const auto& policy : {GatePolicy::onehot(), GatePolicy::uniform(), GatePolicy::soft(0.3, 0.2)}) {
            const auto coeffs = gate_matrix(policy, b.g, 2);
            CAPTURE(to_string(policy.kind));
            CHECK(gradient_check(model, b.x, b.y, b.w, &coeffs) < 1e-4);
        }
    }
}

TEST_CASE("backward loss equals the forward loss") {
    const auto b = random_batch(9, 3, 2, 8);
    ModelSpec s;
    s.input_dim = 3;
    const auto m = make_model(s, 8);
    CHECK(model_loss(m, b.x, b.y, b.w, nullptr) == doctest::Approx(forward_loss(m, b.x, b.y, b.w, nullptr)).epsilon(1e-14));
}

TEST_CASE("zero-weight rows contribute no gradient") {
    const auto b = random_batch(8, 3, 2, 9);
    ModelSpec s;
    s.input_dim = 3;
    const auto m = make_model(s, 9);
    auto w = b.w;
    w[2] = 0.0;
    w[5] = 0.0;
    Gradients full = zero_gradients(m);
    backward(m, b.x, b.y, w, nullptr, full);
    // removing the rows changes n, so rescale by the batch sizes
    std::vector<std::size_t> keep{0, 1, 3, 4, 6, 7};
    std::vector<int> y;
    std::vector<double> wk;
    for (auto i : keep) {
        y.push_back(b.y[i]);
        wk.push_back(w[i]);
    }
    Gradients reduced = zero_gradients(m);
    backward(m, gather_rows(b.x, keep), y, wk, nullptr, reduced);
    for (std::size_t l = 0; l < full.size(); ++l) {
        for (std::size_t k = 0; k < full[l].weight.size(); ++k) {
            CHECK(full[l].weight.values()[k] * 8 == doctest::Approx(reduced[l].weight.values()[k] * 6).epsilon(1e-12));
        }
    }
}

TEST_CASE("one-hot gating leaves the other encoder without gradient") {
    const auto b = random_batch(6, 3, 2, 10);
    ModelSpec s;
    s.kind = ModelKind::gated;
    s.input_dim = 3;
    const auto m = make_model(s, 10);
    const std::vector<int> all_zero(6, 0);
    const auto coeffs = gate_matrix(GatePolicy::onehot(), all_zero, 2);
    Gradients g = zero_gradients(m);
    backward(m, b.x, b.y, b.w, &coeffs, g);
    const auto& gm = std::get<GatedModel>(m);
    const std::size_t first = gm.shared.layers.size() + gm.group_encoders[0].layers.size();
    for (std::size_t l = first; l < first + gm.group_encoders[1].layers.size(); ++l) {
        for (double v : g[l].weight.values()) CHECK(v == 0.0);
        for (double v : g[l].bias) CHECK(v == 0.0);
    }
    double mass = 0.0;
    for (double v : g[gm.shared.layers.size()].weight.values()) mass += std::abs(v);
    CHECK(mass > 0.0);
}

TEST_CASE("separable toy reaches full training accuracy") {
    const auto toy = separable_toy(11);
    REQUIRE(perceptron_passes(toy, 1000) > 0);
    ModelSpec s = spec_for(toy, ModelKind::standard, 8);
    auto c = quick_config(100);
    c.batch_size = 32;
    const auto result = train(s, toy, toy, {}, GatePolicy::onehot(), c);
    const auto pred = predict(result.model, toy.features, toy.groups, GatePolicy::onehot());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < toy.size(); ++i) hits += pred[i] == toy.labels[i];
    CHECK(static_cast<double>(hits) / 200.0 >= 0.99);
    CHECK(result.history.size() == 100);
}

TEST_CASE("balanced weights equalize per-cell loss at initialization") {
    auto cfg = small_synthetic(12, 10000);
    cfg.d = 8;
    const auto data = generate_synthetic(cfg);
    const auto w = compute_weights(data, BalanceObjective{BalanceKind::joint, std::nullopt});
    ModelSpec s = spec_for(data, ModelKind::standard, 32);
    const double n = static_cast<double>(data.size());

    // contribution of cell c = (weight mass of c / n) * (mean loss of c)
    auto decompose = [&](const Model& model, std::vector<double>& mass, std::vector<double>& mean_loss) {
        const auto logits = forward_standard(std::get<Mlp>(model), data.features);
        mass.assign(4, 0.0);
        mean_loss.assign(4, 0.0);
        std::vector<double> count(4, 0.0), contribution(4, 0.0);
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto c = static_cast<std::size_t>(data.labels[i] * 2 + data.groups[i]);
            const double li = weighted_cross_entropy(gather_rows(logits, std::vector<std::size_t>{i}),
                                                     std::vector<int>{data.labels[i]}, std::vector<double>{1.0});
            mass[c] += w[i] / n;
            mean_loss[c] += li;
            count[c] += 1.0;
            contribution[c] += w[i] * li / n;
        }
        double total = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
            mean_loss[c] /= count[c];
            CHECK(contribution[c] == doctest::Approx(mass[c] * mean_loss[c]).epsilon(1e-12));
            total += contribution[c];
        }
        CHECK(total == doctest::Approx(weighted_cross_entropy(logits, data.labels, w)).epsilon(1e-12));
        return contribution;
    };

    std::vector<double> mass, mean_loss;
    decompose(make_model(s, 12), mass, mean_loss);
    for (double m : mass) CHECK(std::abs(m - 0.25) < 1e-12);

    // with a logit-neutral output layer every cell contributes the same share
    auto neutral = make_model(s, 12);
    auto layers = layers_of(neutral);
    layers.back()->weight.fill(0.0);
    const auto contribution = decompose(neutral, mass, mean_loss);
    const double share = std::numbers::ln2 / 4;
    for (double c : contribution) CHECK(std::abs(c - share) <= 0.05 * share);
}

TEST_CASE("full-batch gradient descent on a linear model never increases the loss") {
    auto cfg = small_synthetic(13, 300);
    const auto data = generate_synthetic(cfg);
    ModelSpec s = spec_for(data, ModelKind::standard);
    s.standard_layers = 1;
    auto c = quick_config(60);
    c.batch_size = data.size();
    c.optimizer = OptimizerKind::sgd;
    c.learning_rate = 0.1;
    const auto result = train(s, data, data, {}, GatePolicy::onehot(), c);
    for (std::size_t e = 1; e < result.history.size(); ++e) {
        CHECK(result.history[e].loss <= result.history[e - 1].loss + 1e-9);
    }
}

TEST_CASE("integer weights match duplicated instances step by step") {
    auto cfg = small_synthetic(14, 40);
    const auto data = generate_synthetic(cfg);
    std::vector<double> w(data.size(), 1.0);
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), 0);
    for (std::size_t i = 0; i < data.size(); i += 3) {
        w[i] = 3.0;
        rows.push_back(i);
        rows.push_back(i);
    }
    Dataset dup;
    dup.features = gather_rows(data.features, rows);
    for (auto r : rows) {
        dup.labels.push_back(data.labels[r]);
        dup.groups.push_back(data.groups[r]);
    }
    ModelSpec s = spec_for(data, ModelKind::standard, 6);
    Model a = make_model(s, 14), b = a;
    auto c = quick_config();
    c.optimizer = OptimizerKind::sgd;
    c.learning_rate = 0.05;
    const double ratio = static_cast<double>(dup.size()) / static_cast<double>(data.size());
    for (int step = 0; step < 5; ++step) {
        Gradients ga = zero_gradients(a), gb = zero_gradients(b);
        backward(a, data.features, data.labels, w, nullptr, ga);
        backward(b, dup.features, dup.labels, std::vector<double>(dup.size(), 1.0), nullptr, gb);
        for (std::size_t l = 0; l < ga.size(); ++l) {
            for (std::size_t k = 0; k < ga[l].weight.size(); ++k) {
                CHECK(rel_error(ga[l].weight.values()[k], gb[l].weight.values()[k] * ratio) < 1e-12);
            }
            for (std::size_t k = 0; k < ga[l].bias.size(); ++k) {
                CHECK(rel_error(ga[l].bias[k], gb[l].bias[k] * ratio) < 1e-12);
            }
        }
        // step both with the same (rescaled) gradient so the trajectories stay comparable
        for (auto& lg : gb) {
            for (double& v : lg.weight.values()) v *= ratio;
            for (double& v : lg.bias) v *= ratio;
        }
        Optimizer oa(a, c), ob(b, c);
        oa.step(a, ga);
        ob.step(b, gb);
    }
}

TEST_CASE("training is deterministic for a seed") {
    const auto data = generate_synthetic(small_synthetic(15));
    for (auto kind : {ModelKind::standard, ModelKind::gated}) {
        const auto s = spec_for(data, kind);
        auto c = quick_config(3);
        c.seed = 7;
        const auto first = train(s, data, data, {}, GatePolicy::onehot(), c);
        const auto second = train(s, data, data, {}, GatePolicy::onehot(), c);
        CHECK(first.model == second.model);
        REQUIRE(first.history.size() == second.history.size());
        for (std::size_t e = 0; e < first.history.size(); ++e) CHECK(first.history[e].loss == second.history[e].loss);
        c.seed = 8;
        CHECK_FALSE(train(s, data, data, {}, GatePolicy::onehot(), c).model == first.model);
    }
}

TEST_CASE("divergence names the epoch and batch") {
    const auto data = generate_synthetic(small_synthetic(16));
    auto model = make_model(spec_for(data, ModelKind::standard), 0);
    layers_of(model)[0]->weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
    try {
        train_model(model, data, data, {}, GatePolicy::onehot(), quick_config());
        FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
        CHECK(std::string(e.what()) == "non-finite loss at epoch 1, batch 0");
    }
}

TEST_CASE("training input validation") {
    const auto data = generate_synthetic(small_synthetic(17));
    const auto s = spec_for(data, ModelKind::standard);
    CHECK_THROWS(train(s, data, data, std::vector<double>(3, 1.0), GatePolicy::onehot(), quick_config()));
    std::vector<double> w(data.size(), 1.0);
    w[0] = 0.0;
    CHECK_THROWS(train(s, data, data, w, GatePolicy::onehot(), quick_config()));
    auto c = quick_config();
    c.beta1 = 1.0;
    CHECK_THROWS(train(s, data, data, {}, GatePolicy::onehot(), c));
    c = quick_config();
    c.epochs = 0;
    CHECK_THROWS(train(s, data, data, {}, GatePolicy::onehot(), c));
}

TEST_CASE("dev selection modes") {
    const auto data = generate_synthetic(small_synthetic(18));
    const auto s = spec_for(data, ModelKind::standard);
    auto c = quick_config(6);
    c.learning_rate = 3e-2;
    c.dev_selection = DevSelection::final_epoch;
    const auto fin = train(s, data, data, {}, GatePolicy::onehot(), c);
    CHECK(fin.selected_epoch == 6);

    c.dev_selection = DevSelection::best_dev_accuracy;
    const auto acc = train(s, data, data, {}, GatePolicy::onehot(), c);
    double best = -1.0;
    std::size_t expected = 0;
    for (const auto& r : acc.history) {
        if (r.dev_accuracy > best) {
            best = r.dev_accuracy;
            expected = r.epoch;
        }
    }
    CHECK(acc.selected_epoch == expected);

    c.dev_selection = DevSelection::best_dev_gap_at_threshold;
    const auto gap = train(s, data, data, {}, GatePolicy::onehot(), c);
    const auto& h = gap.history;
    double top = 0.0;
    for (const auto& r : h) top = std::max(top, r.dev_accuracy);
    std::size_t pick = 0;
    for (std::size_t e = 0; e < h.size(); ++e) {
        if (h[e].dev_accuracy < top - c.selection_offset) continue;
        if (pick == 0) {
            pick = e + 1;
            continue;
        }
        const auto& p = h[pick - 1];
        const double ge = std::isnan(h[e].dev_rms_gap) ? INFINITY : h[e].dev_rms_gap;
        const double gp = std::isnan(p.dev_rms_gap) ? INFINITY : p.dev_rms_gap;
        if (ge < gp || (ge == gp && h[e].dev_accuracy > p.dev_accuracy)) pick = e + 1;
    }
    CHECK(gap.selected_epoch == pick);
    // the returned model is the one evaluated at the selected epoch
    const auto pred = predict(gap.model, data.features, data.groups, GatePolicy::onehot());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) hits += pred[i] == data.labels[i];
    CHECK(static_cast<double>(hits) / static_cast<double>(data.size()) == h[pick - 1].dev_accuracy);
}

TEST_CASE("history serialization") {
    TrainHistory h{{1, 0.5, 0.75, std::nan(""), 0.1}, {2, 0.25, 0.8, 0.1, 0.1}};
    const auto text = history_jsonl(h);
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    CHECK(to_json(h[0])["dev_rms_gap"].is_null());
    CHECK(to_json(h[1])["dev_rms_gap"] == 0.1);
    CHECK(dev_selection_from_string("final_epoch") == DevSelection::final_epoch);
    CHECK_THROWS(dev_selection_from_string("best"));
}
