#include <doctest.h>

#include <cmath>
#include <optional>
#include <random>

#ifdef FAIRTRAIN_HAVE_EIGEN
#include <Eigen/Dense>
#endif

#include "fairtrain/inlp.hpp"
#include "helpers.hpp"

using namespace fairtrain;

namespace {

struct Representations {
    Matrix x;
    std::vector<int> groups;
    std::vector<int> labels;
};

// Group signal on the first `group_axes` axes (strength 1, 0.8, ...), class
// signal on the last axis, unit Gaussian noise everywhere. Strong group signal
// makes the single-probe direction noisier, so the construction stays moderate.
Representations known_subspace(std::size_t n, std::size_t d, std::size_t group_axes, std::uint64_t seed,
                               int group_count = 2) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Representations r{Matrix(n, d), {}, {}};
    for (std::size_t i = 0; i < n; ++i) {
        const int g = static_cast<int>(i % static_cast<std::size_t>(group_count));
        const int y = static_cast<int>((i / static_cast<std::size_t>(group_count)) % 2);
        r.groups.push_back(g);
        r.labels.push_back(y);
        for (std::size_t k = 0; k < d; ++k) r.x(i, k) = noise(rng);
        for (std::size_t k = 0; k < group_axes; ++k) {
            const double strength = 1.0 - 0.2 * static_cast<double>(k);
            r.x(i, k) += (g == static_cast<int>(k % static_cast<std::size_t>(group_count)) ? 1.0 : -1.0) * strength;
        }
        r.x(i, d - 1) += y == 1 ? 2.0 : -2.0;
    }
    return r;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a.values()[k] - b.values()[k]));
    return m;
}

Matrix product(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k)
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += a(i, k) * b(k, j);
    return out;
}

void check_projector(const ProjectionStack& s, std::optional<std::size_t> rank = std::nullopt) {
    const auto& p = s.projection;
    REQUIRE(p.rows() == s.dim);
    for (std::size_t i = 0; i < s.dim; ++i)
        for (std::size_t j = 0; j < s.dim; ++j) CHECK(p(i, j) == p(j, i));
    CHECK(max_abs_diff(product(p, p), p) <= 1e-10);
    for (const auto& u : s.directions) {
        for (std::size_t i = 0; i < s.dim; ++i) {
            double pu = 0.0;
            for (std::size_t j = 0; j < s.dim; ++j) pu += p(i, j) * u[j];
            CHECK(std::abs(pu) <= 1e-10);
        }
    }
#ifdef FAIRTRAIN_HAVE_EIGEN
    Eigen::MatrixXd e(s.dim, s.dim);
    for (std::size_t i = 0; i < s.dim; ++i)
        for (std::size_t j = 0; j < s.dim; ++j) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = p(i, j);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(e);
    lu.setThreshold(1e-8);
    CHECK(static_cast<std::size_t>(lu.rank()) == rank.value_or(s.rank()));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(e);
    for (double v : eig.eigenvalues()) CHECK((std::abs(v) < 1e-10 || std::abs(v - 1.0) < 1e-10));
#endif
}

double probe_accuracy(const Matrix& x, const std::vector<int>& targets, int classes) {
    return fit_logistic(x, targets, classes).train_accuracy;
}

double majority(const std::vector<int>& targets, int classes) {
    std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
    for (int t : targets) counts[static_cast<std::size_t>(t)] += 1.0;
    return *std::max_element(counts.begin(), counts.end()) / static_cast<double>(targets.size());
}

}  // namespace

TEST_CASE("axis direction nullspace") {
    const auto p = nullspace_projection({{1.0, 0.0}});
    CHECK(p == Matrix(2, 2, std::vector<double>{0, 0, 0, 1}));
    const auto q = nullspace_projection({{0.0, 2.0, 0.0}, {0.0, -5.0, 0.0}});
    CHECK(q(0, 0) == doctest::Approx(1.0));
    CHECK(q(1, 1) == doctest::Approx(0.0));
}

TEST_CASE("projector identities for random directions") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto m = testing::random_matrix(3, 7, seed);
        std::vector<std::vector<double>> dirs;
        for (std::size_t i = 0; i < 3; ++i) dirs.emplace_back(m.row(i).begin(), m.row(i).end());
        ProjectionStack s;
        s.dim = 7;
        s.projection = nullspace_projection(dirs);
        check_projector(s, 4);
        for (const auto& w : dirs) {
            for (std::size_t i = 0; i < 7; ++i) {
                double pw = 0.0;
                for (std::size_t j = 0; j < 7; ++j) pw += s.projection(i, j) * w[j];
                CHECK(std::abs(pw) <= 1e-10);
            }
        }
        double trace = 0.0;
        for (std::size_t i = 0; i < 7; ++i) trace += s.projection(i, i);
        CHECK(trace == doctest::Approx(4.0).epsilon(1e-12));
    }
}

TEST_CASE("two independent directions in three dimensions leave rank one") {
    const auto p = nullspace_projection({{1.0, 1.0, 0.0}, {0.0, 1.0, 1.0}});
    double trace = 0.0;
    for (std::size_t i = 0; i < 3; ++i) trace += p(i, i);
    CHECK(trace == doctest::Approx(1.0).epsilon(1e-12));
    // the survivor is (1, -1, 1)/sqrt(3)
    CHECK(p(0, 1) == doctest::Approx(-1.0 / 3));
    CHECK(p(0, 2) == doctest::Approx(1.0 / 3));
    // a dependent third direction adds nothing
    const auto same = nullspace_projection({{1.0, 1.0, 0.0}, {0.0, 1.0, 1.0}, {1.0, 2.0, 1.0}});
    CHECK(max_abs_diff(same, p) <= 1e-12);
}

TEST_CASE("projection errors") {
    CHECK_THROWS(nullspace_projection({}));
    CHECK_THROWS(nullspace_projection({{0.0, 0.0}}));
    ProjectionStack empty;
    empty.dim = 2;
    empty.projection = Matrix(2, 2, std::vector<double>{1, 0, 0, 1});
    CHECK_THROWS(apply_projection(empty, Matrix(1, 2)));
    ProjectionStack axis;
    axis.dim = 2;
    axis.directions = {{1.0, 0.0}};
    axis.projection = nullspace_projection(axis.directions);
    CHECK_THROWS(apply_projection(axis, Matrix(1, 3)));
    const auto out = apply_projection(axis, Matrix(2, 2, std::vector<double>{3, 4, -1, 2}));
    CHECK(out == Matrix(2, 2, std::vector<double>{0, 4, 0, 2}));
}

TEST_CASE("probe on separated groups") {
    const auto r = known_subspace(600, 4, 1, 1);
    Matrix sep = r.x;
    for (std::size_t i = 0; i < sep.rows(); ++i) sep(i, 0) = r.groups[i] == 0 ? 10.0 + sep(i, 0) : -10.0 + sep(i, 0);
    const auto probe = fit_linear_probe(sep, r.groups, 2);
    CHECK(probe.train_accuracy >= 0.99);
    CHECK(probe.weight.rows() == 1);
    CHECK_THROWS(fit_linear_probe(sep, std::vector<int>(600, 1), 2));
}

TEST_CASE("probe on permuted groups stays near the majority rate") {
    for (std::uint64_t seed : {2, 3, 4}) {
        auto r = known_subspace(3000, 6, 2, seed);
        std::mt19937_64 rng(seed + 100);
        std::shuffle(r.groups.begin(), r.groups.end(), rng);
        const auto probe = fit_linear_probe(r.x, r.groups, 2);
        CHECK(std::abs(probe.train_accuracy - majority(r.groups, 2)) <= 0.03);
    }
}

TEST_CASE("probe fitting is deterministic") {
    const auto r = known_subspace(500, 5, 2, 5);
    const auto a = fit_linear_probe(r.x, r.groups, 2);
    const Matrix copy = r.x;
    const auto b = fit_linear_probe(copy, r.groups, 2);
    CHECK(a.weight == b.weight);
    CHECK(a.bias == b.bias);
    CHECK(a.iterations == b.iterations);
}

TEST_CASE("logistic fit reaches a stationary point") {
    const auto r = known_subspace(400, 3, 1, 6);
    LogisticConfig c;
    const auto probe = fit_logistic(r.x, r.labels, 2, {}, c);
    CHECK(probe.iterations < c.max_iterations);
    // gradient of the regularized mean log-loss at the solution
    std::vector<double> grad(4, 0.0);
    const auto z = probe.decision(r.x);
    for (std::size_t i = 0; i < r.x.rows(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-z(i, 1)));
        const double e = p - (r.labels[i] == 1 ? 1.0 : 0.0);
        for (std::size_t k = 0; k < 3; ++k) grad[k] += e * r.x(i, k) / 400.0;
        grad[3] += e / 400.0;
    }
    for (std::size_t k = 0; k < 3; ++k) grad[k] += c.l2 * probe.weight(0, k);
    for (double g : grad) CHECK(std::abs(g) <= 1e-5);
}

TEST_CASE("one iteration removes a one-axis group signal") {
    for (std::uint64_t seed : {7, 8, 9}) {
        const auto r = known_subspace(20000, 8, 1, seed);
        InlpConfig c;
        c.iterations = 1;
        const auto s = run_inlp(r.x, r.groups, 2, c);
        REQUIRE(s.directions.size() == 1);
        CHECK(std::abs(s.directions[0][0]) > 0.99);
        check_projector(s);
        const double after = probe_accuracy(apply_projection(s, r.x), r.groups, 2);
        CHECK(after <= s.majority + 0.02);
        CHECK(s.probe_accuracy.front() >= 0.8);
    }
}

TEST_CASE("k-axis signal reaches the floor within k+1 iterations") {
    for (std::size_t k : {2, 3}) {
        for (int groups : {2, 3}) {
            const auto r = known_subspace(3000, 10, k, 10 + k, groups);
            InlpConfig c;
            c.iterations = k + 1;
            const auto s = run_inlp(r.x, r.groups, groups, c);
            CAPTURE(k);
            CAPTURE(groups);
            check_projector(s);
            const double after = probe_accuracy(apply_projection(s, r.x), r.groups, groups);
            CHECK(after <= s.majority + c.stop_margin);
            // accuracy never rises by more than a point between iterations
            for (std::size_t i = 1; i < s.probe_accuracy.size(); ++i) {
                CHECK(s.probe_accuracy[i] <= s.probe_accuracy[i - 1] + 0.01);
            }
            // one new direction per non-reference group and iteration
            CHECK(s.directions.size() % static_cast<std::size_t>(groups - 1) == 0);
        }
    }
}

TEST_CASE("rank drops by the number of new directions each iteration") {
    const auto r = known_subspace(2000, 6, 3, 20);
    std::size_t previous = 6;
    for (std::size_t it = 1; it <= 3; ++it) {
        InlpConfig c;
        c.iterations = it;
        c.stop_margin = -1.0;  // never stop early
        const auto s = run_inlp(r.x, r.groups, 2, c);
        CHECK(s.directions.size() == it);
        CHECK(s.rank() == previous - 1);
        check_projector(s);
        previous = s.rank();
    }
}

TEST_CASE("projection keeps main-task signal orthogonal to the group subspace") {
    const auto r = known_subspace(4000, 8, 2, 21);
    const double before = probe_accuracy(r.x, r.labels, 2);
    InlpConfig c;
    c.iterations = 3;
    const auto s = run_inlp(r.x, r.groups, 2, c);
    const auto projected = apply_projection(s, r.x);
    CHECK(probe_accuracy(projected, r.labels, 2) >= before - 0.03);
    CHECK(probe_accuracy(projected, r.groups, 2) <= probe_accuracy(r.x, r.groups, 2));
    CHECK(max_abs_diff(apply_projection(s, projected), projected) <= 1e-10);
}

TEST_CASE("run_inlp preconditions") {
    const auto r = known_subspace(200, 3, 1, 22);
    InlpConfig c;
    c.iterations = 0;
    CHECK_THROWS(run_inlp(r.x, r.groups, 2, c));
    c.iterations = 4;
    CHECK_THROWS(run_inlp(r.x, r.groups, 2, c));
    auto null = r;
    std::mt19937_64 rng(5);
    std::shuffle(null.groups.begin(), null.groups.end(), rng);
    for (std::size_t i = 0; i < null.x.rows(); ++i) null.x(i, 0) = 0.0;
    c.iterations = 2;
    c.stop_margin = 0.2;
    const auto s = run_inlp(null.x, null.groups, 2, c);
    CHECK(s.directions.size() == 1);
    CHECK(s.probe_accuracy.size() == 2);
}

TEST_CASE("projection stacks round-trip bitwise") {
    testing::TempDir tmp;
    const auto r = known_subspace(500, 5, 2, 23);
    InlpConfig c;
    c.iterations = 2;
    c.stop_margin = -1.0;
    const auto s = run_inlp(r.x, r.groups, 2, c);
    save_projection(s, tmp.path() / "p.bin");
    const auto back = load_projection(tmp.path() / "p.bin");
    CHECK(back.dim == s.dim);
    CHECK(back.directions == s.directions);
    CHECK(back.projection == s.projection);
    CHECK(apply_projection(back, r.x) == apply_projection(s, r.x));
    std::filesystem::resize_file(tmp.path() / "p.bin", 20);
    CHECK_THROWS(load_projection(tmp.path() / "p.bin"));
}

TEST_CASE("pipeline emits a prediction per instance for every base") {
    SyntheticConfig sc;
    sc.n = 1500;
    sc.d = 6;
    sc.seed = 24;
    const auto parts = split(generate_synthetic(sc), SplitFractions{}, 24);
    for (auto base : {InlpBase::standard, InlpBase::rw, InlpBase::ds}) {
        InlpPipelineConfig c;
        c.base = base;
        c.spec.input_dim = 6;
        c.spec.hidden_width = 12;
        c.train.epochs = 3;
        c.train.batch_size = 128;
        c.train.learning_rate = 1e-2;
        c.inlp.iterations = 3;
        const auto r = inlp_pipeline(parts.train, parts.dev, parts.test, c);
        CHECK(r.test_predictions.size() == parts.test.size());
        CHECK(r.dev_predictions.size() == parts.dev.size());
        for (int p : r.test_predictions) CHECK((p == 0 || p == 1));
        CHECK(r.weights.size() == (base == InlpBase::rw ? parts.train.size() : 0));
        CHECK(r.stack.dim == 12);
        CHECK_FALSE(r.stack.directions.empty());
        check_projector(r.stack);
    }
    InlpPipelineConfig gated;
    gated.spec.kind = ModelKind::gated;
    gated.spec.input_dim = 6;
    CHECK_THROWS(inlp_pipeline(parts.train, parts.dev, parts.test, gated));
    CHECK(inlp_base_from_string("rw") == InlpBase::rw);
    CHECK_THROWS(inlp_base_from_string("adv"));
}
