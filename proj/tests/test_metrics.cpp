#include <doctest.h>

#include <cmath>
#include <random>

#include "fairtrain/metrics.hpp"
#include "table2.hpp"

using namespace fairtrain;

namespace {

// Class 1: group 0 has 10 gold / 9 correct, group 1 has 10 gold / 5 correct.
// Class 0: every instance predicted correctly.
EvalRecord hand_count() {
    EvalRecord r;
    for (int g = 0; g < 2; ++g) {
        const int correct = g == 0 ? 9 : 5;
        for (int k = 0; k < 10; ++k) {
            r.labels.push_back(1);
            r.groups.push_back(g);
            r.predictions.push_back(k < correct ? 1 : 0);
        }
        for (int k = 0; k < 6; ++k) {
            r.labels.push_back(0);
            r.groups.push_back(g);
            r.predictions.push_back(0);
        }
    }
    return r;
}

EvalRecord random_record(std::size_t n, int classes, std::uint64_t seed, double noise = 0.3) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    EvalRecord r;
    r.label_count = classes;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(rng() % static_cast<std::uint64_t>(classes));
        const int g = static_cast<int>(rng() % 2);
        r.labels.push_back(y);
        r.groups.push_back(g);
        // group 1 is noisier
        const double flip = g == 1 ? noise * 1.5 : noise;
        r.predictions.push_back(u(rng) < flip ? static_cast<int>(rng() % static_cast<std::uint64_t>(classes)) : y);
    }
    return r;
}

// Independent count of TPR per (group, class).
double tpr(const EvalRecord& r, int g, int c) {
    double gold = 0, hit = 0;
    for (std::size_t i = 0; i < r.labels.size(); ++i) {
        if (r.groups[i] != g || r.labels[i] != c) continue;
        gold += 1;
        hit += r.predictions[i] == c;
    }
    return hit / gold;
}

}  // namespace

TEST_CASE("hand-counted TPR gap") {
    const auto r = hand_count();
    const auto gaps = tpr_gap_per_class(r);
    REQUIRE(gaps.gaps.size() == 2);
    CHECK(gaps.gaps[1] == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(gaps.gaps[0] == 0.0);
    CHECK(gaps.excluded.empty());
    const auto report = evaluate(r);
    CHECK(report.tnr_gap.value() == gaps.gaps[0]);
    CHECK(report.rms_gap == doctest::Approx(std::sqrt(0.16 / 2)).epsilon(1e-15));
    CHECK(report.accuracy == doctest::Approx(26.0 / 32));
}

TEST_CASE("gaps match direct counting") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto r = random_record(500, 3, seed);
        const auto gaps = tpr_gap_per_class(r);
        for (int c = 0; c < 3; ++c) {
            CHECK(gaps.gaps[static_cast<std::size_t>(c)] == doctest::Approx(std::abs(tpr(r, 0, c) - tpr(r, 1, c))).epsilon(1e-14));
        }
        const auto report = evaluate(r);
        CHECK_FALSE(report.tnr_gap.has_value());
        double sq = 0;
        for (double g : gaps.gaps) sq += g * g;
        CHECK(std::abs(report.rms_gap - std::sqrt(sq / 3)) <= 1e-12);
    }
}

TEST_CASE("perfect predictions have zero gaps") {
    auto r = random_record(200, 4, 3);
    r.label_count = 4;
    r.predictions = r.labels;
    for (double g : tpr_gap_per_class(r).gaps) CHECK(g == 0.0);
    CHECK(accuracy(r) == 1.0);
}

TEST_CASE("classes missing in one group are excluded") {
    EvalRecord r{{0, 1, 2, 0, 1}, {0, 1, 2, 0, 1}, {0, 0, 0, 1, 1}, 3, 2};
    const auto gaps = tpr_gap_per_class(r);
    CHECK(std::isnan(gaps.gaps[2]));
    CHECK(gaps.excluded == std::vector<int>{2});
    CHECK(gaps.included().size() == 2);
    const auto report = evaluate(r);
    CHECK(report.excluded_classes == std::vector<int>{2});
    CHECK(report.rms_gap == 0.0);
}

TEST_CASE("more than two groups is unsupported") {
    EvalRecord r{{0, 1, 1}, {0, 1, 1}, {0, 1, 2}, 2, 3};
    CHECK_THROWS(tpr_gap_per_class(r));
    EvalRecord bad{{0, 1}, {0}, {0, 1}, 2, 2};
    CHECK_THROWS(accuracy(bad));
    EvalRecord empty;
    CHECK_THROWS(accuracy(empty));
}

TEST_CASE("rms examples") {
    CHECK(std::abs(rms_gap(std::vector<double>{0.3, 0.4}) - 0.3535533905932738) <= 1e-9);
    CHECK(rms_gap(std::vector<double>{0.0, 0.0, 0.0}) == 0.0);
    CHECK(rms_gap(std::vector<double>{0.25}) == 0.25);
    CHECK_THROWS(rms_gap(std::vector<double>{}));
}

TEST_CASE("accuracy examples") {
    CHECK(accuracy(EvalRecord{{1, 1, 0, 0}, {1, 1, 0, 1}, {0, 1, 0, 1}, 2, 2}) == 0.75);
    CHECK(accuracy(EvalRecord{{1, 1}, {0, 0}, {0, 1}, 2, 2}) == 0.0);
}

TEST_CASE("swapping group labels leaves every gap unchanged") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto r = random_record(300, 2 + static_cast<int>(seed % 3), seed);
        const auto before = evaluate(r);
        for (int& g : r.groups) g = 1 - g;
        const auto after = evaluate(r);
        CHECK(after.per_class_tpr_gap == before.per_class_tpr_gap);
        CHECK(after.rms_gap == before.rms_gap);
    }
}

TEST_CASE("mean <= rms <= max") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> gaps(1 + static_cast<std::size_t>(trial % 9));
        for (double& g : gaps) g = u(rng);
        double mean = 0;
        for (double g : gaps) mean += g / static_cast<double>(gaps.size());
        const double r = rms_gap(gaps);
        CHECK(mean <= r + 1e-15);
        CHECK(r <= *std::max_element(gaps.begin(), gaps.end()) + 1e-15);
    }
}

TEST_CASE("published trade-off examples") {
    CHECK(std::abs(tradeoff(0.7159, 0.3096, 0.7489, 0.0706) - 0.261) <= 0.0005);
    CHECK(std::abs(tradeoff(0.7452, 0.1848, 0.7489, 0.0706) - 0.123) <= 0.0005);
    CHECK(std::abs(tradeoff(0.8227, 0.1596, 0.8237, 0.0557) - 0.1102) <= 0.0005);
}

TEST_CASE("every published trade-off is reproduced from its accuracy and GAP") {
    const auto best = testing::published_bests();
    CHECK(best.moji_accuracy == 74.89);
    CHECK(best.moji_gap == 7.06);
    CHECK(best.bios_accuracy == 82.37);
    CHECK(best.bios_gap == 5.57);
    for (const auto& row : testing::kPublished) {
        CAPTURE(row.model);
        const double moji = tradeoff(row.moji_accuracy / 100, row.moji_gap / 100, best.moji_accuracy / 100, best.moji_gap / 100);
        const double bios = tradeoff(row.bios_accuracy / 100, row.bios_gap / 100, best.bios_accuracy / 100, best.bios_gap / 100);
        CHECK(std::abs(moji - row.moji_tradeoff) <= 0.002);
        CHECK(std::abs(bios - row.bios_tradeoff) <= 0.002);
    }
}

TEST_CASE("trade-off identity and monotonicity") {
    CHECK(tradeoff(0.8, 0.1, 0.8, 0.1) == 0.0);
    double previous = INFINITY;
    for (double acc = 0.5; acc <= 0.8; acc += 0.01) {
        const double t = tradeoff(acc, 0.2, 0.8, 0.1);
        CHECK(t < previous);
        previous = t;
    }
    previous = -1;
    for (double gap = 0.1; gap <= 0.5; gap += 0.01) {
        const double t = tradeoff(0.7, gap, 0.8, 0.1);
        CHECK(t > previous);
        previous = t;
    }
    CHECK_THROWS(tradeoff(0.0, 0.1, 0.8, 0.1));
    CHECK_THROWS(tradeoff(0.7, 1.0, 0.8, 0.1));
}

TEST_CASE("aggregation over seeds") {
    FairnessReport a, b;
    a.accuracy = 0.70;
    b.accuracy = 0.72;
    a.rms_gap = b.rms_gap = 0.1;
    a.per_class_tpr_gap = b.per_class_tpr_gap = {0.1, 0.1};
    const std::vector<FairnessReport> reports{a, b};
    const auto agg = aggregate(reports);
    CHECK(agg.count == 2);
    CHECK(agg.mean.at("accuracy") == doctest::Approx(0.71));
    CHECK(agg.std.at("accuracy") == doctest::Approx(0.0141421356).epsilon(1e-8));
    CHECK(agg.std.at("rms_gap") == 0.0);
    CHECK(agg.mean.count("tradeoff") == 0);
    CHECK_THROWS(aggregate(std::vector<FairnessReport>{a}));
    const auto j = to_json(agg);
    CHECK(j.contains("mean"));
    CHECK(j.contains("std"));
}

TEST_CASE("report serialization") {
    auto report = evaluate(hand_count(), 42);
    report.tradeoff = 0.25;
    const auto back = report_from_json(to_json(report));
    CHECK(back.accuracy == report.accuracy);
    CHECK(back.per_class_tpr_gap == report.per_class_tpr_gap);
    CHECK(back.rms_gap == report.rms_gap);
    CHECK(back.tnr_gap == report.tnr_gap);
    CHECK(back.tradeoff == report.tradeoff);
    CHECK(back.seed == 42);
    CHECK(csv_header() == "model,seed,accuracy,rms_gap,tnr_gap,tradeoff");
    const auto row = csv_row("Standard", report);
    CHECK(row.rfind("Standard,42,", 0) == 0);
    CHECK(std::count(row.begin(), row.end(), ',') == 5);
    CHECK(std::stod(format_real(0.1)) == 0.1);
    const double third = 1.0 / 3;
    CHECK(std::stod(format_real(third)) == third);
}
