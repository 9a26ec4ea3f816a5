#include "fairtrain/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include "fairtrain/rng.hpp"

namespace fairtrain {

void Dataset::validate() const {
    const std::size_t n = labels.size();
    if (n == 0) throw std::invalid_argument("dataset is empty");
    if (groups.size() != n || features.rows() != n) {
        throw std::invalid_argument("dataset containers differ in length: labels " +
                                    std::to_string(n) + ", groups " +
                                    std::to_string(groups.size()) + ", feature rows " +
                                    std::to_string(features.rows()));
    }
    if (label_count < 2 || group_count < 2) {
        throw std::invalid_argument("dataset needs at least two labels and two groups");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= label_count) {
            throw std::invalid_argument("label out of range at instance " + std::to_string(i));
        }
        if (groups[i] < 0 || groups[i] >= group_count) {
            throw std::invalid_argument("group out of range at instance " + std::to_string(i));
        }
    }
    for (double v : features.values()) {
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature value");
    }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.features = gather_rows(features, indices);
    out.labels.reserve(indices.size());
    out.groups.reserve(indices.size());
    for (std::size_t i : indices) {
        out.labels.push_back(labels[i]);
        out.groups.push_back(groups[i]);
    }
    out.label_count = label_count;
    out.group_count = group_count;
    return out;
}

double JointDistribution::group_marginal(int group) const {
    double s = 0.0;
    for (int y = 0; y < label_count; ++y) s += p(y, group);
    return s;
}

double JointDistribution::label_marginal(int label) const {
    double s = 0.0;
    for (int g = 0; g < group_count; ++g) s += p(label, g);
    return s;
}

JointDistribution JointDistribution::from_probabilities(int label_count, int group_count,
                                                        std::vector<double> probabilities) {
    const auto cells = static_cast<std::size_t>(label_count) * group_count;
    if (label_count < 1 || group_count < 1 || probabilities.size() != cells) {
        throw std::invalid_argument("target distribution must have " + std::to_string(cells) +
                                    " cells");
    }
    double total = 0.0;
    for (double v : probabilities) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument("target probabilities must lie in [0, 1]");
        }
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw std::invalid_argument("target probabilities sum to " + std::to_string(total));
    }
    return {label_count, group_count, std::vector<std::uint64_t>(cells, 0),
            std::move(probabilities)};
}

JointDistribution empirical_joint(const Dataset& dataset) {
    JointDistribution joint;
    joint.label_count = dataset.label_count;
    joint.group_count = dataset.group_count;
    const auto cells = static_cast<std::size_t>(dataset.label_count) * dataset.group_count;
    joint.counts.assign(cells, 0);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        ++joint.counts[joint.cell(dataset.labels[i], dataset.groups[i])];
    }
    const double total = static_cast<double>(dataset.size());
    joint.probabilities.resize(cells);
    for (std::size_t c = 0; c < cells; ++c) {
        joint.probabilities[c] = total > 0 ? static_cast<double>(joint.counts[c]) / total : 0.0;
    }
    return joint;
}

void SyntheticConfig::validate() const {
    if (label_count != 2 || group_count != 2) {
        throw UnsupportedConfiguration("synthetic generator supports binary labels and groups only");
    }
    if (!(skew > 0.0 && skew < 1.0)) throw std::invalid_argument("skew must lie in (0, 1)");
    if (n == 0) throw std::invalid_argument("n must be positive");
    if (d < 2) throw std::invalid_argument("d must be at least 2");
    if (!(class_separation > 0.0)) throw std::invalid_argument("class_separation must be > 0");
    if (!(group_shift >= 0.0)) throw std::invalid_argument("group_shift must be >= 0");
    if (!(noise_std > 0.0)) throw std::invalid_argument("noise_std must be > 0");
}

namespace {

// Cell order (y, g): (0,0) (0,1) (1,0) (1,1); (1,0) and (0,1) are stereotypical.
std::array<double, 4> synthetic_cell_mass(double skew) {
    const double stereo = skew / 2.0, anti = (1.0 - skew) / 2.0;
    return {anti, stereo, stereo, anti};
}

}  // namespace

std::vector<std::size_t> synthetic_cell_counts(const SyntheticConfig& config) {
    config.validate();
    const auto mass = synthetic_cell_mass(config.skew);
    std::vector<std::size_t> counts(4);
    std::int64_t assigned = 0;
    for (std::size_t c = 0; c < 4; ++c) {
        counts[c] = static_cast<std::size_t>(std::llround(static_cast<double>(config.n) * mass[c]));
        assigned += static_cast<std::int64_t>(counts[c]);
    }
    const auto largest = static_cast<std::size_t>(
        std::distance(mass.begin(), std::max_element(mass.begin(), mass.end())));
    const std::int64_t remainder = static_cast<std::int64_t>(config.n) - assigned;
    counts[largest] = static_cast<std::size_t>(static_cast<std::int64_t>(counts[largest]) + remainder);
    return counts;
}

Dataset generate_synthetic(const SyntheticConfig& config) {
    const auto counts = synthetic_cell_counts(config);
    Rng rng(derive_seed(config.seed, streams::synthetic));
    std::normal_distribution<double> noise(0.0, config.noise_std);

    Dataset generated;
    generated.label_count = 2;
    generated.group_count = 2;
    generated.features = Matrix(config.n, config.d);
    generated.labels.reserve(config.n);
    generated.groups.reserve(config.n);
    std::size_t row = 0;
    for (int y = 0; y < 2; ++y) {
        for (int g = 0; g < 2; ++g) {
            const double class_mean = (y == 1 ? 0.5 : -0.5) * config.class_separation;
            const double group_mean = (g == 1 ? 0.5 : -0.5) * config.group_shift;
            for (std::size_t k = 0; k < counts[static_cast<std::size_t>(y * 2 + g)]; ++k, ++row) {
                auto x = generated.features.row(row);
                for (double& v : x) v = noise(rng);
                x[0] += class_mean;
                x[1] += group_mean;
                generated.labels.push_back(y);
                generated.groups.push_back(g);
            }
        }
    }

    // Interleave the cells so that prefixes of the dataset are not single-cell.
    std::vector<std::size_t> order(config.n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    return generated.subset(order);
}

DatasetSplit split(const Dataset& dataset, SplitFractions fractions, std::uint64_t seed) {
    if (!(fractions.train > 0 && fractions.dev > 0 && fractions.test > 0)) {
        throw std::invalid_argument("split fractions must be positive");
    }
    if (std::abs(fractions.train + fractions.dev + fractions.test - 1.0) > 1e-9) {
        throw std::invalid_argument("split fractions must sum to 1");
    }
    const std::size_t n = dataset.size();
    const auto n_train = static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(n)));
    const auto n_dev = static_cast<std::size_t>(std::llround(fractions.dev * static_cast<double>(n)));
    if (n_train == 0 || n_dev == 0 || n_train + n_dev >= n) {
        throw std::invalid_argument("split of " + std::to_string(n) +
                                    " instances leaves an empty partition");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, streams::split));
    std::shuffle(order.begin(), order.end(), rng);

    DatasetSplit out;
    out.train_indices.assign(order.begin(), order.begin() + n_train);
    out.dev_indices.assign(order.begin() + n_train, order.begin() + n_train + n_dev);
    out.test_indices.assign(order.begin() + n_train + n_dev, order.end());
    out.train = dataset.subset(out.train_indices);
    out.dev = dataset.subset(out.dev_indices);
    out.test = dataset.subset(out.test_indices);
    return out;
}

}  // namespace fairtrain
