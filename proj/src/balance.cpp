#include "fairtrain/balance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <tuple>

#include "fairtrain/log.hpp"
#include "fairtrain/rng.hpp"

namespace fairtrain {

namespace {

std::string cell_name(int y, int g) {
    return "(y=" + std::to_string(y) + ", g=" + std::to_string(g) + ")";
}

void check_target_shape(const Dataset& dataset, const BalanceObjective& objective) {
    if (!objective.target) return;
    const auto& t = *objective.target;
    if (t.label_count != dataset.label_count || t.group_count != dataset.group_count) {
        throw std::invalid_argument("balance target shape " + std::to_string(t.label_count) + "x" +
                                    std::to_string(t.group_count) + " does not match dataset " +
                                    std::to_string(dataset.label_count) + "x" +
                                    std::to_string(dataset.group_count));
    }
    const double total = std::accumulate(t.probabilities.begin(), t.probabilities.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("balance target must sum to 1");
}

// Target mass of cell (y, g) under the objective's own cell definition:
// joint -> p(y,g); group -> p(g); group_given_label -> p(g|y).
double target_mass(const BalanceObjective& objective, int label_count, int group_count, int y,
                   int g) {
    const auto& t = objective.target;
    switch (objective.kind) {
        case BalanceKind::joint:
            return t ? t->p(y, g) : 1.0 / (label_count * group_count);
        case BalanceKind::group:
            return t ? t->group_marginal(g) : 1.0 / group_count;
        case BalanceKind::group_given_label: {
            if (!t) return 1.0 / group_count;
            const double marginal = t->label_marginal(y);
            return marginal > 0.0 ? t->p(y, g) / marginal : 0.0;
        }
    }
    return 0.0;
}

double cells_under_kind(BalanceKind kind, int label_count, int group_count) {
    return kind == BalanceKind::joint ? static_cast<double>(label_count * group_count)
                                      : static_cast<double>(group_count);
}

}  // namespace

std::vector<double> compute_weights(const Dataset& dataset, const BalanceObjective& objective,
                                    WeightConvention convention) {
    dataset.validate();
    check_target_shape(dataset, objective);
    const auto joint = empirical_joint(dataset);
    const int Y = dataset.label_count, G = dataset.group_count;
    const double n = static_cast<double>(dataset.size());

    std::vector<double> label_counts(Y, 0.0), group_counts(G, 0.0);
    for (int y = 0; y < Y; ++y) {
        for (int g = 0; g < G; ++g) {
            label_counts[y] += static_cast<double>(joint.count(y, g));
            group_counts[g] += static_cast<double>(joint.count(y, g));
        }
    }

    const double scale = convention == WeightConvention::inverse_propensity
                             ? cells_under_kind(objective.kind, Y, G)
                             : 1.0;
    // weight of each (y, g) cell; NaN where the cell is empty
    std::vector<double> cell_weight(joint.counts.size(), std::numeric_limits<double>::quiet_NaN());
    for (int y = 0; y < Y; ++y) {
        for (int g = 0; g < G; ++g) {
            const double count = static_cast<double>(joint.count(y, g));
            if (count == 0.0) {
                log_warning("balance: empty cell " + cell_name(y, g));
                continue;
            }
            const double target = target_mass(objective, Y, G, y, g);
            if (!(target > 0.0)) {
                throw std::invalid_argument("balance target assigns zero mass to occupied cell " +
                                            cell_name(y, g));
            }
            double empirical = 0.0;
            switch (objective.kind) {
                case BalanceKind::joint: empirical = count / n; break;
                case BalanceKind::group: empirical = group_counts[g] / n; break;
                case BalanceKind::group_given_label: empirical = count / label_counts[y]; break;
            }
            cell_weight[joint.cell(y, g)] = scale * target / empirical;
        }
    }

    std::vector<double> weights(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        weights[i] = cell_weight[joint.cell(dataset.labels[i], dataset.groups[i])];
    }
    return weights;
}

std::vector<std::size_t> downsample_indices(const Dataset& dataset,
                                            const BalanceObjective& objective,
                                            std::uint64_t seed) {
    dataset.validate();
    check_target_shape(dataset, objective);
    const int Y = dataset.label_count, G = dataset.group_count;

    // Sampling units: (y, g) cells for joint and group_given_label, groups for group.
    const bool by_group = objective.kind == BalanceKind::group;
    std::vector<std::vector<std::size_t>> members(by_group ? G : Y * G);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const std::size_t unit = by_group ? static_cast<std::size_t>(dataset.groups[i])
                                          : static_cast<std::size_t>(dataset.labels[i]) * G +
                                                dataset.groups[i];
        members[unit].push_back(i);
    }

    std::vector<std::size_t> quota(members.size(), 0);
    // Scales every unit of a block proportionally to the block's binding unit.
    auto fill_block = [&](const std::vector<std::size_t>& units, const std::vector<double>& mass,
                          const std::string& block) {
        double scale = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < units.size(); ++k) {
            if (mass[k] <= 0.0) continue;
            if (members[units[k]].empty()) {
                throw std::invalid_argument("downsample: required unit " + std::to_string(units[k]) +
                                            " of " + block + " is empty");
            }
            scale = std::min(scale, static_cast<double>(members[units[k]].size()) / mass[k]);
        }
        if (!std::isfinite(scale)) throw std::invalid_argument("downsample: " + block + " has no target mass");
        for (std::size_t k = 0; k < units.size(); ++k) {
            const auto wanted = static_cast<std::size_t>(std::llround(scale * mass[k]));
            quota[units[k]] = std::min(wanted, members[units[k]].size());
        }
    };

    switch (objective.kind) {
        case BalanceKind::joint: {
            std::vector<std::size_t> units(members.size());
            std::iota(units.begin(), units.end(), 0);
            std::vector<double> mass;
            for (int y = 0; y < Y; ++y)
                for (int g = 0; g < G; ++g) mass.push_back(target_mass(objective, Y, G, y, g));
            fill_block(units, mass, "joint");
            break;
        }
        case BalanceKind::group: {
            std::vector<std::size_t> units(G);
            std::iota(units.begin(), units.end(), 0);
            std::vector<double> mass;
            for (int g = 0; g < G; ++g) mass.push_back(target_mass(objective, Y, G, 0, g));
            fill_block(units, mass, "groups");
            break;
        }
        case BalanceKind::group_given_label: {
            for (int y = 0; y < Y; ++y) {
                std::size_t class_size = 0;
                for (int g = 0; g < G; ++g) class_size += members[y * G + g].size();
                if (class_size == 0) {
                    log_warning("downsample: class " + std::to_string(y) + " has no instances");
                    continue;
                }
                std::vector<std::size_t> units;
                std::vector<double> mass;
                for (int g = 0; g < G; ++g) {
                    units.push_back(static_cast<std::size_t>(y * G + g));
                    mass.push_back(target_mass(objective, Y, G, y, g));
                }
                fill_block(units, mass, "class " + std::to_string(y));
            }
            break;
        }
    }

    Rng rng(derive_seed(seed, streams::downsample));
    std::vector<std::size_t> kept;
    for (std::size_t u = 0; u < members.size(); ++u) {
        auto pool = members[u];
        if (quota[u] < pool.size()) {
            std::shuffle(pool.begin(), pool.end(), rng);
            pool.resize(quota[u]);
        }
        kept.insert(kept.end(), pool.begin(), pool.end());
    }
    std::sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
        const auto ka = std::tuple(dataset.labels[a], dataset.groups[a], a);
        const auto kb = std::tuple(dataset.labels[b], dataset.groups[b], b);
        return ka < kb;
    });
    return kept;
}

Dataset downsample(const Dataset& dataset, const BalanceObjective& objective, std::uint64_t seed) {
    const auto kept = downsample_indices(dataset, objective, seed);
    if (kept.empty()) throw std::invalid_argument("downsample produced an empty dataset");
    return dataset.subset(kept);
}

JointDistribution skew_target(double skew, int label_count, int group_count) {
    if (label_count != 2 || group_count != 2) {
        throw UnsupportedConfiguration("skew targets are defined for binary labels and groups only");
    }
    if (!(skew > 0.0 && skew < 1.0)) throw std::invalid_argument("skew must lie in (0, 1)");
    const double stereo = skew / 2.0, anti = (1.0 - skew) / 2.0;
    // cells (0,0) (0,1) (1,0) (1,1)
    return JointDistribution::from_probabilities(2, 2, {anti, stereo, stereo, anti});
}

void save_weights(std::span<const double> weights, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    char buf[32];
    for (double w : weights) {
        std::snprintf(buf, sizeof buf, "%.17g", w);
        os << buf << '\n';
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace fairtrain
