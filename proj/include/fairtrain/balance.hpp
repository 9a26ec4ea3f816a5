#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "fairtrain/data.hpp"

namespace fairtrain {

// Which distribution balanced training equalizes (or matches to a target).
enum class BalanceKind {
    group,             // p(G)
    group_given_label, // p(G|Y)
    joint,             // p(G,Y)
};

struct BalanceObjective {
    BalanceKind kind = BalanceKind::joint;
    // Joint target over (y, g); unset means uniform under `kind`.
    std::optional<JointDistribution> target;
};

enum class WeightConvention {
    // target / empirical: the weighted cell distribution equals the target
    normalized,
    // the inverse empirical propensity, i.e. normalized weights times the
    // number of cells under the objective
    inverse_propensity,
};

std::vector<double> compute_weights(const Dataset& dataset, const BalanceObjective& objective,
                                    WeightConvention convention = WeightConvention::normalized);

// Subsamples cells without replacement so the output's empirical distribution
// meets the objective. Output is ordered by (y, g, original index).
Dataset downsample(const Dataset& dataset, const BalanceObjective& objective, std::uint64_t seed);

// Indices kept by `downsample`, in output order.
std::vector<std::size_t> downsample_indices(const Dataset& dataset,
                                            const BalanceObjective& objective,
                                            std::uint64_t seed);

// Binary target with mass skew/2 on the stereotypical cells (1,0) and (0,1).
JointDistribution skew_target(double skew, int label_count = 2, int group_count = 2);

// One decimal value per line, 17 significant digits.
void save_weights(std::span<const double> weights, const std::filesystem::path& path);

}  // namespace fairtrain
