#include "fairtrain/tuning.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <mutex>

#include "fairtrain/metrics.hpp"

namespace fairtrain {

std::string to_string(SelectionMode mode) {
    return mode == SelectionMode::max_accuracy ? "max_accuracy" : "min_gap_at_threshold";
}

SelectionMode selection_mode_from_string(const std::string& name) {
    if (name == "max_accuracy") return SelectionMode::max_accuracy;
    if (name == "min_gap_at_threshold") return SelectionMode::min_gap_at_threshold;
    throw std::invalid_argument("unknown selection mode '" + name + "'");
}

void SelectionRule::validate() const {
    if (!(threshold_offset >= 0.0)) throw std::invalid_argument("threshold_offset must be >= 0");
}

void SearchSpace::validate() const {
    if (axes.empty()) throw std::invalid_argument("search space has no axes");
    for (const auto& [name, values] : axes) {
        if (values.empty()) throw std::invalid_argument("search axis '" + name + "' is empty");
    }
}

std::size_t SearchSpace::size() const {
    std::size_t n = 1;
    for (const auto& axis : axes) n *= axis.second.size();
    return axes.empty() ? 0 : n;
}

nlohmann::json SearchSpace::config_at(std::size_t index) const {
    if (index >= size()) throw std::out_of_range("grid index " + std::to_string(index) + " out of range");
    nlohmann::json config = nlohmann::json::object();
    for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
        const auto& values = it->second;
        config[it->first] = values[index % values.size()];
        index /= values.size();
    }
    return config;
}

std::size_t select_by_rule(const std::vector<Score>& scores, const SelectionRule& rule,
                           const std::vector<double>& order_key) {
    rule.validate();
    if (scores.empty()) throw std::invalid_argument("nothing to select from");
    auto key = [&](std::size_t i) { return order_key.empty() ? 0.0 : order_key[i]; };
    auto gap = [&](std::size_t i) {
        return std::isnan(scores[i].gap) ? std::numeric_limits<double>::infinity() : scores[i].gap;
    };
    double best_accuracy = -std::numeric_limits<double>::infinity();
    for (const auto& s : scores) best_accuracy = std::max(best_accuracy, s.accuracy);
    const double threshold = best_accuracy - rule.threshold_offset;

    std::size_t chosen = scores.size();
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (chosen == scores.size()) {
            if (rule.mode == SelectionMode::max_accuracy || scores[i].accuracy >= threshold) chosen = i;
            continue;
        }
        bool better = false;
        if (rule.mode == SelectionMode::max_accuracy) {
            if (scores[i].accuracy != scores[chosen].accuracy) {
                better = scores[i].accuracy > scores[chosen].accuracy;
            } else {
                better = key(i) < key(chosen);
            }
        } else {
            if (scores[i].accuracy < threshold) continue;
            if (gap(i) != gap(chosen)) {
                better = gap(i) < gap(chosen);
            } else if (scores[i].accuracy != scores[chosen].accuracy) {
                better = scores[i].accuracy > scores[chosen].accuracy;
            } else {
                better = key(i) < key(chosen);
            }
        }
        if (better) chosen = i;
    }
    return chosen;
}

GridSearchResult grid_search(const SearchSpace& space, const Evaluator& evaluator,
                             const SelectionRule& rule) {
    space.validate();
    const std::size_t n = space.size();
    GridSearchResult result;
    result.table.resize(n);
    std::exception_ptr failure;
    std::mutex failure_mutex;

#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n); ++c) {
        const auto i = static_cast<std::size_t>(c);
        try {
            auto config = space.config_at(i);
            const Score s = evaluator(config, i);
            result.table[i] = {i, std::move(config), s};
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<Score> scores;
    for (const auto& row : result.table) scores.push_back(row.score);
    result.selected = select_by_rule(scores, rule);
    double best = -1.0;
    for (const auto& s : scores) best = std::max(best, s.accuracy);
    result.threshold = best - rule.threshold_offset;
    return result;
}

std::string grid_jsonl(const GridSearchResult& result) {
    std::string out;
    for (const auto& row : result.table) {
        nlohmann::json j = {{"index", row.index},
                            {"config", row.config},
                            {"dev_accuracy", row.score.accuracy},
                            {"selected", row.index == result.selected}};
        j["dev_gap"] = std::isfinite(row.score.gap) ? nlohmann::json(row.score.gap) : nlohmann::json(nullptr);
        out += j.dump() + "\n";
    }
    return out;
}

double grid_point(std::size_t i, std::size_t resolution) {
    return static_cast<double>(i) / static_cast<double>(resolution - 1);
}

namespace {

SweepCell soft_gate_cell(const Model& model, const Dataset& dev, double alpha, double beta) {
    EvalRecord record{predict(model, dev.features, dev.groups, GatePolicy::soft(alpha, beta)), dev.labels,
                      dev.groups, dev.label_count, dev.group_count};
    SweepCell cell{alpha, beta, accuracy(record), std::numeric_limits<double>::quiet_NaN()};
    const auto gaps = tpr_gap_per_class(record).included();
    if (!gaps.empty()) cell.rms_gap = rms_gap(gaps);
    return cell;
}

}  // namespace

SweepCell evaluate_soft_gate(const GatedModel& model, const Dataset& dev, double alpha, double beta) {
    return soft_gate_cell(Model{model}, dev, alpha, beta);
}

SweepMatrix alpha_beta_sweep(const GatedModel& model, const Dataset& dev, std::size_t resolution) {
    if (resolution < 2) throw std::invalid_argument("sweep resolution must be >= 2");
    if (model.group_count() != 2 || dev.group_count != 2) {
        throw UnsupportedConfiguration("the alpha/beta sweep needs exactly two groups");
    }
    SweepMatrix sweep;
    sweep.resolution = resolution;
    sweep.cells.resize(resolution * resolution);
    const Model wrapped = model;
    std::exception_ptr failure;
    std::mutex failure_mutex;

#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(sweep.cells.size()); ++c) {
        const auto i = static_cast<std::size_t>(c);
        try {
            sweep.cells[i] = soft_gate_cell(wrapped, dev, grid_point(i / resolution, resolution),
                                                grid_point(i % resolution, resolution));
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return sweep;
}

std::size_t select_coefficients(const SweepMatrix& sweep, const SelectionRule& rule) {
    std::vector<Score> scores;
    std::vector<double> key;
    for (const auto& c : sweep.cells) {
        scores.push_back({c.accuracy, c.rms_gap});
        key.push_back(c.alpha + c.beta);
    }
    return select_by_rule(scores, rule, key);
}

std::string sweep_csv(const SweepMatrix& sweep) {
    std::string out = "alpha,beta,accuracy,rms_gap\n";
    for (const auto& c : sweep.cells) {
        out += format_real(c.alpha) + "," + format_real(c.beta) + "," + format_real(c.accuracy) + "," +
               format_real(c.rms_gap) + "\n";
    }
    return out;
}

}  // namespace fairtrain
