#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairtrain/data.hpp"
#include "fairtrain/model.hpp"

namespace fairtrain {

enum class SelectionMode { max_accuracy, min_gap_at_threshold };

std::string to_string(SelectionMode mode);
SelectionMode selection_mode_from_string(const std::string& name);

struct SelectionRule {
    SelectionMode mode = SelectionMode::max_accuracy;
    // absolute accuracy points below the best still eligible
    double threshold_offset = 0.02;

    void validate() const;
};

// Named axes; the grid is enumerated row-major with the last axis fastest.
struct SearchSpace {
    std::vector<std::pair<std::string, std::vector<nlohmann::json>>> axes;

    void validate() const;
    std::size_t size() const;
    // {axis name: value} for the cell at `index`.
    nlohmann::json config_at(std::size_t index) const;
};

struct Score {
    double accuracy = 0.0;
    double gap = 0.0;  // NaN ranks last
};

// Index chosen by `rule`; `order_key` ranks exact ties before position does
// (smaller first). An empty key means position only.
std::size_t select_by_rule(const std::vector<Score>& scores, const SelectionRule& rule,
                           const std::vector<double>& order_key = {});

struct GridRow {
    std::size_t index = 0;
    nlohmann::json config;
    Score score;
};

struct GridSearchResult {
    std::size_t selected = 0;
    double threshold = 0.0;  // min_gap_at_threshold only
    std::vector<GridRow> table;
};

// Evaluates every cell (concurrently when built with OpenMP; the evaluator
// must be safe to call from several threads) and applies the rule.
using Evaluator = std::function<Score(const nlohmann::json& config, std::size_t index)>;
GridSearchResult grid_search(const SearchSpace& space, const Evaluator& evaluator,
                             const SelectionRule& rule);

std::string grid_jsonl(const GridSearchResult& result);

struct SweepCell {
    double alpha = 0.0;
    double beta = 0.0;
    double accuracy = 0.0;
    double rms_gap = 0.0;
};

struct SweepMatrix {
    std::size_t resolution = 0;
    std::vector<SweepCell> cells;  // alpha-major
};

double grid_point(std::size_t i, std::size_t resolution);

// Evaluates gate_soft(gold group, alpha, beta) on dev for every grid cell.
SweepCell evaluate_soft_gate(const GatedModel& model, const Dataset& dev, double alpha, double beta);
SweepMatrix alpha_beta_sweep(const GatedModel& model, const Dataset& dev, std::size_t resolution = 21);

// Ties go to the smaller alpha + beta, then to grid order.
std::size_t select_coefficients(const SweepMatrix& sweep, const SelectionRule& rule);

// Header alpha,beta,accuracy,rms_gap then one row per cell.
std::string sweep_csv(const SweepMatrix& sweep);

}  // namespace fairtrain
