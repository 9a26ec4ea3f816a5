#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fairtrain {

struct EvalRecord {
    std::vector<int> predictions;
    std::vector<int> labels;
    std::vector<int> groups;
    int label_count = 2;
    int group_count = 2;

    void validate() const;
};

// Per-class absolute TPR difference between the two groups. A class is
// excluded (gap NaN) when either group has no gold instance of it.
struct ClassGaps {
    std::vector<double> gaps;
    std::vector<int> excluded;

    std::vector<double> included() const;
};

ClassGaps tpr_gap_per_class(const EvalRecord& record);

// Quadratic mean of the gaps.
double rms_gap(std::span<const double> gaps);

double accuracy(const EvalRecord& record);

// Distance from (accuracy / best_accuracy, (1 - gap) / (1 - best_gap)) to (1, 1).
double tradeoff(double accuracy, double gap, double best_accuracy, double best_gap);

struct FairnessReport {
    double accuracy = 0.0;
    std::vector<double> per_class_tpr_gap;  // NaN marks an excluded class
    std::vector<int> excluded_classes;
    // Binary tasks only: the TPR gap of the negative class.
    std::optional<double> tnr_gap;
    double rms_gap = 0.0;
    std::optional<double> tradeoff;
    std::uint64_t seed = 0;
};

FairnessReport evaluate(const EvalRecord& record, std::uint64_t seed = 0);

nlohmann::json to_json(const FairnessReport& report);
FairnessReport report_from_json(const nlohmann::json& j);

// Sample mean and standard deviation (n - 1 denominator) per numeric field.
struct AggregateReport {
    std::size_t count = 0;
    std::map<std::string, double> mean;
    std::map<std::string, double> std;
};

AggregateReport aggregate(std::span<const FairnessReport> reports);
nlohmann::json to_json(const AggregateReport& aggregate);

// One CSV row per (model, seed).
std::string csv_header();
std::string csv_row(const std::string& model, const FairnessReport& report);

// Decimal text with enough digits to round-trip a double.
std::string format_real(double value);

}  // namespace fairtrain
