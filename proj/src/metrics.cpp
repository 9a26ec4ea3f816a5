#include "fairtrain/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fairtrain/log.hpp"

namespace fairtrain {

void EvalRecord::validate() const {
    if (predictions.size() != labels.size() || groups.size() != labels.size()) {
        throw std::invalid_argument("eval record containers differ in length");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= label_count || predictions[i] < 0 ||
            predictions[i] >= label_count) {
            throw std::invalid_argument("eval record label out of range at " + std::to_string(i));
        }
        if (groups[i] < 0 || groups[i] >= group_count) {
            throw std::invalid_argument("eval record group out of range at " + std::to_string(i));
        }
    }
}

std::vector<double> ClassGaps::included() const {
    std::vector<double> out;
    for (double g : gaps)
        if (!std::isnan(g)) out.push_back(g);
    return out;
}

ClassGaps tpr_gap_per_class(const EvalRecord& record) {
    record.validate();
    if (record.group_count != 2) {
        throw std::invalid_argument("TPR gaps are defined for exactly two groups, got " +
                                    std::to_string(record.group_count));
    }
    const auto Y = static_cast<std::size_t>(record.label_count);
    std::vector<std::array<std::size_t, 2>> gold(Y, {0, 0}), correct(Y, {0, 0});
    for (std::size_t i = 0; i < record.labels.size(); ++i) {
        const auto y = static_cast<std::size_t>(record.labels[i]);
        const auto g = static_cast<std::size_t>(record.groups[i]);
        ++gold[y][g];
        if (record.predictions[i] == record.labels[i]) ++correct[y][g];
    }
    ClassGaps out;
    out.gaps.assign(Y, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t c = 0; c < Y; ++c) {
        if (gold[c][0] == 0 || gold[c][1] == 0) {
            out.excluded.push_back(static_cast<int>(c));
            continue;
        }
        const double tpr0 = static_cast<double>(correct[c][0]) / static_cast<double>(gold[c][0]);
        const double tpr1 = static_cast<double>(correct[c][1]) / static_cast<double>(gold[c][1]);
        out.gaps[c] = std::abs(tpr0 - tpr1);
    }
    return out;
}

double rms_gap(std::span<const double> gaps) {
    if (gaps.empty()) throw std::invalid_argument("rms_gap of an empty gap vector");
    double sum = 0.0;
    for (double g : gaps) sum += g * g;
    return std::sqrt(sum / static_cast<double>(gaps.size()));
}

double accuracy(const EvalRecord& record) {
    record.validate();
    if (record.labels.empty()) throw std::invalid_argument("accuracy of an empty record");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < record.labels.size(); ++i) hits += record.predictions[i] == record.labels[i];
    return static_cast<double>(hits) / static_cast<double>(record.labels.size());
}

double tradeoff(double accuracy, double gap, double best_accuracy, double best_gap) {
    auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
    if (!in_unit(accuracy) || !in_unit(best_accuracy)) {
        throw std::invalid_argument("tradeoff: accuracies must lie in (0, 1]");
    }
    if (!(gap >= 0.0 && gap < 1.0) || !(best_gap >= 0.0 && best_gap < 1.0)) {
        throw std::invalid_argument("tradeoff: gaps must lie in [0, 1)");
    }
    constexpr double tol = 1e-12;
    if (accuracy > best_accuracy + tol || gap < best_gap - tol) {
        log_warning("tradeoff: evaluated model beats the supplied best values");
    }
    const double x = accuracy / best_accuracy;
    const double y = (1.0 - gap) / (1.0 - best_gap);
    return std::hypot(1.0 - x, 1.0 - y);
}

FairnessReport evaluate(const EvalRecord& record, std::uint64_t seed) {
    FairnessReport report;
    report.seed = seed;
    report.accuracy = accuracy(record);
    const auto gaps = tpr_gap_per_class(record);
    report.per_class_tpr_gap = gaps.gaps;
    report.excluded_classes = gaps.excluded;
    if (!gaps.excluded.empty()) {
        log_warning("evaluate: " + std::to_string(gaps.excluded.size()) +
                    " class(es) lack gold instances in one group and are excluded from the GAP");
    }
    const auto included = gaps.included();
    report.rms_gap = included.empty() ? std::numeric_limits<double>::quiet_NaN() : rms_gap(included);
    if (record.label_count == 2) report.tnr_gap = gaps.gaps[0];
    return report;
}

namespace {

nlohmann::json real_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

double real_from(const nlohmann::json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

nlohmann::json to_json(const FairnessReport& report) {
    nlohmann::json gaps = nlohmann::json::array();
    for (double g : report.per_class_tpr_gap) gaps.push_back(real_or_null(g));
    nlohmann::json j = {{"accuracy", report.accuracy},
                        {"per_class_tpr_gap", gaps},
                        {"excluded_classes", report.excluded_classes},
                        {"rms_gap", real_or_null(report.rms_gap)},
                        {"seed", report.seed}};
    j["tnr_gap"] = report.tnr_gap ? real_or_null(*report.tnr_gap) : nlohmann::json(nullptr);
    j["tradeoff"] = report.tradeoff ? nlohmann::json(*report.tradeoff) : nlohmann::json(nullptr);
    return j;
}

FairnessReport report_from_json(const nlohmann::json& j) {
    FairnessReport r;
    r.accuracy = j.at("accuracy").get<double>();
    for (const auto& g : j.at("per_class_tpr_gap")) r.per_class_tpr_gap.push_back(real_from(g));
    r.excluded_classes = j.at("excluded_classes").get<std::vector<int>>();
    r.rms_gap = real_from(j.at("rms_gap"));
    r.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("tnr_gap") && !j["tnr_gap"].is_null()) r.tnr_gap = j["tnr_gap"].get<double>();
    if (j.contains("tradeoff") && !j["tradeoff"].is_null()) r.tradeoff = j["tradeoff"].get<double>();
    return r;
}

AggregateReport aggregate(std::span<const FairnessReport> reports) {
    if (reports.size() < 2) throw std::invalid_argument("aggregate needs at least two reports");
    std::map<std::string, std::vector<double>> fields;
    auto add_if_all = [&](const std::string& name, auto&& getter) {
        std::vector<double> values;
        for (const auto& r : reports) {
            const std::optional<double> v = getter(r);
            if (!v || std::isnan(*v)) return;
            values.push_back(*v);
        }
        fields[name] = std::move(values);
    };
    add_if_all("accuracy", [](const FairnessReport& r) { return std::optional(r.accuracy); });
    add_if_all("rms_gap", [](const FairnessReport& r) { return std::optional(r.rms_gap); });
    add_if_all("tnr_gap", [](const FairnessReport& r) { return r.tnr_gap; });
    add_if_all("tradeoff", [](const FairnessReport& r) { return r.tradeoff; });
    const std::size_t classes = reports.front().per_class_tpr_gap.size();
    for (std::size_t c = 0; c < classes; ++c) {
        add_if_all("tpr_gap_class_" + std::to_string(c), [c](const FairnessReport& r) {
            return c < r.per_class_tpr_gap.size() ? std::optional(r.per_class_tpr_gap[c])
                                                  : std::nullopt;
        });
    }

    AggregateReport out;
    out.count = reports.size();
    const double n = static_cast<double>(reports.size());
    for (const auto& [name, values] : fields) {
        const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        out.mean[name] = mean;
        out.std[name] = std::sqrt(ss / (n - 1.0));
    }
    return out;
}

nlohmann::json to_json(const AggregateReport& aggregate) {
    return {{"count", aggregate.count}, {"mean", aggregate.mean}, {"std", aggregate.std}};
}

std::string format_real(double value) {
    if (std::isnan(value)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

std::string csv_header() { return "model,seed,accuracy,rms_gap,tnr_gap,tradeoff"; }

std::string csv_row(const std::string& model, const FairnessReport& report) {
    return model + "," + std::to_string(report.seed) + "," + format_real(report.accuracy) + "," +
           format_real(report.rms_gap) + "," + (report.tnr_gap ? format_real(*report.tnr_gap) : "") +
           "," + (report.tradeoff ? format_real(*report.tradeoff) : "");
}

}  // namespace fairtrain
