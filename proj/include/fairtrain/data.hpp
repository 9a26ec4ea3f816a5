#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairtrain/matrix.hpp"

namespace fairtrain {

// Instances (x_i, y_i, g_i): a feature row, a main-task label and a protected group.
struct Dataset {
    Matrix features;
    std::vector<int> labels;
    std::vector<int> groups;
    int label_count = 2;
    int group_count = 2;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return features.cols(); }

    // Throws std::invalid_argument describing the first violated invariant.
    void validate() const;

    Dataset subset(std::span<const std::size_t> indices) const;
};

// Counts and probabilities over the label x group table, row-major by label.
struct JointDistribution {
    int label_count = 0;
    int group_count = 0;
    std::vector<std::uint64_t> counts;
    std::vector<double> probabilities;

    std::size_t cell(int label, int group) const noexcept {
        return static_cast<std::size_t>(label) * group_count + group;
    }
    double p(int label, int group) const { return probabilities[cell(label, group)]; }
    std::uint64_t count(int label, int group) const { return counts[cell(label, group)]; }
    double group_marginal(int group) const;
    double label_marginal(int label) const;

    // Probabilities given directly (counts left at zero), validated to sum to 1.
    static JointDistribution from_probabilities(int label_count, int group_count,
                                                std::vector<double> probabilities);
};

JointDistribution empirical_joint(const Dataset& dataset);

class UnsupportedConfiguration : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct SyntheticConfig {
    std::size_t n = 10000;
    std::size_t d = 8;
    // Total probability mass on the stereotypical cells (y=1,g=0) and (y=0,g=1).
    double skew = 0.8;
    double class_separation = 2.0;
    double group_shift = 1.0;
    double noise_std = 1.0;
    std::uint64_t seed = 0;
    int label_count = 2;
    int group_count = 2;

    void validate() const;
};

// Exact per-cell counts for the generator: round(n * mass), with the rounding
// remainder given to the lexicographically first cell of largest mass.
std::vector<std::size_t> synthetic_cell_counts(const SyntheticConfig& config);

Dataset generate_synthetic(const SyntheticConfig& config);

struct SplitFractions {
    double train = 0.65;
    double dev = 0.10;
    double test = 0.25;
};

struct DatasetSplit {
    Dataset train, dev, test;
    std::vector<std::size_t> train_indices, dev_indices, test_indices;
};

DatasetSplit split(const Dataset& dataset, SplitFractions fractions, std::uint64_t seed);

// File I/O. Text: header `n d |Y| |G|`, then `y g f_1 .. f_d` per line with
// 17 significant digits. Binary: 8-byte magic, four little-endian u64
// (n, d, |Y|, |G|), then per row two i64 and d f64.
class ParseError : public std::runtime_error {
public:
    // `location` is a 1-based line for text files and a byte offset for binary files.
    ParseError(const std::string& message, std::size_t location)
        : std::runtime_error(message), location_(location) {}
    std::size_t location() const noexcept { return location_; }

private:
    std::size_t location_;
};

enum class DatasetFormat { text, binary };

void save_dataset(const Dataset& dataset, const std::filesystem::path& path,
                  DatasetFormat format = DatasetFormat::text);
// Format detected from the leading magic bytes.
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace fairtrain
