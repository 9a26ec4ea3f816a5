#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "fairtrain/data.hpp"
#include "fairtrain/matrix.hpp"
#include "fairtrain/model.hpp"

namespace testing {

inline fairtrain::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                                       double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    fairtrain::Matrix m(rows, cols);
    for (double& v : m.values()) v = n(rng);
    return m;
}

// Dataset with the given number of instances per (y, g) cell, lexicographic order.
inline fairtrain::Dataset cell_dataset(const std::vector<std::size_t>& counts, int label_count = 2,
                                       int group_count = 2, std::size_t dim = 2) {
    fairtrain::Dataset d;
    d.label_count = label_count;
    d.group_count = group_count;
    std::size_t n = 0;
    for (auto c : counts) n += c;
    d.features = fairtrain::Matrix(n, dim);
    std::size_t row = 0;
    for (int y = 0; y < label_count; ++y) {
        for (int g = 0; g < group_count; ++g) {
            for (std::size_t k = 0; k < counts[static_cast<std::size_t>(y * group_count + g)]; ++k, ++row) {
                d.labels.push_back(y);
                d.groups.push_back(g);
                d.features(row, 0) = static_cast<double>(row);
            }
        }
    }
    return d;
}

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("fairtrain-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testing
