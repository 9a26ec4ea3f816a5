#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "fairtrain/kernels.hpp"

// Loop bodies mirror kernels_serial.cpp exactly; only the outer loop is
// distributed. Keep the two files in sync.

namespace fairtrain::kernels {

namespace {
// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kMinParallelWork = 1 << 14;
}  // namespace

bool parallel_enabled() noexcept {
#ifdef FAIRTRAIN_USE_OPENMP
    return true;
#else
    return false;
#endif
}

namespace parallel {

void affine_forward(const Matrix& in, const Matrix& weight, std::span<const double> bias,
                    Matrix& out) {
    const std::size_t n = in.rows(), k = in.cols(), m = weight.rows();
    if (weight.cols() != k || bias.size() != m) {
        throw std::invalid_argument("affine_forward: shape mismatch");
    }
    if (out.rows() != n || out.cols() != m) out = Matrix(n, m);
    const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static) if (n * m * k >= kMinParallelWork)
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* x = in.data() + i * k;
        for (std::size_t o = 0; o < m; ++o) {
            const double* w = weight.data() + o * k;
            double acc = bias[o];
            for (std::size_t j = 0; j < k; ++j) acc += x[j] * w[j];
            out(i, o) = acc;
        }
    }
}

void affine_backward_params(const Matrix& grad_out, const Matrix& in, Matrix& grad_weight,
                            std::span<double> grad_bias) {
    const std::size_t n = in.rows(), k = in.cols(), m = grad_out.cols();
    if (grad_out.rows() != n || grad_weight.rows() != m || grad_weight.cols() != k ||
        grad_bias.size() != m) {
        throw std::invalid_argument("affine_backward_params: shape mismatch");
    }
    const auto units = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (n * m * k >= kMinParallelWork)
    for (std::int64_t o = 0; o < units; ++o) {
        double* gw = grad_weight.data() + o * k;
        for (std::size_t j = 0; j < k; ++j) gw[j] = 0.0;
        double gb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double g = grad_out(i, o);
            const double* x = in.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) gw[j] += g * x[j];
            gb += g;
        }
        grad_bias[o] = gb;
    }
}

void affine_backward_input(const Matrix& grad_out, const Matrix& weight, Matrix& grad_in) {
    const std::size_t n = grad_out.rows(), m = grad_out.cols(), k = weight.cols();
    if (weight.rows() != m) throw std::invalid_argument("affine_backward_input: shape mismatch");
    if (grad_in.rows() != n || grad_in.cols() != k) grad_in = Matrix(n, k);
    const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static) if (n * m * k >= kMinParallelWork)
    for (std::int64_t i = 0; i < rows; ++i) {
        double* gx = grad_in.data() + i * k;
        for (std::size_t j = 0; j < k; ++j) gx[j] = 0.0;
        for (std::size_t o = 0; o < m; ++o) {
            const double g = grad_out(i, o);
            const double* w = weight.data() + o * k;
            for (std::size_t j = 0; j < k; ++j) gx[j] += g * w[j];
        }
    }
}

void activate(Activation act, Matrix& values) {
    double* v = values.data();
    const auto count = static_cast<std::int64_t>(values.size());
    [[maybe_unused]] const bool wide = values.size() >= kMinParallelWork / 16;
    switch (act) {
        case Activation::identity:
            return;
        case Activation::tanh:
#pragma omp parallel for schedule(static) if (wide)
            for (std::int64_t i = 0; i < count; ++i) v[i] = std::tanh(v[i]);
            return;
        case Activation::relu:
#pragma omp parallel for schedule(static) if (wide)
            for (std::int64_t i = 0; i < count; ++i) v[i] = v[i] > 0.0 ? v[i] : 0.0;
            return;
    }
}

void activate_backward(Activation act, const Matrix& activated, Matrix& grad) {
    const double* a = activated.data();
    double* g = grad.data();
    const auto count = static_cast<std::int64_t>(grad.size());
    [[maybe_unused]] const bool wide = grad.size() >= kMinParallelWork / 16;
    switch (act) {
        case Activation::identity:
            return;
        case Activation::tanh:
#pragma omp parallel for schedule(static) if (wide)
            for (std::int64_t i = 0; i < count; ++i) g[i] *= 1.0 - a[i] * a[i];
            return;
        case Activation::relu:
#pragma omp parallel for schedule(static) if (wide)
            for (std::int64_t i = 0; i < count; ++i) g[i] = a[i] > 0.0 ? g[i] : 0.0;
            return;
    }
}

void softmax_rows(const Matrix& logits, Matrix& probs) {
    if (probs.rows() != logits.rows() || probs.cols() != logits.cols()) {
        probs = Matrix(logits.rows(), logits.cols());
    }
    const auto rows = static_cast<std::int64_t>(logits.rows());
#pragma omp parallel for schedule(static) if (logits.size() >= kMinParallelWork / 16)
    for (std::int64_t i = 0; i < rows; ++i) {
        auto z = logits.row(i);
        auto p = probs.row(i);
        double mx = z[0];
        for (double v : z) mx = std::max(mx, v);
        double sum = 0.0;
        for (std::size_t c = 0; c < z.size(); ++c) {
            p[c] = std::exp(z[c] - mx);
            sum += p[c];
        }
        for (double& v : p) v /= sum;
    }
}

}  // namespace parallel
}  // namespace fairtrain::kernels
