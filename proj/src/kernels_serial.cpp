#include <cmath>
#include <stdexcept>

#include "fairtrain/kernels.hpp"

namespace fairtrain::kernels::serial {

void affine_forward(const Matrix& in, const Matrix& weight, std::span<const double> bias,
                    Matrix& out) {
    const std::size_t n = in.rows(), k = in.cols(), m = weight.rows();
    if (weight.cols() != k || bias.size() != m) {
        throw std::invalid_argument("affine_forward: shape mismatch");
    }
    if (out.rows() != n || out.cols() != m) out = Matrix(n, m);
    for (std::size_t i = 0; i < n; ++i) {
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
    for (std::size_t o = 0; o < m; ++o) {
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
    for (std::size_t i = 0; i < n; ++i) {
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
    auto v = values.values();
    switch (act) {
        case Activation::identity:
            return;
        case Activation::tanh:
            for (double& x : v) x = std::tanh(x);
            return;
        case Activation::relu:
            for (double& x : v) x = x > 0.0 ? x : 0.0;
            return;
    }
}

void activate_backward(Activation act, const Matrix& activated, Matrix& grad) {
    auto a = activated.values();
    auto g = grad.values();
    switch (act) {
        case Activation::identity:
            return;
        case Activation::tanh:
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - a[i] * a[i];
            return;
        case Activation::relu:
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = a[i] > 0.0 ? g[i] : 0.0;
            return;
    }
}

void softmax_rows(const Matrix& logits, Matrix& probs) {
    if (probs.rows() != logits.rows() || probs.cols() != logits.cols()) {
        probs = Matrix(logits.rows(), logits.cols());
    }
    for (std::size_t i = 0; i < logits.rows(); ++i) {
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

}  // namespace fairtrain::kernels::serial
