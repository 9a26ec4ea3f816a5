#pragma once

// Dense kernels used by the forward and backward passes.
//
// Two implementations share each signature: `serial` is the reference and
// `parallel` distributes output rows across OpenMP threads. Every output
// element is produced by exactly one thread with the same loop order as the
// serial path, so the two are bitwise identical for any thread count. The
// functions directly in `kernels` dispatch to `parallel` when OpenMP is
// available.

#include <span>

#include "fairtrain/matrix.hpp"

namespace fairtrain::kernels {

enum class Activation { identity, tanh, relu };

namespace serial {
// out = in * weight^T + bias; in: n x k, weight: m x k, out: n x m
void affine_forward(const Matrix& in, const Matrix& weight, std::span<const double> bias,
                    Matrix& out);
// grad_weight = grad_out^T * in; grad_bias = column sums of grad_out
void affine_backward_params(const Matrix& grad_out, const Matrix& in, Matrix& grad_weight,
                            std::span<double> grad_bias);
// grad_in = grad_out * weight
void affine_backward_input(const Matrix& grad_out, const Matrix& weight, Matrix& grad_in);
void activate(Activation act, Matrix& values);
// grad *= act'(z), with the derivative expressed through the activated output
void activate_backward(Activation act, const Matrix& activated, Matrix& grad);
void softmax_rows(const Matrix& logits, Matrix& probs);
}  // namespace serial

namespace parallel {
void affine_forward(const Matrix& in, const Matrix& weight, std::span<const double> bias,
                    Matrix& out);
void affine_backward_params(const Matrix& grad_out, const Matrix& in, Matrix& grad_weight,
                            std::span<double> grad_bias);
void affine_backward_input(const Matrix& grad_out, const Matrix& weight, Matrix& grad_in);
void activate(Activation act, Matrix& values);
void activate_backward(Activation act, const Matrix& activated, Matrix& grad);
void softmax_rows(const Matrix& logits, Matrix& probs);
}  // namespace parallel

// True when the parallel namespace was compiled with OpenMP.
bool parallel_enabled() noexcept;

#ifdef FAIRTRAIN_USE_OPENMP
namespace active = parallel;
#else
namespace active = serial;
#endif

inline void affine_forward(const Matrix& in, const Matrix& weight, std::span<const double> bias,
                           Matrix& out) {
    active::affine_forward(in, weight, bias, out);
}
inline void affine_backward_params(const Matrix& grad_out, const Matrix& in,
                                   Matrix& grad_weight, std::span<double> grad_bias) {
    active::affine_backward_params(grad_out, in, grad_weight, grad_bias);
}
inline void affine_backward_input(const Matrix& grad_out, const Matrix& weight,
                                  Matrix& grad_in) {
    active::affine_backward_input(grad_out, weight, grad_in);
}
inline void activate(Activation act, Matrix& values) { active::activate(act, values); }
inline void activate_backward(Activation act, const Matrix& activated, Matrix& grad) {
    active::activate_backward(act, activated, grad);
}
inline void softmax_rows(const Matrix& logits, Matrix& probs) {
    active::softmax_rows(logits, probs);
}

}  // namespace fairtrain::kernels
