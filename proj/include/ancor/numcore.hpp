#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ancor/kernels.hpp"
#include "ancor/matrix.hpp"

namespace ancor {

inline constexpr double kEpsNorm = 1e-12;

// A value together with the gradient of a scalar loss w.r.t. one input.
struct Grad {
  Matrix value;
  Matrix gradient;
};

struct ScalarGrad {
  double value = 0.0;
  Matrix gradient;
};

// x / ||x||. Throws DegenerateVectorError when ||x|| <= kEpsNorm.
std::vector<double> l2_normalize(std::span<const double> x);

// Backward of l2_normalize: given upstream gradient g w.r.t. x/||x||,
// returns (I - x_hat x_hat^T) g / ||x||.
std::vector<double> l2_normalize_backward(std::span<const double> x, std::span<const double> upstream);

// Row-wise variants over a batch; `norms` receives each row's pre-normalization norm.
Matrix l2_normalize_rows(const Matrix& x, std::vector<double>* norms = nullptr);
Matrix l2_normalize_rows_backward(const Matrix& normalized, std::span<const double> norms,
                                  const Matrix& upstream);

// -log softmax(logits)[label] with max subtraction. Gradient is softmax - onehot.
ScalarGrad softmax_cross_entropy(std::span<const double> logits, std::size_t label);

// Numerically stable log(sum(exp(v))).
double log_sum_exp(std::span<const double> v);

// log(sum(exp(v))) - ref, evaluated as (max - ref) + log(sum(exp(v - max)))
// so that ref == max cancels exactly.
double log_sum_exp_minus(std::span<const double> v, double ref);

// Softmax into `out` (same length as logits).
void softmax(std::span<const double> logits, std::span<double> out);

// Central: (f(x+h) - f(x-h)) / 2h.
// Extrapolated: Richardson combination (4 D(h/2) - D(h)) / 3 of two central
// differences, which cancels the h^2 term and tolerates a larger h. Useful
// when gradient entries are small next to f's roundoff.
enum class FdStencil { Central, Extrapolated };

// Checks `analytic` against f at x. Returns the maximum entry-wise relative
// error |a - n| / max(|a|, |n|, 1e-8).
// Throws EvaluationError if f returns a non-finite value.
double finite_diff_check(const std::function<double(const Matrix&)>& f, const Matrix& x,
                         const Matrix& analytic, double h, FdStencil stencil = FdStencil::Central);

}  // namespace ancor
