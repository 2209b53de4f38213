#include "ancor/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ancor {

std::vector<double> l2_normalize(std::span<const double> x) {
  const double n = norm(x);
  if (!(n > kEpsNorm)) throw DegenerateVectorError("l2_normalize: norm " + std::to_string(n) + " <= eps_norm");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / n;
  return out;
}

std::vector<double> l2_normalize_backward(std::span<const double> x, std::span<const double> upstream) {
  if (x.size() != upstream.size()) throw DimensionError("l2_normalize_backward: length mismatch");
  const double n = norm(x);
  if (!(n > kEpsNorm)) throw DegenerateVectorError("l2_normalize_backward: degenerate input");
  double proj = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) proj += x[i] * upstream[i];
  proj /= n;
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = (upstream[i] - (x[i] / n) * proj) / n;
  return g;
}

Matrix l2_normalize_rows(const Matrix& x, std::vector<double>* norms) {
  Matrix out(x.rows(), x.cols());
  if (norms) norms->assign(x.rows(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double n = norm(x.row(r));
    if (!(n > kEpsNorm)) {
      throw DegenerateVectorError("l2_normalize: row " + std::to_string(r) + " has norm " +
                                  std::to_string(n) + " <= eps_norm");
    }
    auto src = x.row(r);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c) dst[c] = src[c] / n;
    if (norms) (*norms)[r] = n;
  }
  return out;
}

Matrix l2_normalize_rows_backward(const Matrix& normalized, std::span<const double> norms,
                                  const Matrix& upstream) {
  if (!normalized.same_shape(upstream) || norms.size() != normalized.rows())
    throw DimensionError("l2_normalize_rows_backward: shape mismatch");
  Matrix g(upstream.rows(), upstream.cols());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    auto u = normalized.row(r);
    auto up = upstream.row(r);
    const double proj = dot(u, up);
    auto dst = g.row(r);
    for (std::size_t c = 0; c < g.cols(); ++c) dst[c] = (up[c] - u[c] * proj) / norms[r];
  }
  return g;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

double log_sum_exp_minus(std::span<const double> v, double ref) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return (mx - ref) + std::log(s);
}

void softmax(std::span<const double> logits, std::span<double> out) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    s += out[i];
  }
  for (double& p : out) p /= s;
}

ScalarGrad softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw IndexError("softmax_cross_entropy: label " + std::to_string(label) + " out of range [0," +
                     std::to_string(logits.size()) + ")");
  }
  ScalarGrad out;
  out.gradient = Matrix(1, logits.size());
  softmax(logits, out.gradient.values());
  out.value = log_sum_exp_minus(logits, logits[label]);
  out.gradient[label] -= 1.0;
  return out;
}

double finite_diff_check(const std::function<double(const Matrix&)>& f, const Matrix& x,
                         const Matrix& analytic, double h, FdStencil stencil) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_check: step must be positive");
  if (!x.same_shape(analytic)) throw DimensionError("finite_diff_check: gradient shape mismatch");
  Matrix probe = x;
  auto central = [&](std::size_t i, double step) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = f(probe);
    probe[i] = orig - step;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw EvaluationError("finite_diff_check: f is not finite near entry " + std::to_string(i));
    return (fp - fm) / (2.0 * step);
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double numeric = central(i, h);
    if (stencil == FdStencil::Extrapolated) numeric = (4.0 * central(i, 0.5 * h) - numeric) / 3.0;
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace ancor
