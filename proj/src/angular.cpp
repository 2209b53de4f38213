#include "ancor/angular.hpp"

#include <cmath>
#include <string>

#include "ancor/numcore.hpp"

namespace ancor {

AngularFrame make_frame(const Matrix& W, std::size_t y) {
  if (y >= W.rows())
    throw IndexError("angular: class " + std::to_string(y) + " out of range for " + std::to_string(W.rows()) +
                     " classes");
  AngularFrame f;
  f.w_norm = norm(W.row(y));
  if (!(f.w_norm > kEpsNorm)) throw DegenerateVectorError("angular: class weight " + std::to_string(y) + " is ~0");
  f.w_hat.resize(W.cols());
  for (std::size_t i = 0; i < W.cols(); ++i) f.w_hat[i] = W(y, i) / f.w_norm;
  return f;
}

AngularRows angular_rows(const Matrix& x, const AngularFrame& frame, std::string_view what) {
  if (x.cols() != frame.w_hat.size() && x.rows() > 0)
    throw DimensionError("angular: " + std::string(what) + " width " + std::to_string(x.cols()) +
                         " does not match class weight width " + std::to_string(frame.w_hat.size()));
  AngularRows r{Matrix(x.rows(), x.cols()), Matrix(x.rows(), x.cols()), std::vector<double>(x.rows()),
                std::vector<double>(x.rows())};
  const std::size_t e = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto src = x.row(i);
    const double xn = norm(src);
    if (!(xn > kEpsNorm))
      throw DegenerateVectorError("angular: " + std::string(what) + " #" + std::to_string(i) + " has ~0 norm");
    auto xh = r.x_hat.row(i);
    auto out = r.out.row(i);
    double dn2 = 0.0;
    for (std::size_t c = 0; c < e; ++c) {
      xh[c] = src[c] / xn;
      out[c] = xh[c] - frame.w_hat[c];
      dn2 += out[c] * out[c];
    }
    const double dn = std::sqrt(dn2);
    if (!(dn > kEpsParallel))
      throw ParallelDegenerateError("angular: " + std::string(what) + " #" + std::to_string(i) +
                                    " is parallel to its class weight (|x_hat - w_hat| = " + std::to_string(dn) + ")");
    for (std::size_t c = 0; c < e; ++c) out[c] /= dn;
    r.x_norm[i] = xn;
    r.diff_norm[i] = dn;
  }
  return r;
}

void angular_rows_backward(const AngularRows& rows, const Matrix& upstream, Matrix* grad_x,
                           std::span<double> w_hat_grad) {
  const std::size_t e = rows.out.cols();
  if (grad_x) *grad_x = Matrix(rows.out.rows(), e);
  std::vector<double> gn(e);
  for (std::size_t i = 0; i < rows.out.rows(); ++i) {
    auto a = rows.out.row(i);
    auto g = upstream.row(i);
    // Through n / ||n||.
    const double ag = dot(a, g);
    for (std::size_t c = 0; c < e; ++c) gn[c] = (g[c] - a[c] * ag) / rows.diff_norm[i];
    if (!w_hat_grad.empty())
      for (std::size_t c = 0; c < e; ++c) w_hat_grad[c] -= gn[c];
    if (grad_x) {
      // Through x / ||x||.
      auto xh = rows.x_hat.row(i);
      const double xg = dot(xh, gn);
      auto gx = grad_x->row(i);
      for (std::size_t c = 0; c < e; ++c) gx[c] = (gn[c] - xh[c] * xg) / rows.x_norm[i];
    }
  }
}

std::vector<double> frame_backward(const AngularFrame& frame, std::span<const double> w_hat_grad) {
  const double proj = dot(frame.w_hat, w_hat_grad);
  std::vector<double> g(frame.w_hat.size());
  for (std::size_t c = 0; c < g.size(); ++c) g[c] = (w_hat_grad[c] - frame.w_hat[c] * proj) / frame.w_norm;
  return g;
}

std::vector<double> angular_normalize(std::span<const double> x, const Matrix& W, std::size_t y) {
  const AngularFrame frame = make_frame(W, y);
  const AngularRows r = angular_rows(Matrix::row_vector(x), frame, "input");
  return {r.out.values().begin(), r.out.values().end()};
}

AngularGrads angular_normalize_backward(std::span<const double> x, const Matrix& W, std::size_t y,
                                        std::span<const double> upstream) {
  const AngularFrame frame = make_frame(W, y);
  const AngularRows r = angular_rows(Matrix::row_vector(x), frame, "input");
  Matrix gx;
  std::vector<double> gw_hat(x.size(), 0.0);
  angular_rows_backward(r, Matrix::row_vector(upstream), &gx, gw_hat);
  return {std::vector<double>(gx.values().begin(), gx.values().end()), frame_backward(frame, gw_hat)};
}

AngularBatch angular_normalize_batch(const Matrix& q, const Matrix& k_plus, const Matrix& negatives, const Matrix& W,
                                     std::size_t y) {
  const AngularFrame frame = make_frame(W, y);
  AngularBatch b;
  b.query = angular_rows(q, frame, "query").out;
  b.positive = angular_rows(k_plus, frame, "positive key").out;
  b.negatives = negatives.rows() == 0 ? Matrix(0, W.cols()) : angular_rows(negatives, frame, "negative key").out;
  return b;
}

}  // namespace ancor
