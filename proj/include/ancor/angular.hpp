#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "ancor/matrix.hpp"

// Class-specific angular normalization: maps x to the unit direction of
// x_hat - w_hat_y, where w_hat_y is the normalized row y of the classifier.
// Contrastive dot products between such outputs measure angles around the
// class weight instead of distances toward it.
namespace ancor {

inline constexpr double kEpsParallel = 1e-8;

// Normalized class-weight direction, shared by every vector of class y.
struct AngularFrame {
  std::vector<double> w_hat;
  double w_norm = 0.0;
};

AngularFrame make_frame(const Matrix& W, std::size_t y);

// Row-wise angular normalization with the state needed for backward.
struct AngularRows {
  Matrix out;
  Matrix x_hat;
  std::vector<double> x_norm;
  std::vector<double> diff_norm;
};

// `what` names the rows in error messages ("query", "negative key", ...).
AngularRows angular_rows(const Matrix& x, const AngularFrame& frame, std::string_view what);

// Backward through angular_rows. Writes dL/dx into grad_x (if non-null) and
// adds dL/dw_hat into w_hat_grad (if non-null, length e).
void angular_rows_backward(const AngularRows& rows, const Matrix& upstream, Matrix* grad_x,
                           std::span<double> w_hat_grad);

// Converts an accumulated dL/dw_hat into dL/dW_y.
std::vector<double> frame_backward(const AngularFrame& frame, std::span<const double> w_hat_grad);

std::vector<double> angular_normalize(std::span<const double> x, const Matrix& W, std::size_t y);

struct AngularGrads {
  std::vector<double> x;    // dL/dx
  std::vector<double> w_y;  // dL/dW_y
};

AngularGrads angular_normalize_backward(std::span<const double> x, const Matrix& W, std::size_t y,
                                        std::span<const double> upstream);

struct AngularBatch {
  Matrix query;
  Matrix positive;
  Matrix negatives;
};

// Applies the same (W, y) to the query, positive key and every negative key.
AngularBatch angular_normalize_batch(const Matrix& q, const Matrix& k_plus, const Matrix& negatives, const Matrix& W,
                                     std::size_t y);

}  // namespace ancor
