#pragma once

#include "ancor/matrix.hpp"

// Dense products used by every forward and backward pass.
//
// The ancor::kernels functions are the OpenMP-parallel implementations used
// in production. Each output row is produced by exactly one thread with a
// fixed inner summation order, so results do not depend on the thread count.
// The ancor::serial namespace keeps plain triple-loop references that the
// tests and the benchmark compare against.
namespace ancor {

namespace kernels {

// a (n x k) * b (k x m)
Matrix matmul(const Matrix& a, const Matrix& b);
// a (n x k) * b^T, b is (m x k)
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// a^T * b, a is (k x n), b is (k x m)
Matrix matmul_tn(const Matrix& a, const Matrix& b);

// Number of threads the parallel kernels would use right now.
int max_threads();
void set_threads(int n);

}  // namespace kernels

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

}  // namespace serial

using kernels::matmul;
using kernels::matmul_nt;
using kernels::matmul_tn;

}  // namespace ancor
