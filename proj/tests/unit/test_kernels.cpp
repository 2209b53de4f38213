#include <doctest.h>

#include "ancor/kernels.hpp"
#include "oracles.hpp"

using namespace ancor;

TEST_CASE("parallel kernels agree with the serial reference") {
  for (std::size_t n : {1u, 3u, 17u, 64u, 130u}) {
    std::mt19937_64 rng(n);
    const Matrix a = oracle::random_matrix(n, 33, rng), b = oracle::random_matrix(33, 70, rng);
    const Matrix bt = b.transposed(), at = a.transposed();
    // Summation order differs between the two, so compare with a tolerance.
    CHECK(oracle::max_abs_diff(kernels::matmul(a, b), serial::matmul(a, b)) < 1e-12);
    CHECK(oracle::max_abs_diff(kernels::matmul_nt(a, bt), serial::matmul_nt(a, bt)) < 1e-12);
    CHECK(oracle::max_abs_diff(kernels::matmul_tn(at, b), serial::matmul_tn(at, b)) < 1e-12);
  }
}

TEST_CASE("parallel kernels do not depend on the thread count") {
  std::mt19937_64 rng(9);
  const Matrix a = oracle::random_matrix(200, 64, rng), b = oracle::random_matrix(64, 128, rng);
  const int before = kernels::max_threads();
  kernels::set_threads(1);
  const Matrix one = kernels::matmul(a, b);
  const Matrix one_tn = kernels::matmul_tn(a.transposed(), b);
  kernels::set_threads(4);
  CHECK(kernels::matmul(a, b) == one);
  CHECK(kernels::matmul_tn(a.transposed(), b) == one_tn);
  kernels::set_threads(before);
}

TEST_CASE("serial reference matches the long-double oracle") {
  std::mt19937_64 rng(2);
  const Matrix a = oracle::random_matrix(9, 12, rng), b = oracle::random_matrix(12, 5, rng);
  CHECK(oracle::max_abs_diff(serial::matmul(a, b), oracle::matmul(a, b)) < 1e-12);
  CHECK(oracle::max_abs_diff(serial::matmul_nt(a, b.transposed()), oracle::matmul(a, b)) < 1e-12);
  CHECK(oracle::max_abs_diff(serial::matmul_tn(a.transposed(), b), oracle::matmul(a, b)) < 1e-12);
}
