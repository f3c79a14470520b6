#pragma once

#include <cstddef>

namespace stpi::nn::kernels {

// c (n x m) += a (n x k) * b (k x m)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += s * bp[j];
    }
  }
}

// c (k x m) += a^T * b, a (n x k), b (n x m)
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      double* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += s * bi[j];
    }
  }
}

// c (n x k) += a (n x m) * b^T, b (k x m); bt is caller scratch of size m*k.
inline void gemm_nt(const double* a, const double* b, double* c, double* bt, std::size_t n, std::size_t m,
                    std::size_t k) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = b[p * m + j];
  }
  gemm_nn(a, bt, c, n, m, k);
}

}  // namespace stpi::nn::kernels
