#include "refineseg/kernels.hpp"

namespace refineseg::kernels::scalar {

void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b,
             int ldb, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * ldc;
    for (int p = 0; p < k; ++p) {
      const double av = a[static_cast<size_t>(i) * lda + p];
      if (av == 0.0) continue;
      const double* bp = b + static_cast<size_t>(p) * ldb;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b,
             int ldb, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * lda;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<size_t>(j) * ldb;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[static_cast<size_t>(i) * ldc + j] += acc;
    }
  }
}

void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b,
             int ldb, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * ldc;
    for (int p = 0; p < k; ++p) {
      const double av = a[static_cast<size_t>(p) * lda + i];
      if (av == 0.0) continue;
      const double* bp = b + static_cast<size_t>(p) * ldb;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace refineseg::kernels::scalar
