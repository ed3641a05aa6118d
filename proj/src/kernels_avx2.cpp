// Compiled with -mavx2 -mfma; only reached through the runtime table after a
// CPUID check.

#include <immintrin.h>

#include "refineseg/kernels.hpp"

namespace refineseg::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// C[i0..i0+R, :] += sum_p coef(i, p) * B[p, :], with coef supplied by a
// strided pointer so the same body serves NN (A row-major) and TN (A
// transposed).
template <int R>
inline void rows_axpy(int n, int k, const double* const* coef, int coef_step,
                      const double* b, int ldb, double* const* crow) {
  int j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d acc0[R], acc1[R];
    for (int r = 0; r < R; ++r) {
      acc0[r] = _mm256_loadu_pd(crow[r] + j);
      acc1[r] = _mm256_loadu_pd(crow[r] + j + 4);
    }
    for (int p = 0; p < k; ++p) {
      const double* bp = b + static_cast<size_t>(p) * ldb + j;
      const __m256d b0 = _mm256_loadu_pd(bp);
      const __m256d b1 = _mm256_loadu_pd(bp + 4);
      for (int r = 0; r < R; ++r) {
        const __m256d av =
            _mm256_broadcast_sd(coef[r] + static_cast<size_t>(p) * coef_step);
        acc0[r] = _mm256_fmadd_pd(av, b0, acc0[r]);
        acc1[r] = _mm256_fmadd_pd(av, b1, acc1[r]);
      }
    }
    for (int r = 0; r < R; ++r) {
      _mm256_storeu_pd(crow[r] + j, acc0[r]);
      _mm256_storeu_pd(crow[r] + j + 4, acc1[r]);
    }
  }
  for (; j + 4 <= n; j += 4) {
    __m256d acc[R];
    for (int r = 0; r < R; ++r) acc[r] = _mm256_loadu_pd(crow[r] + j);
    for (int p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + static_cast<size_t>(p) * ldb + j);
      for (int r = 0; r < R; ++r) {
        const __m256d av =
            _mm256_broadcast_sd(coef[r] + static_cast<size_t>(p) * coef_step);
        acc[r] = _mm256_fmadd_pd(av, b0, acc[r]);
      }
    }
    for (int r = 0; r < R; ++r) _mm256_storeu_pd(crow[r] + j, acc[r]);
  }
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      double acc = crow[r][j];
      for (int p = 0; p < k; ++p) {
        acc += coef[r][static_cast<size_t>(p) * coef_step] *
               b[static_cast<size_t>(p) * ldb + j];
      }
      crow[r][j] = acc;
    }
  }
}

template <bool kTransA>
void gemm_axpy_form(int m, int n, int k, const double* a, int lda,
                    const double* b, int ldb, double* c, int ldc) {
  // NN: coef(i, p) = a[i*lda + p]; TN: coef(i, p) = a[p*lda + i].
  const int step = kTransA ? lda : 1;
  auto coef_base = [&](int i) {
    return kTransA ? a + i : a + static_cast<size_t>(i) * lda;
  };
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* coef[4] = {coef_base(i), coef_base(i + 1), coef_base(i + 2),
                             coef_base(i + 3)};
    double* crow[4] = {c + static_cast<size_t>(i) * ldc,
                       c + static_cast<size_t>(i + 1) * ldc,
                       c + static_cast<size_t>(i + 2) * ldc,
                       c + static_cast<size_t>(i + 3) * ldc};
    rows_axpy<4>(n, k, coef, step, b, ldb, crow);
  }
  for (; i < m; ++i) {
    const double* coef[1] = {coef_base(i)};
    double* crow[1] = {c + static_cast<size_t>(i) * ldc};
    rows_axpy<1>(n, k, coef, step, b, ldb, crow);
  }
}

}  // namespace

void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b,
             int ldb, double* c, int ldc) {
  gemm_axpy_form<false>(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b,
             int ldb, double* c, int ldc) {
  gemm_axpy_form<true>(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b,
             int ldb, double* c, int ldc) {
  // Dot-product form: 2 rows of A against 2 rows of B per block.
  auto dot_block = [&](int i, int j, int ri, int rj) {
    __m256d acc[2][2] = {{_mm256_setzero_pd(), _mm256_setzero_pd()},
                         {_mm256_setzero_pd(), _mm256_setzero_pd()}};
    const double* ar[2] = {a + static_cast<size_t>(i) * lda,
                           a + static_cast<size_t>(i + ri - 1) * lda};
    const double* br[2] = {b + static_cast<size_t>(j) * ldb,
                           b + static_cast<size_t>(j + rj - 1) * ldb};
    int p = 0;
    for (; p + 4 <= k; p += 4) {
      const __m256d a0 = _mm256_loadu_pd(ar[0] + p);
      const __m256d a1 = _mm256_loadu_pd(ar[1] + p);
      const __m256d b0 = _mm256_loadu_pd(br[0] + p);
      const __m256d b1 = _mm256_loadu_pd(br[1] + p);
      acc[0][0] = _mm256_fmadd_pd(a0, b0, acc[0][0]);
      acc[0][1] = _mm256_fmadd_pd(a0, b1, acc[0][1]);
      acc[1][0] = _mm256_fmadd_pd(a1, b0, acc[1][0]);
      acc[1][1] = _mm256_fmadd_pd(a1, b1, acc[1][1]);
    }
    double s[2][2];
    for (int x = 0; x < 2; ++x) {
      for (int y = 0; y < 2; ++y) {
        s[x][y] = hsum(acc[x][y]);
        for (int q = p; q < k; ++q) s[x][y] += ar[x][q] * br[y][q];
      }
    }
    for (int x = 0; x < ri; ++x) {
      for (int y = 0; y < rj; ++y) {
        c[static_cast<size_t>(i + x) * ldc + j + y] += s[x][y];
      }
    }
  };
  for (int i = 0; i < m; i += 2) {
    const int ri = m - i >= 2 ? 2 : 1;
    for (int j = 0; j < n; j += 2) {
      const int rj = n - j >= 2 ? 2 : 1;
      dot_block(i, j, ri, rj);
    }
  }
}

}  // namespace refineseg::kernels::avx2
