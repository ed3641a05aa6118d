#pragma once

// Dense inner-loop kernels behind convolution. Each kernel has a portable
// scalar reference and an AVX2/FMA variant; the variant is picked once at
// startup from CPUID and can be overridden with REFINESEG_ISA=scalar|avx2.
//
// All matrices are row-major with explicit leading dimensions and every
// kernel accumulates into C.

#include <cstddef>
#include <string_view>

namespace refineseg::kernels {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);

// C[M,N] += A[M,K] * B[K,N]
using GemmNN = void (*)(int m, int n, int k, const double* a, int lda,
                        const double* b, int ldb, double* c, int ldc);
// C[M,N] += A[M,K] * B[N,K]^T
using GemmNT = GemmNN;
// C[M,N] += A[K,M]^T * B[K,N]
using GemmTN = GemmNN;

struct KernelTable {
  Isa isa;
  GemmNN gemm_nn;
  GemmNT gemm_nt;
  GemmTN gemm_tn;
};

bool isa_available(Isa isa);

const KernelTable& table(Isa isa);

// The table used by the network layers.
const KernelTable& active();

// Test hook. Throws if the ISA is not available on this CPU.
void set_active(Isa isa);

namespace scalar {
void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b,
             int ldb, double* c, int ldc);
void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b,
             int ldb, double* c, int ldc);
void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b,
             int ldb, double* c, int ldc);
}  // namespace scalar

#if defined(REFINESEG_HAVE_AVX2)
namespace avx2 {
void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b,
             int ldb, double* c, int ldc);
void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b,
             int ldb, double* c, int ldc);
void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b,
             int ldb, double* c, int ldc);
}  // namespace avx2
#endif

}  // namespace refineseg::kernels
