#include "refineseg/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "refineseg/error.hpp"

namespace refineseg::kernels {

namespace {

constexpr KernelTable kScalarTable{Isa::kScalar, scalar::gemm_nn,
                                   scalar::gemm_nt, scalar::gemm_tn};
#if defined(REFINESEG_HAVE_AVX2)
constexpr KernelTable kAvx2Table{Isa::kAvx2, avx2::gemm_nn, avx2::gemm_nt,
                                 avx2::gemm_tn};
#endif

bool cpu_has_avx2() {
#if defined(REFINESEG_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* detect() {
  if (const char* env = std::getenv("REFINESEG_ISA")) {
    const std::string want(env);
    if (want == "scalar") return &kScalarTable;
  }
  return isa_available(Isa::kAvx2) ? &table(Isa::kAvx2) : &kScalarTable;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{detect()};
  return ptr;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return "scalar";
    case Isa::kAvx2: return "avx2";
  }
  return "unknown";
}

bool isa_available(Isa isa) {
  if (isa == Isa::kScalar) return true;
  static const bool avx2 = cpu_has_avx2();
  return avx2;
}

const KernelTable& table(Isa isa) {
  if (!isa_available(isa)) {
    throw Error(ErrorCode::kUnavailable,
                std::string("kernel ISA not available: ") +
                    std::string(isa_name(isa)));
  }
#if defined(REFINESEG_HAVE_AVX2)
  if (isa == Isa::kAvx2) return kAvx2Table;
#endif
  return kScalarTable;
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void set_active(Isa isa) {
  current().store(&table(isa), std::memory_order_release);
}

}  // namespace refineseg::kernels
