#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "variants.hpp"

namespace nep::kernels {
namespace {

bool cpu_has(Isa isa) {
#if defined(__x86_64__) || defined(__i386__)
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    case Isa::Avx512:
      return __builtin_cpu_supports("avx512f") && __builtin_cpu_supports("fma");
  }
  return false;
#else
  return isa == Isa::Scalar;
#endif
}

Isa best_isa() {
  if (const char* env = std::getenv("NEP_ISA")) {
    const std::string want(env);
    if (want == "scalar") return Isa::Scalar;
    if (want == "avx2" && isa_supported(Isa::Avx2)) return Isa::Avx2;
    if (want == "avx512" && isa_supported(Isa::Avx512)) return Isa::Avx512;
  }
  if (isa_supported(Isa::Avx512)) return Isa::Avx512;
  if (isa_supported(Isa::Avx2)) return Isa::Avx2;
  return Isa::Scalar;
}

const KernelTable& table_for(Isa isa) {
  static const KernelTable scalar = detail::scalar_table();
#if defined(NEP_HAVE_X86_SIMD)
  static const KernelTable avx2 = detail::avx2_table();
  static const KernelTable avx512 = detail::avx512_table();
  switch (isa) {
    case Isa::Avx2:
      return avx2;
    case Isa::Avx512:
      return avx512;
    default:
      break;
  }
#else
  (void)isa;
#endif
  return scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{best_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
    case Isa::Avx512:
      return "avx512";
  }
  return "?";
}

bool isa_supported(Isa isa) {
#if defined(NEP_HAVE_X86_SIMD)
  return cpu_has(isa);
#else
  return isa == Isa::Scalar;
#endif
}

const KernelTable& table(Isa isa) {
  if (!isa_supported(isa)) throw std::invalid_argument("kernel ISA not supported on this CPU");
  return table_for(isa);
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

const KernelTable& active() { return table_for(active_isa()); }

void force_isa(Isa isa) {
  if (!isa_supported(isa)) throw std::invalid_argument("kernel ISA not supported on this CPU");
  current().store(isa, std::memory_order_relaxed);
}

}  // namespace nep::kernels
