#include <atomic>
#include <cstdlib>
#include <string_view>

#include "piper/error.hpp"
#include "piper/simd.hpp"

namespace piper::simd {
namespace {

Isa detect() {
  if (const char* env = std::getenv("PIPER_SIMD")) {
    const std::string_view v(env);
    if (v == "scalar") return Isa::Scalar;
    if (v == "avx2" && isa_supported(Isa::Avx2)) return Isa::Avx2;
  }
  return isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{nullptr};
  return table;
}

const KernelTable& table_for(Isa isa) {
#if defined(__x86_64__) || defined(_M_X64)
  if (isa == Isa::Avx2) return avx2_kernels();
#endif
  return scalar_kernels();
}

}  // namespace

const char* to_string(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool isa_supported(Isa isa) {
  if (isa == Isa::Scalar) return true;
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& kernels() {
  const KernelTable* t = slot().load(std::memory_order_acquire);
  if (t == nullptr) {
    t = &table_for(detect());
    slot().store(t, std::memory_order_release);
  }
  return *t;
}

Isa active_isa() { return &kernels() == &scalar_kernels() ? Isa::Scalar : Isa::Avx2; }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw Error(ErrorCode::InvalidArgument, std::string("ISA not supported on this CPU: ") + to_string(isa));
  }
  slot().store(&table_for(isa), std::memory_order_release);
}

}  // namespace piper::simd
