#pragma once

#include <cstddef>
#include <span>

// Dense double-precision kernels behind every inner loop of the library
// (SVM updates and scoring, fusion accumulation, retrieval distances).
//
// Each kernel has a scalar reference and, on x86-64, an AVX2+FMA variant.
// The variant is picked once at startup from CPUID; PIPER_SIMD=scalar|avx2 in
// the environment or set_isa() overrides it. Variants agree to rounding, not
// bit for bit, so the active ISA is recorded in run manifests.

namespace piper::simd {

enum class Isa { Scalar, Avx2 };

const char* to_string(Isa isa);

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y *= alpha
  void (*scale)(double alpha, double* y, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
};

const KernelTable& scalar_kernels();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_kernels();
#endif

bool isa_supported(Isa isa);
Isa active_isa();
/// Throws if the ISA is not supported on this CPU.
void set_isa(Isa isa);
const KernelTable& kernels();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return kernels().dot(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  kernels().axpy(alpha, x.data(), y.data(), x.size());
}
inline void scale(double alpha, std::span<double> y) { kernels().scale(alpha, y.data(), y.size()); }
inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  return kernels().squared_distance(a.data(), b.data(), a.size());
}

}  // namespace piper::simd
