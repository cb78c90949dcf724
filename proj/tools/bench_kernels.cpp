// Timing harness for the vector kernels: the dispatching implementations
// (OpenMP above the size cutoff) against the serial reference, across sizes
// straddling the parallel threshold.  Also cross-checks that both paths
// agree, since agreement is the property that makes the comparison fair.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "orthograd/common.hpp"
#include "orthograd/linalg.hpp"
#include "orthograd/rng.hpp"

namespace la = orthograd::linalg;
namespace rng = orthograd::rng;

namespace {

std::vector<double> randoms(std::uint64_t key, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = rng::normal(key, static_cast<std::uint64_t>(i));
  return v;
}

// Nanoseconds per call, with one warmup call and enough repetitions to
// swamp timer noise.  `sink` defeats dead-code elimination.
volatile double sink = 0.0;

template <typename F>
double time_ns(F&& f, int reps) {
  sink = sink + f();
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) sink = sink + f();
  const double total =
      std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() -
                                               t0)
          .count();
  return total / reps;
}

void print_row(const char* kernel, std::size_t n, double serial_ns,
               double dispatch_ns) {
  std::printf("%-12s %9zu   %10.1f    %10.1f    %6.2fx\n", kernel, n,
              serial_ns, dispatch_ns, serial_ns / dispatch_ns);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Benchmark the vector kernels: serial reference vs dispatch"};
  std::vector<std::size_t> sizes = {4096, 16384, 262144, 1048576};
  int reps = 0;
  app.add_option("--sizes", sizes, "Vector lengths to benchmark");
  app.add_option("--reps", reps, "Repetitions per timing (default: by size)");
  CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
  std::printf("OpenMP enabled, max threads %d; parallel cutoff n >= %zu\n",
              omp_get_max_threads(), la::kParallelCutoff);
#else
  std::printf("OpenMP disabled; both columns run the same serial code\n");
#endif
  std::printf("%-12s %9s   %10s    %10s    %7s\n", "kernel", "n",
              "serial ns", "dispatch ns", "speedup");

  for (const std::size_t n : sizes) {
    const std::vector<double> a = randoms(1, n);
    const std::vector<double> b = randoms(2, n);
    std::vector<double> out(n), ref(n);
    const int r =
        reps > 0 ? reps
                 : static_cast<int>(std::max<std::size_t>(8, (1u << 24) / n));

    // Cross-check before timing: the dispatching path must agree with the
    // reference it is being compared against.
    // Accumulation-order error scales with the norm product, not the
    // (possibly cancellation-shrunk) dot value itself.
    const double d_ref = la::serial::dot(a, b);
    const double d_par = la::dot(a, b);
    OG_CHECK(std::fabs(d_ref - d_par) <=
             1e-13 * std::max(1.0, la::norm(a) * la::norm(b)));
    // reject's projection coefficient comes from dot, whose blocked and
    // naive summations round differently, so agreement is to tolerance.
    la::serial::reject(a, b, ref);
    la::reject(a, b, out);
    for (std::size_t i = 0; i < n; ++i)
      OG_CHECK(std::fabs(out[i] - ref[i]) <=
               1e-12 * (1.0 + std::fabs(a[i]) + std::fabs(b[i])));

    print_row("dot", n, time_ns([&] { return la::serial::dot(a, b); }, r),
              time_ns([&] { return la::dot(a, b); }, r));

    print_row("reject", n,
              time_ns([&] { la::serial::reject(a, b, out); return out[0]; }, r),
              time_ns([&] { la::reject(a, b, out); return out[0]; }, r));

    print_row("axpy", n,
              time_ns([&] {
                out = b;
                la::serial::axpy(0.5, a, out);
                return out[0];
              }, r),
              time_ns([&] {
                out = b;
                la::axpy(0.5, a, out);
                return out[0];
              }, r));

    print_row("ema_update", n,
              time_ns([&] {
                out = b;
                la::serial::ema_update(0.9, a, out);
                return out[0];
              }, r),
              time_ns([&] {
                out = b;
                la::ema_update(0.9, a, out);
                return out[0];
              }, r));

    const std::vector<double> v = [&] {
      std::vector<double> sq(n);
      for (std::size_t i = 0; i < n; ++i) sq[i] = a[i] * a[i];
      return sq;
    }();
    print_row("adam_apply", n,
              time_ns([&] {
                out = b;
                la::serial::adam_apply(1e-3, a, 0.1, v, 0.01, 1e-8, out);
                return out[0];
              }, r),
              time_ns([&] {
                out = b;
                la::adam_apply(1e-3, a, 0.1, v, 0.01, 1e-8, out);
                return out[0];
              }, r));
  }
  return 0;
}
