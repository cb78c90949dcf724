#pragma once

#include <cstddef>
#include <span>

// Flat-vector kernels shared by the optimizers, models, and telemetry.
//
// Reductions accumulate per fixed-size block and then fold the block partials
// in block order.  That makes every result a function of the input values
// alone: the same bits come back whether a kernel ran on one thread or many,
// which is what lets whole runs be compared byte-for-byte.
//
// The `serial` namespace holds plain single-threaded loops with naive
// accumulation.  They are the reference the parallel kernels are tested and
// benchmarked against, not a fallback used in production paths.

namespace orthograd::linalg {

// Norms at or below this are treated as zero wherever a vector is used as a
// direction or a denominator.
inline constexpr double kZeroNorm = 1e-12;

// Relative tolerance for orthogonality checks in tests and diagnostics.
inline constexpr double kOrthTol = 1e-10;

// Elements per accumulation block; partial sums fold in block order.
inline constexpr std::size_t kDotBlock = 4096;

// Below this element count the kernels stay on one thread.
inline constexpr std::size_t kParallelCutoff = 16384;

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

// dot(a,b) / (|a|*|b|), clamped to [-1, 1]; 0 when either norm <= kZeroNorm.
double cosine(std::span<const double> a, std::span<const double> b);

// dot(g,d) / dot(d,d); 0 when |d| <= kZeroNorm.
double project_coefficient(std::span<const double> g, std::span<const double> d);

// out = project_coefficient(g, d) * d
void project(std::span<const double> g, std::span<const double> d,
             std::span<double> out);

// out = g - project_coefficient(g, d) * d.  With a zero coefficient this
// reproduces g exactly, so projection against a dead direction is a no-op.
void reject(std::span<const double> g, std::span<const double> d,
            std::span<double> out);

// y += alpha * x.  x and y may alias (same span), which turns the kernel
// into y *= 1 + alpha applied elementwise as y[i] -= (-alpha)*y[i].
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// c = beta * c + (1 - beta) * g
void ema_update(double beta, std::span<const double> g, std::span<double> c);

// v = beta * v + (1 - beta) * g^2
void ema_update_squared(double beta, std::span<const double> g,
                        std::span<double> v);

// theta[i] -= step * (m[i]/bias1) / (sqrt(v[i]/bias2) + eps)
void adam_apply(double step, std::span<const double> m, double bias1,
                std::span<const double> v, double bias2, double eps,
                std::span<double> theta);

// theta[i] -= step * g[i] / (sqrt(v[i]) + eps)
void rms_apply(double step, std::span<const double> g,
               std::span<const double> v, double eps,
               std::span<double> theta);

bool all_finite(std::span<const double> a);

namespace serial {

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double cosine(std::span<const double> a, std::span<const double> b);
double project_coefficient(std::span<const double> g, std::span<const double> d);
void project(std::span<const double> g, std::span<const double> d,
             std::span<double> out);
void reject(std::span<const double> g, std::span<const double> d,
            std::span<double> out);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void ema_update(double beta, std::span<const double> g, std::span<double> c);
void ema_update_squared(double beta, std::span<const double> g,
                        std::span<double> v);
void adam_apply(double step, std::span<const double> m, double bias1,
                std::span<const double> v, double bias2, double eps,
                std::span<double> theta);
void rms_apply(double step, std::span<const double> g,
               std::span<const double> v, double eps,
               std::span<double> theta);

}  // namespace serial

}  // namespace orthograd::linalg
