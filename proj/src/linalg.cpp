#include "orthograd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "orthograd/common.hpp"

namespace orthograd::linalg {

namespace {

inline double block_dot(const double* a, const double* b, std::size_t len) {
  double acc = 0.0;
  for (std::size_t i = 0; i < len; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  OG_CHECK(a.size() == b.size());
  const std::size_t n = a.size();
  const std::size_t nblocks = (n + kDotBlock - 1) / kDotBlock;
  if (n < kParallelCutoff) {
    double total = 0.0;
    for (std::size_t blk = 0; blk < nblocks; ++blk) {
      const std::size_t off = blk * kDotBlock;
      total += block_dot(a.data() + off, b.data() + off,
                         std::min(kDotBlock, n - off));
    }
    return total;
  }
  std::vector<double> partials(nblocks);
#pragma omp parallel for schedule(static)
  for (std::int64_t blk = 0; blk < static_cast<std::int64_t>(nblocks); ++blk) {
    const std::size_t off = static_cast<std::size_t>(blk) * kDotBlock;
    partials[static_cast<std::size_t>(blk)] =
        block_dot(a.data() + off, b.data() + off, std::min(kDotBlock, n - off));
  }
  double total = 0.0;
  for (double p : partials) total += p;
  return total;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na <= kZeroNorm || nb <= kZeroNorm) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double project_coefficient(std::span<const double> g, std::span<const double> d) {
  OG_CHECK(g.size() == d.size());
  const double dd = dot(d, d);
  if (dd <= kZeroNorm * kZeroNorm) return 0.0;
  return dot(g, d) / dd;
}

void project(std::span<const double> g, std::span<const double> d,
             std::span<double> out) {
  OG_CHECK(g.size() == d.size() && g.size() == out.size());
  const double coef = project_coefficient(g, d);
  const std::int64_t n = static_cast<std::int64_t>(g.size());
#pragma omp parallel for schedule(static) if (n >= static_cast<std::int64_t>(kParallelCutoff))
  for (std::int64_t i = 0; i < n; ++i) out[i] = coef * d[i];
}

void reject(std::span<const double> g, std::span<const double> d,
            std::span<double> out) {
  OG_CHECK(g.size() == d.size() && g.size() == out.size());
  const double coef = project_coefficient(g, d);
  const std::int64_t n = static_cast<std::int64_t>(g.size());
#pragma omp parallel for schedule(static) if (n >= static_cast<std::int64_t>(kParallelCutoff))
  for (std::int64_t i = 0; i < n; ++i) out[i] = g[i] - coef * d[i];
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  OG_CHECK(x.size() == y.size());
  const std::int64_t n = static_cast<std::int64_t>(x.size());
#pragma omp parallel for schedule(static) if (n >= static_cast<std::int64_t>(kParallelCutoff))
  for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void ema_update(double beta, std::span<const double> g, std::span<double> c) {
  OG_CHECK(g.size() == c.size());
  const std::int64_t n = static_cast<std::int64_t>(g.size());
#pragma omp parallel for schedule(static) if (n >= static_cast<std::int64_t>(kParallelCutoff))
  for (std::int64_t i = 0; i < n; ++i) c[i] = beta * c[i] + (1.0 - beta) * g[i];
}

void ema_update_squared(double beta, std::span<const double> g,
                        std::span<double> v) {
  OG_CHECK(g.size() == v.size());
  const std::int64_t n = static_cast<std::int64_t>(g.size());
#pragma omp parallel for schedule(static) if (n >= static_cast<std::int64_t>(kParallelCutoff))
  for (std::int64_t i = 0; i < n; ++i)
    v[i] = beta * v[i] + (1.0 - beta) * (g[i] * g[i]);
}

void adam_apply(double step, std::span<const double> m, double bias1,
                std::span<const double> v, double bias2, double eps,
                std::span<double> theta) {
  OG_CHECK(m.size() == v.size() && m.size() == theta.size());
  const std::int64_t n = static_cast<std::int64_t>(m.size());
#pragma omp parallel for schedule(static) if (n >= static_cast<std::int64_t>(kParallelCutoff))
  for (std::int64_t i = 0; i < n; ++i)
    theta[i] -= step * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
}

void rms_apply(double step, std::span<const double> g,
               std::span<const double> v, double eps,
               std::span<double> theta) {
  OG_CHECK(g.size() == v.size() && g.size() == theta.size());
  const std::int64_t n = static_cast<std::int64_t>(g.size());
#pragma omp parallel for schedule(static) if (n >= static_cast<std::int64_t>(kParallelCutoff))
  for (std::int64_t i = 0; i < n; ++i)
    theta[i] -= step * g[i] / (std::sqrt(v[i]) + eps);
}

bool all_finite(std::span<const double> a) {
  for (double x : a)
    if (!std::isfinite(x)) return false;
  return true;
}

namespace serial {

double dot(std::span<const double> a, std::span<const double> b) {
  OG_CHECK(a.size() == b.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na <= kZeroNorm || nb <= kZeroNorm) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double project_coefficient(std::span<const double> g, std::span<const double> d) {
  OG_CHECK(g.size() == d.size());
  const double dd = dot(d, d);
  if (dd <= kZeroNorm * kZeroNorm) return 0.0;
  return dot(g, d) / dd;
}

void project(std::span<const double> g, std::span<const double> d,
             std::span<double> out) {
  OG_CHECK(g.size() == d.size() && g.size() == out.size());
  const double coef = project_coefficient(g, d);
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = coef * d[i];
}

void reject(std::span<const double> g, std::span<const double> d,
            std::span<double> out) {
  OG_CHECK(g.size() == d.size() && g.size() == out.size());
  const double coef = project_coefficient(g, d);
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] - coef * d[i];
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  OG_CHECK(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void ema_update(double beta, std::span<const double> g, std::span<double> c) {
  OG_CHECK(g.size() == c.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    c[i] = beta * c[i] + (1.0 - beta) * g[i];
}

void ema_update_squared(double beta, std::span<const double> g,
                        std::span<double> v) {
  OG_CHECK(g.size() == v.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    v[i] = beta * v[i] + (1.0 - beta) * (g[i] * g[i]);
}

void adam_apply(double step, std::span<const double> m, double bias1,
                std::span<const double> v, double bias2, double eps,
                std::span<double> theta) {
  OG_CHECK(m.size() == v.size() && m.size() == theta.size());
  for (std::size_t i = 0; i < m.size(); ++i)
    theta[i] -= step * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
}

void rms_apply(double step, std::span<const double> g,
               std::span<const double> v, double eps,
               std::span<double> theta) {
  OG_CHECK(g.size() == v.size() && g.size() == theta.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    theta[i] -= step * g[i] / (std::sqrt(v[i]) + eps);
}

}  // namespace serial

}  // namespace orthograd::linalg
