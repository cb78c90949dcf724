#include "orthograd/optim.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "orthograd/bytes.hpp"
#include "orthograd/common.hpp"
#include "orthograd/linalg.hpp"

namespace orthograd::optim {

namespace la = linalg;

namespace {

constexpr std::uint32_t kMagic = 0x504F474F;  // "OGOP" little-endian
constexpr std::uint32_t kFormatVersion = 1;

void check_groups(std::size_t n, const std::vector<std::uint64_t>& groups) {
  if (groups.empty()) return;
  std::uint64_t total = 0;
  for (std::uint64_t g : groups) {
    OG_CHECK(g > 0);
    total += g;
  }
  OG_CHECK(total == n);
}

OrthoState make_ortho(std::size_t n, bool enabled, double beta,
                      std::vector<std::uint64_t> group_sizes) {
  OG_CHECK(n > 0);
  OG_CHECK(beta >= 0.0 && beta < 1.0);
  check_groups(n, group_sizes);
  OrthoState o;
  o.enabled = enabled;
  o.beta = beta;
  o.c.assign(n, 0.0);
  o.prev_raw.assign(n, 0.0);
  o.group_sizes = std::move(group_sizes);
  return o;
}

// Commit the bookkeeping every optimizer shares once a step is accepted:
// the raw-gradient EMA, the previous raw gradient, and the step counter.
void commit_ortho(OrthoState& o, std::span<const double> g, std::uint64_t& step) {
  la::ema_update(o.beta, g, o.c);
  o.prev_raw.assign(g.begin(), g.end());
  ++step;
}

}  // namespace

SgdState make_sgd(std::size_t n, double lr, bool ortho_enabled, double beta,
                  std::vector<std::uint64_t> group_sizes) {
  OG_CHECK(std::isfinite(lr) && lr >= 0.0);
  SgdState s;
  s.lr = lr;
  s.ortho = make_ortho(n, ortho_enabled, beta, std::move(group_sizes));
  return s;
}

AdamWState make_adamw(std::size_t n, double lr, double weight_decay,
                      bool ortho_enabled, double beta, double beta1,
                      double beta2, double eps,
                      std::vector<std::uint64_t> group_sizes) {
  OG_CHECK(std::isfinite(lr) && lr >= 0.0);
  OG_CHECK(weight_decay >= 0.0);
  OG_CHECK(beta1 >= 0.0 && beta1 < 1.0);
  OG_CHECK(beta2 >= 0.0 && beta2 < 1.0);
  OG_CHECK(eps >= 0.0);
  AdamWState s;
  s.lr = lr;
  s.weight_decay = weight_decay;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.ortho = make_ortho(n, ortho_enabled, beta, std::move(group_sizes));
  return s;
}

RmsPropState make_rmsprop(std::size_t n, double lr, double alpha, double eps,
                          bool ortho_enabled, double beta,
                          std::vector<std::uint64_t> group_sizes) {
  OG_CHECK(std::isfinite(lr) && lr >= 0.0);
  OG_CHECK(alpha >= 0.0 && alpha < 1.0);
  OG_CHECK(eps >= 0.0);
  RmsPropState s;
  s.lr = lr;
  s.alpha = alpha;
  s.eps = eps;
  s.sq.assign(n, 0.0);
  s.ortho = make_ortho(n, ortho_enabled, beta, std::move(group_sizes));
  return s;
}

std::vector<double> orthogonalize(const OrthoState& o, std::span<const double> g) {
  OG_CHECK(g.size() == o.c.size());
  std::vector<double> u(g.begin(), g.end());
  if (!o.enabled) return u;
  if (o.group_sizes.empty()) {
    la::reject(g, o.c, u);
    return u;
  }
  std::size_t off = 0;
  for (std::uint64_t len : o.group_sizes) {
    la::reject(g.subspan(off, len),
               std::span<const double>(o.c).subspan(off, len),
               std::span<double>(u).subspan(off, len));
    off += len;
  }
  OG_CHECK(off == g.size());
  return u;
}

double slower_scale(const OrthoState& o, std::span<const double> g) {
  return 1.0 - la::cosine(g, o.prev_raw);
}

StepResult sgd_step(SgdState& s, std::span<double> theta,
                    std::span<const double> g, LrScaleMode mode,
                    std::optional<double> lr_override) {
  OG_CHECK(theta.size() == g.size() && g.size() == s.ortho.c.size());
  if (!la::all_finite(g)) return {StepStatus::rejected_non_finite, 1.0, {}};

  const double scale = mode == LrScaleMode::slower ? slower_scale(s.ortho, g) : 1.0;
  const double lr = lr_override.value_or(s.lr) * scale;

  std::vector<double> u = orthogonalize(s.ortho, g);
  std::vector<double> theta_new(theta.begin(), theta.end());
  la::axpy(-lr, u, theta_new);
  if (!la::all_finite(theta_new)) return {StepStatus::rejected_non_finite, scale, {}};

  std::copy(theta_new.begin(), theta_new.end(), theta.begin());
  commit_ortho(s.ortho, g, s.step);
  return {StepStatus::ok, scale, std::move(u)};
}

StepResult adamw_step(AdamWState& s, std::span<double> theta,
                      std::span<const double> g, LrScaleMode mode,
                      std::optional<double> lr_override) {
  OG_CHECK(theta.size() == g.size() && g.size() == s.ortho.c.size());
  if (!la::all_finite(g)) return {StepStatus::rejected_non_finite, 1.0, {}};

  const double scale = mode == LrScaleMode::slower ? slower_scale(s.ortho, g) : 1.0;
  const double lr = lr_override.value_or(s.lr) * scale;

  std::vector<double> u = orthogonalize(s.ortho, g);

  // Decoupled weight decay pulls on the pre-update parameters.
  std::vector<double> theta_new(theta.begin(), theta.end());
  if (s.weight_decay != 0.0) la::axpy(-lr * s.weight_decay, theta_new, theta_new);

  std::vector<double> m_new = s.m;
  std::vector<double> v_new = s.v;
  la::ema_update(s.beta1, u, m_new);
  la::ema_update_squared(s.beta2, u, v_new);

  const auto t = static_cast<double>(s.step + 1);
  const double bias1 = 1.0 - std::pow(s.beta1, t);
  const double bias2 = 1.0 - std::pow(s.beta2, t);
  la::adam_apply(lr, m_new, bias1, v_new, bias2, s.eps, theta_new);

  if (!la::all_finite(theta_new) || !la::all_finite(m_new) || !la::all_finite(v_new))
    return {StepStatus::rejected_non_finite, scale, {}};

  std::copy(theta_new.begin(), theta_new.end(), theta.begin());
  s.m = std::move(m_new);
  s.v = std::move(v_new);
  commit_ortho(s.ortho, g, s.step);
  return {StepStatus::ok, scale, std::move(u)};
}

StepResult rmsprop_step(RmsPropState& s, std::span<double> theta,
                        std::span<const double> g,
                        std::optional<double> lr_override) {
  OG_CHECK(theta.size() == g.size() && g.size() == s.ortho.c.size());
  if (!la::all_finite(g)) return {StepStatus::rejected_non_finite, 1.0, {}};

  const double lr = lr_override.value_or(s.lr);

  std::vector<double> u = orthogonalize(s.ortho, g);
  std::vector<double> sq_new = s.sq;
  la::ema_update_squared(s.alpha, u, sq_new);
  std::vector<double> theta_new(theta.begin(), theta.end());
  la::rms_apply(lr, u, sq_new, s.eps, theta_new);

  if (!la::all_finite(theta_new) || !la::all_finite(sq_new))
    return {StepStatus::rejected_non_finite, 1.0, {}};

  std::copy(theta_new.begin(), theta_new.end(), theta.begin());
  s.sq = std::move(sq_new);
  commit_ortho(s.ortho, g, s.step);
  return {StepStatus::ok, 1.0, std::move(u)};
}

namespace {

void put_ortho(bytes::Writer& w, const OrthoState& o) {
  w.f64_span(o.c);
  w.f64_span(o.prev_raw);
  w.u8(o.enabled ? 1 : 0);
  w.f64(o.beta);
  w.u64(o.group_sizes.size());
  for (std::uint64_t g : o.group_sizes) w.u64(g);
}

OrthoState get_ortho(bytes::Reader& r, std::size_t n) {
  OrthoState o;
  o.c.resize(n);
  r.f64_into(o.c);
  o.prev_raw.resize(n);
  r.f64_into(o.prev_raw);
  o.enabled = r.u8() != 0;
  o.beta = r.f64();
  const std::uint64_t ngroups = r.u64();
  if (ngroups > n) throw DecodeError("corrupt projection group table");
  o.group_sizes.resize(ngroups);
  std::uint64_t total = 0;
  for (auto& g : o.group_sizes) {
    g = r.u64();
    total += g;
  }
  if (ngroups > 0 && total != n)
    throw DecodeError("projection groups sum to " + std::to_string(total) +
                      ", expected " + std::to_string(n));
  return o;
}

void put_header(bytes::Writer& w, OptimizerKind kind, std::uint64_t n) {
  w.u32(kMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(kind));
  w.u64(n);
}

struct Header {
  OptimizerKind kind;
  std::size_t n;
};

Header get_header(bytes::Reader& r) {
  if (r.u32() != kMagic) throw DecodeError("bad optimizer-state magic");
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw DecodeError("unsupported optimizer-state version " +
                      std::to_string(version));
  const std::uint32_t kind = r.u32();
  if (kind < 1 || kind > 3)
    throw DecodeError("unknown optimizer kind " + std::to_string(kind));
  const std::uint64_t n = r.u64();
  if (n == 0) throw DecodeError("optimizer state with empty parameter vector");
  return {static_cast<OptimizerKind>(kind), static_cast<std::size_t>(n)};
}

const char* kind_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adamw: return "adamw";
    case OptimizerKind::rmsprop: return "rmsprop";
  }
  return "?";
}

}  // namespace

std::vector<std::uint8_t> serialize_state(const SgdState& s) {
  bytes::Writer w;
  put_header(w, OptimizerKind::sgd, s.ortho.c.size());
  put_ortho(w, s.ortho);
  w.f64(s.lr);
  w.u64(s.step);
  return w.take();
}

std::vector<std::uint8_t> serialize_state(const AdamWState& s) {
  bytes::Writer w;
  put_header(w, OptimizerKind::adamw, s.ortho.c.size());
  put_ortho(w, s.ortho);
  w.f64_span(s.m);
  w.f64_span(s.v);
  w.f64(s.lr);
  w.f64(s.weight_decay);
  w.f64(s.beta1);
  w.f64(s.beta2);
  w.f64(s.eps);
  w.u64(s.step);
  return w.take();
}

std::vector<std::uint8_t> serialize_state(const RmsPropState& s) {
  bytes::Writer w;
  put_header(w, OptimizerKind::rmsprop, s.ortho.c.size());
  put_ortho(w, s.ortho);
  w.f64_span(s.sq);
  w.f64(s.lr);
  w.f64(s.alpha);
  w.f64(s.eps);
  w.u64(s.step);
  return w.take();
}

OptimizerKind peek_kind(std::span<const std::uint8_t> blob) {
  bytes::Reader r(blob);
  return get_header(r).kind;
}

AnyState deserialize_state(std::span<const std::uint8_t> blob) {
  bytes::Reader r(blob);
  const Header h = get_header(r);
  switch (h.kind) {
    case OptimizerKind::sgd: {
      SgdState s;
      s.ortho = get_ortho(r, h.n);
      s.lr = r.f64();
      s.step = r.u64();
      r.expect_end();
      return s;
    }
    case OptimizerKind::adamw: {
      AdamWState s;
      s.ortho = get_ortho(r, h.n);
      s.m.resize(h.n);
      r.f64_into(s.m);
      s.v.resize(h.n);
      r.f64_into(s.v);
      s.lr = r.f64();
      s.weight_decay = r.f64();
      s.beta1 = r.f64();
      s.beta2 = r.f64();
      s.eps = r.f64();
      s.step = r.u64();
      r.expect_end();
      return s;
    }
    case OptimizerKind::rmsprop: {
      RmsPropState s;
      s.ortho = get_ortho(r, h.n);
      s.sq.resize(h.n);
      r.f64_into(s.sq);
      s.lr = r.f64();
      s.alpha = r.f64();
      s.eps = r.f64();
      s.step = r.u64();
      r.expect_end();
      return s;
    }
  }
  throw DecodeError("unknown optimizer kind");
}

namespace {

template <typename T>
T expect_kind(std::span<const std::uint8_t> blob, OptimizerKind want) {
  const OptimizerKind got = peek_kind(blob);
  if (got != want)
    throw DecodeError(std::string("optimizer kind mismatch: payload holds ") +
                      kind_name(got) + ", expected " + kind_name(want));
  return std::get<T>(deserialize_state(blob));
}

}  // namespace

SgdState deserialize_sgd(std::span<const std::uint8_t> blob) {
  return expect_kind<SgdState>(blob, OptimizerKind::sgd);
}

AdamWState deserialize_adamw(std::span<const std::uint8_t> blob) {
  return expect_kind<AdamWState>(blob, OptimizerKind::adamw);
}

RmsPropState deserialize_rmsprop(std::span<const std::uint8_t> blob) {
  return expect_kind<RmsPropState>(blob, OptimizerKind::rmsprop);
}

}  // namespace orthograd::optim
