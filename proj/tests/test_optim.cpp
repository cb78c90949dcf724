#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "orthograd/common.hpp"
#include "orthograd/linalg.hpp"
#include "orthograd/optim.hpp"

namespace la = orthograd::linalg;
namespace opt = orthograd::optim;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// A direction whose dot product with g is exactly zero under blockwise
// accumulation: swap-negate consecutive pairs so every pair of terms cancels
// before the running sum can absorb rounding.  Random per-pair sign flips
// and power-of-two scales keep the family varied without breaking exactness.
std::vector<double> exact_orthogonal(std::mt19937_64& rng,
                                     const std::vector<double>& g) {
  std::vector<double> c(g.size(), 0.0);
  for (std::size_t i = 0; i + 1 < g.size(); i += 2) {
    const double sign = (rng() & 1) ? 1.0 : -1.0;
    const double scale = std::ldexp(sign, static_cast<int>(rng() % 5) - 2);
    c[i] = scale * g[i + 1];
    c[i + 1] = -scale * g[i];
  }
  return c;
}

}  // namespace

TEST_CASE("orthogonalize removes the component along c") {
  auto s = opt::make_sgd(2, 1.0, true);
  s.ortho.c = {1.0, 0.0};
  const std::vector<double> g{1.0, 1.0};
  const auto u = opt::orthogonalize(s.ortho, g);
  CHECK(u[0] == 0.0);
  CHECK(u[1] == 1.0);
}

TEST_CASE("orthogonalize disabled is an exact copy") {
  std::mt19937_64 rng(3);
  auto s = opt::make_adamw(64, 1e-3);
  s.ortho.c = random_vec(rng, 64);
  const auto g = random_vec(rng, 64);
  CHECK(same_bits(opt::orthogonalize(s.ortho, g), g));
}

TEST_CASE("sgd step matches the hand-worked example") {
  auto s = opt::make_sgd(2, 1.0, true, 0.9);
  s.ortho.c = {1.0, 0.0};
  std::vector<double> theta{0.0, 0.0};
  const std::vector<double> g{1.0, 1.0};

  const auto r = opt::sgd_step(s, theta, g);
  REQUIRE(r.status == opt::StepStatus::ok);
  CHECK(theta[0] == 0.0);
  CHECK(theta[1] == -1.0);

  // The average tracks the raw gradient even though the step used u.
  CHECK(s.ortho.c[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.ortho.c[1] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(s.ortho.prev_raw[0] == 1.0);
  CHECK(s.ortho.prev_raw[1] == 1.0);
  CHECK(s.step == 1);
}

TEST_CASE("adamw first step matches the scalar derivation") {
  auto s = opt::make_adamw(1, 0.1);
  std::vector<double> theta{0.0};
  const std::vector<double> g{1.0};

  const auto r = opt::adamw_step(s, theta, g);
  REQUIRE(r.status == opt::StepStatus::ok);
  // With one step both bias corrections cancel the (1-beta) factors exactly,
  // so the update is -lr * 1 / (1 + eps).
  const double expected = -0.1 * (1.0 / (1.0 + 1e-8));
  CHECK(std::fabs(theta[0] - expected) <= 1e-12);
  CHECK(s.m[0] == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(s.v[0] == doctest::Approx(0.001).epsilon(1e-14));
}

TEST_CASE("adamw two steps reproduce a scalar replay with weight decay") {
  const double lr = 0.05, wd = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto s = opt::make_adamw(1, lr, wd, false, 0.9, b1, b2, eps);
  std::vector<double> theta{0.5};
  const double g1 = 0.7, g2 = -0.3;

  double et = 0.5, em = 0.0, ev = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? g1 : g2;
    et -= lr * wd * et;
    em = b1 * em + (1.0 - b1) * g;
    ev = b2 * ev + (1.0 - b2) * (g * g);
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
    et -= lr * (em / bc1) / (std::sqrt(ev / bc2) + eps);

    std::vector<double> gv{g};
    REQUIRE(opt::adamw_step(s, theta, gv).status == opt::StepStatus::ok);
    CHECK(std::fabs(theta[0] - et) <= 1e-15);
    CHECK(std::fabs(s.m[0] - em) <= 1e-15);
    CHECK(std::fabs(s.v[0] - ev) <= 1e-15);
  }
  CHECK(s.step == 2);
}

TEST_CASE("rmsprop step matches the scalar derivation") {
  auto s = opt::make_rmsprop(1, 0.1, 0.9, 0.0);
  std::vector<double> theta{0.0};
  const std::vector<double> g{2.0};

  REQUIRE(opt::rmsprop_step(s, theta, g).status == opt::StepStatus::ok);
  const double ev = 0.9 * 0.0 + 0.1 * (2.0 * 2.0);
  const double expected = -0.1 * 2.0 / std::sqrt(ev);
  CHECK(std::fabs(theta[0] - expected) <= 1e-12);
  CHECK(std::fabs(s.sq[0] - ev) <= 1e-15);
}

TEST_CASE("orthogonal rewrite is a bit-exact no-op on orthogonal gradients") {
  std::mt19937_64 rng(41);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 2 * (1 + rng() % 200);
    const auto g = random_vec(rng, n);
    const auto c = exact_orthogonal(rng, g);
    REQUIRE(la::dot(g, c) == 0.0);

    auto on = opt::make_adamw(n, 1e-3, 0.01, true);
    auto off = opt::make_adamw(n, 1e-3, 0.01, false);
    on.ortho.c = c;
    off.ortho.c = c;
    auto m_seed = random_vec(rng, n);
    for (auto& x : m_seed) x *= 0.01;
    on.m = m_seed;
    off.m = m_seed;

    auto theta_on = random_vec(rng, n);
    auto theta_off = theta_on;
    REQUIRE(opt::adamw_step(on, theta_on, g).status == opt::StepStatus::ok);
    REQUIRE(opt::adamw_step(off, theta_off, g).status == opt::StepStatus::ok);
    CHECK(same_bits(theta_on, theta_off));
    CHECK(same_bits(on.m, off.m));
    CHECK(same_bits(on.v, off.v));
  }
}

TEST_CASE("gradients aligned with c are annihilated") {
  std::mt19937_64 rng(43);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 1 + rng() % 500;
    auto c = random_vec(rng, n);
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = 3.0 * c[i];

    auto s = opt::make_sgd(n, 1.0, true);
    s.ortho.c = c;
    const auto u = opt::orthogonalize(s.ortho, g);
    CHECK(la::norm(u) <= 1e-10 * la::norm(g));

    auto theta = random_vec(rng, n);
    const auto before = theta;
    REQUIRE(opt::sgd_step(s, theta, g).status == opt::StepStatus::ok);
    std::vector<double> delta(n);
    for (std::size_t i = 0; i < n; ++i) delta[i] = theta[i] - before[i];
    CHECK(la::norm(delta) <= 1e-10 * la::norm(g));
  }
}

TEST_CASE("the gradient average sees raw gradients, never rewritten ones") {
  std::mt19937_64 rng(47);
  const std::size_t n = 32;
  auto s = opt::make_rmsprop(n, 1e-3, 0.9, 1e-8, true, 0.9);
  std::vector<double> theta = random_vec(rng, n);

  std::vector<double> expected_c(n, 0.0);
  std::vector<double> last_raw;
  for (int t = 0; t < 10; ++t) {
    const auto g = random_vec(rng, n);
    la::ema_update(0.9, g, expected_c);
    last_raw = g;
    REQUIRE(opt::rmsprop_step(s, theta, g).status == opt::StepStatus::ok);
  }
  CHECK(same_bits(s.ortho.c, expected_c));
  CHECK(same_bits(s.ortho.prev_raw, last_raw));
}

TEST_CASE("slower scale is one first, near zero on repeat, near two on reversal") {
  std::mt19937_64 rng(53);
  const std::size_t n = 64;
  const auto g = random_vec(rng, n);

  auto s = opt::make_adamw(n, 1e-3);
  std::vector<double> theta(n, 0.0);

  auto r1 = opt::adamw_step(s, theta, g, opt::LrScaleMode::slower);
  REQUIRE(r1.status == opt::StepStatus::ok);
  CHECK(r1.lr_scale == 1.0);

  auto r2 = opt::adamw_step(s, theta, g, opt::LrScaleMode::slower);
  REQUIRE(r2.status == opt::StepStatus::ok);
  CHECK(std::fabs(r2.lr_scale) <= 1e-12);

  auto flipped = g;
  for (auto& x : flipped) x = -x;
  auto r3 = opt::adamw_step(s, theta, flipped, opt::LrScaleMode::slower);
  REQUIRE(r3.status == opt::StepStatus::ok);
  CHECK(std::fabs(r3.lr_scale - 2.0) <= 1e-12);

  for (int rep = 0; rep < 50; ++rep) {
    const auto h = random_vec(rng, n);
    const double scale = opt::slower_scale(s.ortho, h);
    CHECK(scale >= 0.0);
    CHECK(scale <= 2.0);
  }
}

TEST_CASE("non-finite gradients are rejected without touching state") {
  std::mt19937_64 rng(59);
  const std::size_t n = 16;
  auto s = opt::make_adamw(n, 1e-3, 0.01, true);
  std::vector<double> theta = random_vec(rng, n);

  const auto g0 = random_vec(rng, n);
  REQUIRE(opt::adamw_step(s, theta, g0).status == opt::StepStatus::ok);

  const auto theta_before = theta;
  const auto m_before = s.m;
  const auto c_before = s.ortho.c;
  const auto step_before = s.step;

  auto bad = random_vec(rng, n);
  bad[7] = std::nan("");
  const auto r = opt::adamw_step(s, theta, bad);
  CHECK(r.status == opt::StepStatus::rejected_non_finite);
  CHECK(r.applied.empty());
  CHECK(same_bits(theta, theta_before));
  CHECK(same_bits(s.m, m_before));
  CHECK(same_bits(s.ortho.c, c_before));
  CHECK(s.step == step_before);
}

TEST_CASE("overflowing updates are rejected without touching state") {
  const std::size_t n = 4;
  auto s = opt::make_sgd(n, 1e308);
  std::vector<double> theta(n, 1e300);
  const std::vector<double> g(n, 1e10);

  const auto before = theta;
  const auto r = opt::sgd_step(s, theta, g);
  CHECK(r.status == opt::StepStatus::rejected_non_finite);
  CHECK(same_bits(theta, before));
  CHECK(s.step == 0);
}

TEST_CASE("per-block projection treats each block independently") {
  std::mt19937_64 rng(61);
  const std::vector<std::uint64_t> groups{3, 5, 8};
  const std::size_t n = 16;
  auto s = opt::make_sgd(n, 0.1, true, 0.9, groups);
  s.ortho.c = random_vec(rng, n);
  // Kill the middle block's direction: that slice must pass through intact.
  for (std::size_t i = 3; i < 8; ++i) s.ortho.c[i] = 0.0;

  const auto g = random_vec(rng, n);
  const auto u = opt::orthogonalize(s.ortho, g);

  std::vector<double> expected(n);
  std::size_t off = 0;
  for (std::uint64_t len : groups) {
    la::reject(std::span<const double>(g).subspan(off, len),
               std::span<const double>(s.ortho.c).subspan(off, len),
               std::span<double>(expected).subspan(off, len));
    off += len;
  }
  CHECK(same_bits(u, expected));
  for (std::size_t i = 3; i < 8; ++i) CHECK(u[i] == g[i]);
}

TEST_CASE("lr override replaces the stored rate for one step") {
  auto a = opt::make_sgd(1, 0.5);
  auto b = opt::make_sgd(1, 123.0);
  std::vector<double> ta{1.0}, tb{1.0};
  const std::vector<double> g{1.0};
  REQUIRE(opt::sgd_step(a, ta, g).status == opt::StepStatus::ok);
  REQUIRE(opt::sgd_step(b, tb, g, opt::LrScaleMode::none, 0.5).status ==
          opt::StepStatus::ok);
  CHECK(ta[0] == tb[0]);
}

TEST_CASE("state blobs round-trip bit for bit and keep stepping identically") {
  std::mt19937_64 rng(67);
  const std::size_t n = 24;

  auto adamw = opt::make_adamw(n, 3e-4, 0.02, true, 0.95);
  auto sgd = opt::make_sgd(n, 0.01, true, 0.5, {8, 16});
  auto rms = opt::make_rmsprop(n, 1e-3, 0.9, 1e-8, false);

  std::vector<double> ta = random_vec(rng, n), ts = ta, tr = ta;
  for (int t = 0; t < 5; ++t) {
    const auto g = random_vec(rng, n);
    REQUIRE(opt::adamw_step(adamw, ta, g).status == opt::StepStatus::ok);
    REQUIRE(opt::sgd_step(sgd, ts, g).status == opt::StepStatus::ok);
    REQUIRE(opt::rmsprop_step(rms, tr, g).status == opt::StepStatus::ok);
  }

  auto adamw2 = opt::deserialize_adamw(opt::serialize_state(adamw));
  CHECK(same_bits(adamw2.m, adamw.m));
  CHECK(same_bits(adamw2.v, adamw.v));
  CHECK(same_bits(adamw2.ortho.c, adamw.ortho.c));
  CHECK(same_bits(adamw2.ortho.prev_raw, adamw.ortho.prev_raw));
  CHECK(adamw2.step == adamw.step);
  CHECK(adamw2.lr == adamw.lr);
  CHECK(adamw2.weight_decay == adamw.weight_decay);
  CHECK(adamw2.ortho.enabled == adamw.ortho.enabled);
  CHECK(adamw2.ortho.beta == adamw.ortho.beta);

  auto sgd2 = opt::deserialize_sgd(opt::serialize_state(sgd));
  CHECK(sgd2.ortho.group_sizes == sgd.ortho.group_sizes);
  CHECK(same_bits(sgd2.ortho.c, sgd.ortho.c));

  auto rms2 = opt::deserialize_rmsprop(opt::serialize_state(rms));
  CHECK(same_bits(rms2.sq, rms.sq));

  // Both copies must continue producing identical trajectories.
  auto ta2 = ta, ts2 = ts, tr2 = tr;
  for (int t = 0; t < 5; ++t) {
    const auto g = random_vec(rng, n);
    opt::adamw_step(adamw, ta, g);
    opt::adamw_step(adamw2, ta2, g);
    opt::sgd_step(sgd, ts, g);
    opt::sgd_step(sgd2, ts2, g);
    opt::rmsprop_step(rms, tr, g);
    opt::rmsprop_step(rms2, tr2, g);
  }
  CHECK(same_bits(ta, ta2));
  CHECK(same_bits(ts, ts2));
  CHECK(same_bits(tr, tr2));
}

TEST_CASE("decoding rejects corrupt payloads") {
  auto s = opt::make_adamw(8, 1e-3);
  auto blob = opt::serialize_state(s);

  SUBCASE("truncated") {
    blob.pop_back();
    CHECK_THROWS_AS(opt::deserialize_state(blob), orthograd::DecodeError);
  }
  SUBCASE("trailing bytes") {
    blob.push_back(0);
    CHECK_THROWS_AS(opt::deserialize_state(blob), orthograd::DecodeError);
  }
  SUBCASE("bad magic") {
    blob[0] ^= 0xFF;
    CHECK_THROWS_AS(opt::deserialize_state(blob), orthograd::DecodeError);
  }
  SUBCASE("unsupported version") {
    blob[4] = 99;
    CHECK_THROWS_AS(opt::deserialize_state(blob), orthograd::DecodeError);
  }
  SUBCASE("kind mismatch") {
    try {
      opt::deserialize_sgd(blob);
      FAIL("expected a kind mismatch");
    } catch (const orthograd::DecodeError& e) {
      CHECK(std::string(e.what()).find("kind mismatch") != std::string::npos);
    }
  }
  SUBCASE("empty") {
    CHECK_THROWS_AS(opt::deserialize_state(std::vector<std::uint8_t>{}),
                    orthograd::DecodeError);
  }
}
