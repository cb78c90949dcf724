#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "orthograd/bytes.hpp"
#include "orthograd/common.hpp"
#include "orthograd/streams.hpp"

namespace st = orthograd::streams;

namespace {

st::StreamConfig small_config() {
  st::StreamConfig cfg;
  cfg.n_sources = 4;
  cfg.steps_per_source = 5;
  cfg.input_dim = 3;
  cfg.output_dim = 2;
  cfg.rho = 0.5;
  cfg.drift = 0.01;
  cfg.noise_sigma = 0.1;
  cfg.batch_size = 2;
  cfg.seed = 12345;
  return cfg;
}

std::string temp_path(const char* name) {
  return std::string("/tmp/orthograd_streams_") + name;
}

}  // namespace

TEST_CASE("rho one freezes every trajectory at its first sample") {
  auto cfg = small_config();
  cfg.rho = 1.0;
  cfg.steps_per_source = 20;
  st::Stream s(cfg);
  for (std::uint32_t src = 0; src < cfg.n_sources; ++src) {
    const auto x0 = s.input_at(src, 0);
    for (std::uint32_t t = 1; t < cfg.steps_per_source; ++t) {
      const auto xt = s.input_at(src, t);
      for (std::size_t j = 0; j < xt.size(); ++j) CHECK(xt[j] == x0[j]);
    }
  }
}

TEST_CASE("rho zero redraws inputs every step") {
  auto cfg = small_config();
  cfg.rho = 0.0;
  st::Stream s(cfg);
  const auto a = s.input_at(0, 0);
  const auto b = s.input_at(0, 1);
  bool differ = false;
  for (std::size_t j = 0; j < a.size(); ++j) differ |= a[j] != b[j];
  CHECK(differ);
}

TEST_CASE("input statistics match the stationary law") {
  st::StreamConfig cfg;
  cfg.n_sources = 1;
  cfg.steps_per_source = 4000;
  cfg.input_dim = 4;
  cfg.output_dim = 1;
  cfg.batch_size = 1;
  cfg.seed = 777;

  for (double rho : {0.0, 0.99}) {
    cfg.rho = rho;
    st::Stream s(cfg);
    // Per-dimension mean, variance, and lag-1 autocorrelation.
    for (std::uint32_t j = 0; j < cfg.input_dim; ++j) {
      double mean = 0.0, var = 0.0, lag = 0.0;
      const std::uint32_t T = cfg.steps_per_source;
      for (std::uint32_t t = 0; t < T; ++t) mean += s.input_at(0, t)[j];
      mean /= T;
      for (std::uint32_t t = 0; t < T; ++t) {
        const double d = s.input_at(0, t)[j] - mean;
        var += d * d;
      }
      var /= T;
      for (std::uint32_t t = 1; t < T; ++t)
        lag += (s.input_at(0, t)[j] - mean) * (s.input_at(0, t - 1)[j] - mean);
      lag /= (T - 1) * var;

      CHECK(std::fabs(mean) < 0.15);
      CHECK(var > 0.6);
      CHECK(var < 1.5);
      if (rho == 0.0) CHECK(std::fabs(lag) < 0.1);
      if (rho == 0.99) CHECK(lag > 0.95);
    }
  }
}

TEST_CASE("drift rotates the truth with the expected period") {
  // Freeze the inputs and remove noise; then a full 2*pi of accumulated
  // drift must reproduce the original targets, and half a period must
  // negate them (a rotation by pi maps x to -x when dimensions pair up).
  st::StreamConfig cfg;
  cfg.n_sources = 2;
  cfg.steps_per_source = 9;
  cfg.input_dim = 4;
  cfg.output_dim = 3;
  cfg.rho = 1.0;
  cfg.noise_sigma = 0.0;
  cfg.drift = std::numbers::pi / 4.0;  // period 8
  cfg.batch_size = 1;
  cfg.seed = 4242;
  st::Stream s(cfg);

  for (std::uint32_t src = 0; src < cfg.n_sources; ++src) {
    const auto y0 = s.target_at(src, 0);
    const auto y_half = s.target_at(src, 4);
    const auto y_full = s.target_at(src, 8);
    double scale = 0.0;
    for (double v : y0) scale = std::max(scale, std::fabs(v));
    for (std::size_t k = 0; k < y0.size(); ++k) {
      CHECK(std::fabs(y_full[k] - y0[k]) <= 1e-10 * std::max(1.0, scale));
      CHECK(std::fabs(y_half[k] + y0[k]) <= 1e-10 * std::max(1.0, scale));
    }
  }
}

TEST_CASE("zero drift and zero noise make frozen targets constant") {
  auto cfg = small_config();
  cfg.rho = 1.0;
  cfg.drift = 0.0;
  cfg.noise_sigma = 0.0;
  st::Stream s(cfg);
  const auto y0 = s.target_at(1, 0);
  for (std::uint32_t t = 1; t < cfg.steps_per_source; ++t) {
    const auto yt = s.target_at(1, t);
    for (std::size_t k = 0; k < yt.size(); ++k) CHECK(yt[k] == y0[k]);
  }
}

TEST_CASE("targets follow the per-source map") {
  auto cfg = small_config();
  cfg.drift = 0.0;
  cfg.noise_sigma = 0.0;
  st::Stream s(cfg);
  for (std::uint32_t src = 0; src < cfg.n_sources; ++src) {
    const auto map = s.source_map(src);
    for (std::uint32_t t = 0; t < cfg.steps_per_source; ++t) {
      const auto x = s.input_at(src, t);
      const auto y = s.target_at(src, t);
      for (std::uint32_t k = 0; k < cfg.output_dim; ++k) {
        double acc = 0.0;
        for (std::uint32_t j = 0; j < cfg.input_dim; ++j)
          acc += map[k * cfg.input_dim + j] * x[j];
        CHECK(y[k] == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("streams with different seeds share the base map") {
  auto cfg_a = small_config();
  cfg_a.input_dim = 16;
  cfg_a.output_dim = 8;
  auto cfg_b = cfg_a;
  cfg_b.seed = 999;
  st::Stream a(cfg_a), b(cfg_b);

  const auto base = st::Stream::base_map(cfg_a.input_dim, cfg_a.output_dim);
  double base_norm = 0.0;
  for (double v : base) base_norm += v * v;

  // Per-source maps deviate from the shared base by the bounded spread, so
  // the deviation stays well below the base itself on average.
  double dev_a = 0.0, dev_b = 0.0;
  for (std::uint32_t s = 0; s < cfg_a.n_sources; ++s) {
    const auto ma = a.source_map(s);
    const auto mb = b.source_map(s);
    bool differ = false;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      dev_a += (ma[i] - base[i]) * (ma[i] - base[i]);
      dev_b += (mb[i] - base[i]) * (mb[i] - base[i]);
      differ |= ma[i] != mb[i];
    }
    CHECK(differ);  // deviations are seed-specific
  }
  dev_a /= cfg_a.n_sources;
  dev_b /= cfg_a.n_sources;
  CHECK(dev_a < base_norm);
  CHECK(dev_b < base_norm);
}

TEST_CASE("sequential_time batches never span sources") {
  auto cfg = small_config();
  cfg.n_sources = 3;
  cfg.steps_per_source = 7;
  cfg.batch_size = 3;
  st::Stream s(cfg);
  CHECK(s.batches_per_epoch() == 3 * 3);

  std::vector<std::size_t> sizes;
  while (auto b = s.next_batch()) {
    sizes.push_back(b->size);
    for (std::size_t i = 0; i < b->size; ++i) {
      CHECK(b->source_ids[i] == b->source_ids[0]);
      if (i > 0) CHECK(b->time_indices[i] == b->time_indices[i - 1] + 1);
    }
  }
  REQUIRE(sizes.size() == 9);
  for (std::size_t k = 0; k < 9; ++k) CHECK(sizes[k] == (k % 3 == 2 ? 1 : 3));
}

TEST_CASE("sequential_video advances time within a source group") {
  auto cfg = small_config();
  cfg.n_sources = 5;
  cfg.steps_per_source = 4;
  cfg.batch_size = 2;
  cfg.strategy = st::BatchStrategy::sequential_video;
  st::Stream s(cfg);
  CHECK(s.batches_per_epoch() == 3 * 4);

  std::uint64_t index = 0;
  while (auto b = s.next_batch()) {
    const std::uint64_t group = index / 4;
    const std::uint32_t t = static_cast<std::uint32_t>(index % 4);
    const std::size_t expected_size = group == 2 ? 1 : 2;
    CHECK(b->size == expected_size);
    for (std::size_t i = 0; i < b->size; ++i) {
      CHECK(b->time_indices[i] == t);
      CHECK(b->source_ids[i] == group * 2 + i);
    }
    ++index;
  }
  CHECK(index == 12);
}

TEST_CASE("shuffled epochs cover every pair once in a fresh order") {
  auto cfg = small_config();
  cfg.strategy = st::BatchStrategy::shuffled;
  cfg.batch_size = 6;
  st::Stream s(cfg);
  CHECK(s.batches_per_epoch() == (20 + 5) / 6);  // ceil(20/6) = 4

  auto collect = [&]() {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> order;
    while (auto b = s.next_batch())
      for (std::size_t i = 0; i < b->size; ++i)
        order.emplace_back(b->source_ids[i], b->time_indices[i]);
    return order;
  };

  const auto first = collect();
  CHECK(first.size() == 20);
  std::set<std::pair<std::uint32_t, std::uint32_t>> unique(first.begin(),
                                                           first.end());
  CHECK(unique.size() == 20);

  s.advance_epoch();
  const auto second = collect();
  CHECK(second.size() == 20);
  CHECK(first != second);  // new permutation
  CHECK(std::set<std::pair<std::uint32_t, std::uint32_t>>(
            second.begin(), second.end()) == unique);
}

TEST_CASE("all strategies emit the same sample multiset") {
  const auto cfg = small_config();
  std::vector<std::uint64_t> hashes;
  for (auto strat : {st::BatchStrategy::sequential_time,
                     st::BatchStrategy::sequential_video,
                     st::BatchStrategy::shuffled}) {
    auto c = cfg;
    c.strategy = strat;
    st::Stream s(c);
    hashes.push_back(st::epoch_multiset_hash(s));
  }
  CHECK(hashes[0] == hashes[1]);
  CHECK(hashes[0] == hashes[2]);

  // Different data must change the digest.
  auto c = cfg;
  c.seed = 54321;
  st::Stream s(c);
  CHECK(st::epoch_multiset_hash(s) != hashes[0]);
}

TEST_CASE("stride-1 overlap slides the window one step at a time") {
  st::StreamConfig cfg;
  cfg.n_sources = 1;
  cfg.steps_per_source = 5;
  cfg.input_dim = 2;
  cfg.output_dim = 1;
  cfg.batch_size = 3;
  cfg.stride1_overlap = true;
  cfg.seed = 7;
  st::Stream s(cfg);
  CHECK(s.batches_per_epoch() == 3);

  std::uint32_t start = 0;
  while (auto b = s.next_batch()) {
    REQUIRE(b->size == 3);
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(b->time_indices[i] == start + i);
    ++start;
  }
  CHECK(start == 3);
}

TEST_CASE("seek reproduces the stream mid-epoch") {
  auto cfg = small_config();
  cfg.strategy = st::BatchStrategy::shuffled;
  st::Stream a(cfg);
  a.advance_epoch();  // epoch 1
  a.next_batch();
  a.next_batch();
  const auto want = a.next_batch();
  REQUIRE(want.has_value());

  st::Stream b(cfg);
  b.seek(1, 2);
  const auto got = b.next_batch();
  REQUIRE(got.has_value());
  CHECK(got->inputs == want->inputs);
  CHECK(got->targets == want->targets);
  CHECK(got->source_ids == want->source_ids);
  CHECK(got->time_indices == want->time_indices);
}

TEST_CASE("replay files reproduce the live stream exactly") {
  auto cfg = small_config();
  const std::string path = temp_path("replay.bin");
  // 13 batches with 10 per epoch forces a rollover mid-file.
  st::dump_replay(cfg, 13, path);

  st::ReplayReader reader(path);
  CHECK(reader.batches_per_epoch() == 13);
  CHECK(reader.input_dim() == cfg.input_dim);
  CHECK(reader.output_dim() == cfg.output_dim);

  st::Stream live(cfg);
  for (int i = 0; i < 13; ++i) {
    auto want = live.next_batch();
    if (!want) {
      live.advance_epoch();
      want = live.next_batch();
    }
    const auto got = reader.next_batch();
    REQUIRE(got.has_value());
    CHECK(got->inputs == want->inputs);
    CHECK(got->targets == want->targets);
    CHECK(got->source_ids == want->source_ids);
    CHECK(got->time_indices == want->time_indices);
  }
  CHECK(!reader.next_batch().has_value());
  std::remove(path.c_str());
}

TEST_CASE("a one-epoch replay preserves the sample multiset") {
  auto cfg = small_config();
  st::Stream live(cfg);
  const auto live_hash = st::epoch_multiset_hash(live);

  const std::string path = temp_path("epoch.bin");
  st::dump_replay(cfg, st::Stream(cfg).batches_per_epoch(), path);
  st::ReplayReader reader(path);
  CHECK(st::epoch_multiset_hash(reader) == live_hash);
  std::remove(path.c_str());
}

TEST_CASE("corrupt replay files are rejected") {
  auto cfg = small_config();
  const std::string path = temp_path("corrupt.bin");
  st::dump_replay(cfg, 3, path);

  auto blob = orthograd::bytes::read_file(path);
  SUBCASE("truncated") {
    blob.resize(blob.size() - 5);
    orthograd::bytes::write_file(path, blob);
    CHECK_THROWS_AS(st::ReplayReader{path}, orthograd::DecodeError);
  }
  SUBCASE("bad magic") {
    blob[1] ^= 0xFF;
    orthograd::bytes::write_file(path, blob);
    CHECK_THROWS_AS(st::ReplayReader{path}, orthograd::DecodeError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(st::ReplayReader{temp_path("nope.bin")},
                    orthograd::DecodeError);
  }
  std::remove(path.c_str());
}

TEST_CASE("config validation reports every problem at once") {
  st::StreamConfig cfg;
  cfg.n_sources = 0;
  cfg.rho = 1.5;
  cfg.batch_size = 0;
  try {
    st::validate(cfg);
    FAIL("expected a config error");
  } catch (const orthograd::ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("n_sources") != std::string::npos);
    CHECK(msg.find("rho") != std::string::npos);
    CHECK(msg.find("batch_size") != std::string::npos);
  }

  auto bad = small_config();
  bad.stride1_overlap = true;
  bad.strategy = st::BatchStrategy::shuffled;
  CHECK_THROWS_AS(st::validate(bad), orthograd::ConfigError);
}
