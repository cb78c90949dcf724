#include "orthograd/streams.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "orthograd/bytes.hpp"
#include "orthograd/common.hpp"
#include "orthograd/rng.hpp"

namespace orthograd::streams {

namespace {

// The task family identity: the base map is derived from this fixed key and
// the dimensions, so it is shared by every stream regardless of seed.
constexpr std::uint64_t kTaskFamilyKey = 0x6F7274686F677261ULL;

constexpr double kBaseMapScale = 1.0;
constexpr double kSourceMapSpread = 0.5;

// Purpose tags for deriving independent sub-streams from one seed.
constexpr std::uint64_t kTagInputs = 1;
constexpr std::uint64_t kTagNoise = 2;
constexpr std::uint64_t kTagMapDelta = 3;
constexpr std::uint64_t kTagShuffle = 4;

constexpr std::uint32_t kReplayMagic = 0x5052474F;  // "OGRP" little-endian
constexpr std::uint32_t kReplayVersion = 1;

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

void rotate_pairs(const double* x, std::size_t n, double angle, double* out) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  std::size_t i = 0;
  for (; i + 1 < n; i += 2) {
    out[i] = c * x[i] - s * x[i + 1];
    out[i + 1] = s * x[i] + c * x[i + 1];
  }
  if (i < n) out[i] = x[i];
}

}  // namespace

void validate(const StreamConfig& cfg) {
  std::vector<std::string> errs;
  if (cfg.n_sources == 0) errs.push_back("n_sources must be >= 1");
  if (cfg.steps_per_source == 0) errs.push_back("steps_per_source must be >= 1");
  if (cfg.input_dim == 0) errs.push_back("input_dim must be >= 1");
  if (cfg.output_dim == 0) errs.push_back("output_dim must be >= 1");
  if (!(cfg.rho >= 0.0 && cfg.rho <= 1.0))
    errs.push_back("rho must lie in [0, 1]");
  if (!(cfg.noise_sigma >= 0.0) || !std::isfinite(cfg.noise_sigma))
    errs.push_back("noise_sigma must be finite and >= 0");
  if (!std::isfinite(cfg.drift)) errs.push_back("drift must be finite");
  if (cfg.batch_size == 0) errs.push_back("batch_size must be >= 1");
  if (cfg.stride1_overlap) {
    if (cfg.strategy != BatchStrategy::sequential_time)
      errs.push_back("stride1_overlap requires the sequential_time strategy");
    else if (cfg.steps_per_source < cfg.batch_size)
      errs.push_back("stride1_overlap needs steps_per_source >= batch_size");
  }
  if (!errs.empty()) {
    std::string msg = "invalid stream config:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
}

Stream::Stream(StreamConfig cfg) : cfg_(cfg) {
  validate(cfg_);
  build_table();
  if (cfg_.strategy == BatchStrategy::shuffled) build_permutation();
}

std::uint64_t Stream::samples_per_epoch() const {
  return static_cast<std::uint64_t>(cfg_.n_sources) * cfg_.steps_per_source;
}

std::uint64_t Stream::batches_per_epoch() const {
  const std::uint64_t S = cfg_.n_sources;
  const std::uint64_t T = cfg_.steps_per_source;
  const std::uint64_t B = cfg_.batch_size;
  switch (cfg_.strategy) {
    case BatchStrategy::sequential_time:
      return cfg_.stride1_overlap ? S * (T - B + 1) : S * ceil_div(T, B);
    case BatchStrategy::sequential_video:
      return ceil_div(S, B) * T;
    case BatchStrategy::shuffled:
      return ceil_div(S * T, B);
  }
  return 0;
}

std::vector<double> Stream::base_map(std::uint32_t input_dim,
                                     std::uint32_t output_dim) {
  std::vector<double> base(static_cast<std::size_t>(output_dim) * input_dim);
  const std::uint64_t key =
      rng::derive(rng::derive(kTaskFamilyKey, input_dim), output_dim);
  const double scale = kBaseMapScale / std::sqrt(static_cast<double>(input_dim));
  for (std::size_t i = 0; i < base.size(); ++i)
    base[i] = scale * rng::normal(key, i);
  return base;
}

std::vector<double> Stream::source_map(std::uint32_t source) const {
  auto map = base_map(cfg_.input_dim, cfg_.output_dim);
  const std::uint64_t dkey =
      rng::derive(rng::derive(cfg_.seed, kTagMapDelta), source);
  const double scale =
      kSourceMapSpread / std::sqrt(static_cast<double>(cfg_.input_dim));
  for (std::size_t i = 0; i < map.size(); ++i)
    map[i] += scale * rng::normal(dkey, i);
  return map;
}

void Stream::build_table() {
  const std::uint32_t S = cfg_.n_sources;
  const std::uint32_t T = cfg_.steps_per_source;
  const std::uint32_t in = cfg_.input_dim;
  const std::uint32_t out = cfg_.output_dim;

  inputs_.resize(static_cast<std::size_t>(S) * T * in);
  targets_.resize(static_cast<std::size_t>(S) * T * out);

  const double blend = std::sqrt(1.0 - cfg_.rho * cfg_.rho);
  std::vector<double> rotated(in);

  for (std::uint32_t s = 0; s < S; ++s) {
    const std::uint64_t xkey = rng::derive(rng::derive(cfg_.seed, kTagInputs), s);
    const std::uint64_t nkey = rng::derive(rng::derive(cfg_.seed, kTagNoise), s);
    const std::vector<double> map = source_map(s);

    double* x = inputs_.data() + static_cast<std::size_t>(s) * T * in;
    for (std::uint32_t j = 0; j < in; ++j) x[j] = rng::normal(xkey, j);
    for (std::uint32_t t = 1; t < T; ++t) {
      const double* prev = x + static_cast<std::size_t>(t - 1) * in;
      double* cur = x + static_cast<std::size_t>(t) * in;
      for (std::uint32_t j = 0; j < in; ++j)
        cur[j] = cfg_.rho * prev[j] +
                 blend * rng::normal(xkey, static_cast<std::uint64_t>(t) * in + j);
    }

    double* y = targets_.data() + static_cast<std::size_t>(s) * T * out;
    for (std::uint32_t t = 0; t < T; ++t) {
      const double* xt = x + static_cast<std::size_t>(t) * in;
      rotate_pairs(xt, in, cfg_.drift * static_cast<double>(t), rotated.data());
      double* yt = y + static_cast<std::size_t>(t) * out;
      for (std::uint32_t k = 0; k < out; ++k) {
        double acc = 0.0;
        const double* row = map.data() + static_cast<std::size_t>(k) * in;
        for (std::uint32_t j = 0; j < in; ++j) acc += row[j] * rotated[j];
        if (cfg_.noise_sigma > 0.0)
          acc += cfg_.noise_sigma *
                 rng::normal(nkey, static_cast<std::uint64_t>(t) * out + k);
        yt[k] = acc;
      }
    }
  }
}

void Stream::build_permutation() {
  const std::uint64_t n = samples_per_epoch();
  perm_.resize(n);
  std::iota(perm_.begin(), perm_.end(), 0);
  const std::uint64_t key =
      rng::derive(rng::derive(cfg_.seed, kTagShuffle), epoch_);
  for (std::uint64_t i = n - 1; i > 0; --i) {
    const std::uint64_t j = rng::below(key, i, i + 1);
    std::swap(perm_[i], perm_[j]);
  }
}

void Stream::batch_members(
    std::uint64_t index,
    std::vector<std::pair<std::uint32_t, std::uint32_t>>& out) const {
  out.clear();
  const std::uint64_t S = cfg_.n_sources;
  const std::uint64_t T = cfg_.steps_per_source;
  const std::uint64_t B = cfg_.batch_size;
  switch (cfg_.strategy) {
    case BatchStrategy::sequential_time: {
      if (cfg_.stride1_overlap) {
        const std::uint64_t per_source = T - B + 1;
        const std::uint64_t s = index / per_source;
        const std::uint64_t start = index % per_source;
        for (std::uint64_t t = start; t < start + B; ++t)
          out.emplace_back(static_cast<std::uint32_t>(s),
                           static_cast<std::uint32_t>(t));
      } else {
        const std::uint64_t per_source = ceil_div(T, B);
        const std::uint64_t s = index / per_source;
        const std::uint64_t t0 = (index % per_source) * B;
        for (std::uint64_t t = t0; t < std::min(t0 + B, T); ++t)
          out.emplace_back(static_cast<std::uint32_t>(s),
                           static_cast<std::uint32_t>(t));
      }
      return;
    }
    case BatchStrategy::sequential_video: {
      const std::uint64_t g = index / T;
      const std::uint64_t t = index % T;
      const std::uint64_t s0 = g * B;
      for (std::uint64_t s = s0; s < std::min(s0 + B, S); ++s)
        out.emplace_back(static_cast<std::uint32_t>(s),
                         static_cast<std::uint32_t>(t));
      return;
    }
    case BatchStrategy::shuffled: {
      const std::uint64_t n = S * T;
      const std::uint64_t lo = index * B;
      for (std::uint64_t k = lo; k < std::min(lo + B, n); ++k) {
        const std::uint64_t flat = perm_[k];
        out.emplace_back(static_cast<std::uint32_t>(flat / T),
                         static_cast<std::uint32_t>(flat % T));
      }
      return;
    }
  }
}

std::optional<models::Batch> Stream::next_batch() {
  if (cursor_ >= batches_per_epoch()) return std::nullopt;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> members;
  batch_members(cursor_, members);
  ++cursor_;

  models::Batch b;
  b.size = members.size();
  b.input_dim = cfg_.input_dim;
  b.output_dim = cfg_.output_dim;
  b.inputs.resize(b.size * b.input_dim);
  b.targets.resize(b.size * b.output_dim);
  b.source_ids.resize(b.size);
  b.time_indices.resize(b.size);
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto [s, t] = members[i];
    b.source_ids[i] = s;
    b.time_indices[i] = t;
    const auto x = input_at(s, t);
    const auto y = target_at(s, t);
    std::copy(x.begin(), x.end(), b.inputs.begin() + i * b.input_dim);
    std::copy(y.begin(), y.end(), b.targets.begin() + i * b.output_dim);
  }
  return b;
}

void Stream::advance_epoch() {
  ++epoch_;
  cursor_ = 0;
  if (cfg_.strategy == BatchStrategy::shuffled) build_permutation();
}

void Stream::seek(std::uint64_t epoch, std::uint64_t cursor) {
  OG_CHECK(cursor <= batches_per_epoch());
  epoch_ = epoch;
  cursor_ = cursor;
  if (cfg_.strategy == BatchStrategy::shuffled) build_permutation();
}

std::span<const double> Stream::input_at(std::uint32_t source,
                                         std::uint32_t time) const {
  OG_CHECK(source < cfg_.n_sources && time < cfg_.steps_per_source);
  const std::size_t off =
      (static_cast<std::size_t>(source) * cfg_.steps_per_source + time) *
      cfg_.input_dim;
  return {inputs_.data() + off, cfg_.input_dim};
}

std::span<const double> Stream::target_at(std::uint32_t source,
                                          std::uint32_t time) const {
  OG_CHECK(source < cfg_.n_sources && time < cfg_.steps_per_source);
  const std::size_t off =
      (static_cast<std::size_t>(source) * cfg_.steps_per_source + time) *
      cfg_.output_dim;
  return {targets_.data() + off, cfg_.output_dim};
}

void dump_replay(const StreamConfig& cfg, std::uint64_t n_batches,
                 const std::string& path) {
  OG_CHECK(n_batches > 0);
  Stream stream(cfg);
  bytes::Writer w;
  w.u32(kReplayMagic);
  w.u32(kReplayVersion);
  w.u32(cfg.input_dim);
  w.u32(cfg.output_dim);
  w.u64(n_batches);
  for (std::uint64_t i = 0; i < n_batches; ++i) {
    auto b = stream.next_batch();
    if (!b) {
      stream.advance_epoch();
      b = stream.next_batch();
    }
    OG_CHECK(b.has_value());
    w.u32(static_cast<std::uint32_t>(b->size));
    for (std::size_t k = 0; k < b->size; ++k) {
      w.u32(b->source_ids[k]);
      w.u32(b->time_indices[k]);
    }
    w.f64_span(b->inputs);
    w.f64_span(b->targets);
  }
  bytes::write_file(path, w.data());
}

ReplayReader::ReplayReader(const std::string& path) {
  const auto blob = bytes::read_file(path);
  bytes::Reader r(blob);
  if (r.u32() != kReplayMagic) throw DecodeError("bad replay magic in " + path);
  const std::uint32_t version = r.u32();
  if (version != kReplayVersion)
    throw DecodeError("unsupported replay version " + std::to_string(version));
  input_dim_ = r.u32();
  output_dim_ = r.u32();
  if (input_dim_ == 0 || output_dim_ == 0)
    throw DecodeError("replay header has zero dimensions");
  const std::uint64_t n_batches = r.u64();
  if (n_batches == 0) throw DecodeError("replay file holds no batches");
  batches_.reserve(n_batches);
  for (std::uint64_t i = 0; i < n_batches; ++i) {
    models::Batch b;
    b.size = r.u32();
    if (b.size == 0) throw DecodeError("replay batch with zero samples");
    b.input_dim = input_dim_;
    b.output_dim = output_dim_;
    b.source_ids.resize(b.size);
    b.time_indices.resize(b.size);
    for (std::size_t k = 0; k < b.size; ++k) {
      b.source_ids[k] = r.u32();
      b.time_indices[k] = r.u32();
    }
    b.inputs.resize(b.size * input_dim_);
    r.f64_into(b.inputs);
    b.targets.resize(b.size * output_dim_);
    r.f64_into(b.targets);
    batches_.push_back(std::move(b));
  }
  r.expect_end();
}

std::optional<models::Batch> ReplayReader::next_batch() {
  if (cursor_ >= batches_.size()) return std::nullopt;
  return batches_[cursor_++];
}

void ReplayReader::advance_epoch() {
  ++epoch_;
  cursor_ = 0;
}

void ReplayReader::seek(std::uint64_t epoch, std::uint64_t cursor) {
  OG_CHECK(cursor <= batches_.size());
  epoch_ = epoch;
  cursor_ = cursor;
}

std::uint64_t epoch_multiset_hash(BatchSource& src) {
  std::vector<std::string> rows;
  while (auto b = src.next_batch()) {
    for (std::size_t i = 0; i < b->size; ++i) {
      std::string row;
      row.resize(2 * sizeof(std::uint32_t) +
                 (b->input_dim + b->output_dim) * sizeof(double));
      char* p = row.data();
      std::memcpy(p, &b->source_ids[i], sizeof(std::uint32_t));
      p += sizeof(std::uint32_t);
      std::memcpy(p, &b->time_indices[i], sizeof(std::uint32_t));
      p += sizeof(std::uint32_t);
      std::memcpy(p, b->inputs.data() + i * b->input_dim,
                  b->input_dim * sizeof(double));
      p += b->input_dim * sizeof(double);
      std::memcpy(p, b->targets.data() + i * b->output_dim,
                  b->output_dim * sizeof(double));
      rows.push_back(std::move(row));
    }
  }
  std::sort(rows.begin(), rows.end());
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& row : rows)
    for (unsigned char ch : row) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
  return h;
}

}  // namespace orthograd::streams
