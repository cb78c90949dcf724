#include "orthograd/telemetry.hpp"

#include <cmath>
#include <stdexcept>

#include "orthograd/common.hpp"
#include "orthograd/linalg.hpp"

namespace orthograd::telemetry {

namespace la = linalg;

namespace {

void write_row(std::FILE* f, const Sample& s) {
  std::fprintf(f,
               "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
               static_cast<unsigned long long>(s.step), s.loss, s.cos_raw_prev,
               s.cos_raw_ema, s.cos_used_prev, s.norm_raw, s.norm_used,
               s.lr_effective, s.degenerate ? 1 : 0);
}

}  // namespace

Recorder::Recorder(std::size_t memory_cap) : memory_cap_(memory_cap) {
  loss_window_.reserve(kLossWindow);
}

Recorder::~Recorder() { close(); }

void Recorder::open_csv(const std::string& path) {
  OG_CHECK(csv_ == nullptr);
  csv_ = std::fopen(path.c_str(), "wb");
  if (!csv_) throw IoError("cannot open " + path + " for writing");
  std::fprintf(csv_, "%s\n", kCsvHeader);
}

void Recorder::close() {
  if (csv_) {
    if (std::fclose(csv_) != 0) {
      csv_ = nullptr;
      throw IoError("failed to flush telemetry CSV");
    }
    csv_ = nullptr;
  }
}

const Sample& Recorder::record(std::uint64_t step, double loss,
                               std::span<const double> g,
                               std::span<const double> g_prev,
                               std::span<const double> c_prev,
                               std::span<const double> u,
                               double lr_effective) {
  Sample s;
  s.step = step;
  s.loss = loss;
  s.lr_effective = lr_effective;
  s.norm_raw = la::norm(g);
  s.norm_used = la::norm(u);

  const double norm_prev = g_prev.empty() ? 0.0 : la::norm(g_prev);
  const double norm_c = c_prev.empty() ? 0.0 : la::norm(c_prev);
  const double norm_pu = prev_used_.empty() ? 0.0 : la::norm(prev_used_);

  s.degenerate = s.norm_raw <= la::kZeroNorm || norm_prev <= la::kZeroNorm ||
                 norm_c <= la::kZeroNorm || s.norm_used <= la::kZeroNorm ||
                 norm_pu <= la::kZeroNorm;

  if (norm_prev > la::kZeroNorm) s.cos_raw_prev = la::cosine(g, g_prev);
  if (norm_c > la::kZeroNorm) s.cos_raw_ema = la::cosine(g, c_prev);
  if (norm_pu > la::kZeroNorm) s.cos_used_prev = la::cosine(u, prev_used_);

  prev_used_.assign(u.begin(), u.end());

  ++recorded_;
  final_loss_ = loss;
  if (s.degenerate) {
    ++degenerate_;
  } else {
    cos_raw_prev_sum_ += s.cos_raw_prev;
    cos_used_prev_sum_ += s.cos_used_prev;
  }
  if (loss_window_.size() < kLossWindow) {
    loss_window_.push_back(loss);
  } else {
    loss_window_[(recorded_ - 1) % kLossWindow] = loss;
  }

  if (csv_) write_row(csv_, s);

  if (samples_.size() < memory_cap_) samples_.push_back(s);
  last_ = s;
  return last_;
}

RunSummary Recorder::summary(std::size_t last_k) const {
  OG_CHECK(last_k > 0 && last_k <= kLossWindow);
  if (recorded_ == 0) throw std::invalid_argument("no steps recorded");
  RunSummary r;
  r.steps = recorded_;
  r.final_loss = final_loss_;
  r.degenerate_count = degenerate_;
  const std::uint64_t valid = recorded_ - degenerate_;
  r.mean_cos_raw_prev = valid ? cos_raw_prev_sum_ / valid : 0.0;
  r.mean_cos_used_prev = valid ? cos_used_prev_sum_ / valid : 0.0;

  const std::size_t have = loss_window_.size();
  const std::size_t k = std::min(last_k, have);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    // Walk backwards through the ring from the most recent entry.
    const std::size_t idx = (recorded_ - 1 - i) % kLossWindow;
    sum += loss_window_[idx];
  }
  r.mean_loss_last_k = sum / static_cast<double>(k);
  return r;
}

RunSummary summarize(std::span<const Sample> run, std::size_t last_k) {
  if (run.empty()) throw std::invalid_argument("cannot summarize an empty run");
  OG_CHECK(last_k > 0);
  RunSummary r;
  r.steps = run.size();
  r.final_loss = run.back().loss;

  std::uint64_t valid = 0;
  for (const Sample& s : run) {
    if (s.degenerate) {
      ++r.degenerate_count;
    } else {
      ++valid;
      r.mean_cos_raw_prev += s.cos_raw_prev;
      r.mean_cos_used_prev += s.cos_used_prev;
    }
  }
  if (valid) {
    r.mean_cos_raw_prev /= static_cast<double>(valid);
    r.mean_cos_used_prev /= static_cast<double>(valid);
  } else {
    r.mean_cos_raw_prev = 0.0;
    r.mean_cos_used_prev = 0.0;
  }

  const std::size_t k = std::min<std::size_t>(last_k, run.size());
  double sum = 0.0;
  for (std::size_t i = run.size() - k; i < run.size(); ++i) sum += run[i].loss;
  r.mean_loss_last_k = sum / static_cast<double>(k);
  return r;
}

void write_csv(const std::string& path, std::span<const Sample> samples) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open " + path + " for writing");
  std::fprintf(f, "%s\n", kCsvHeader);
  for (const Sample& s : samples) write_row(f, s);
  if (std::fclose(f) != 0) throw IoError("failed to flush " + path);
}

std::vector<std::uint64_t> histogram(std::span<const double> xs,
                                     std::size_t bins, double lo, double hi) {
  OG_CHECK(bins > 0);
  OG_CHECK(lo < hi);
  std::vector<std::uint64_t> counts(bins, 0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double x : xs) {
    OG_CHECK(std::isfinite(x));
    std::size_t idx;
    if (x <= lo) {
      idx = 0;
    } else if (x >= hi) {
      idx = bins - 1;
    } else {
      idx = static_cast<std::size_t>((x - lo) / width);
      if (idx >= bins) idx = bins - 1;
    }
    ++counts[idx];
  }
  return counts;
}

}  // namespace orthograd::telemetry
