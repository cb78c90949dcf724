#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

// Per-step diagnostics for optimization runs.  Each committed step yields one
// row capturing what the stream handed the optimizer (raw gradient), what the
// optimizer consumed (applied gradient), and how aligned both were with
// recent history.  Rows stream to CSV as they are recorded, so a crash keeps
// everything up to the last committed step.
//
// A row is marked degenerate when any vector entering its cosines is at or
// below the dead-direction norm threshold (the first step always is: there is
// no history yet).  Degenerate rows keep their zero cosines in the CSV but
// are excluded from every mean the summary reports.

namespace orthograd::telemetry {

struct Sample {
  std::uint64_t step = 0;
  double loss = 0.0;
  double cos_raw_prev = 0.0;   // raw gradient vs previous raw gradient
  double cos_raw_ema = 0.0;    // raw gradient vs the pre-step average direction
  double cos_used_prev = 0.0;  // applied gradient vs previous applied gradient
  double norm_raw = 0.0;
  double norm_used = 0.0;
  double lr_effective = 0.0;
  bool degenerate = false;
};

struct RunSummary {
  double final_loss = 0.0;
  double mean_loss_last_k = 0.0;
  double mean_cos_raw_prev = 0.0;
  double mean_cos_used_prev = 0.0;
  std::uint64_t degenerate_count = 0;
  std::uint64_t steps = 0;
};

inline constexpr const char* kCsvHeader =
    "step,loss,cos_raw_prev,cos_raw_ema,cos_used_prev,norm_raw,norm_used,"
    "lr_effective,degenerate";

// Losses retained for the trailing-window mean.
inline constexpr std::size_t kLossWindow = 100;

class Recorder {
 public:
  // Rows kept in memory stop accumulating past `memory_cap`; aggregates and
  // the CSV stream keep going regardless.
  explicit Recorder(std::size_t memory_cap = 1'000'000);
  ~Recorder();
  Recorder(const Recorder&) = delete;
  Recorder& operator=(const Recorder&) = delete;

  // Start streaming rows (header first) to `path`.  Throws IoError.
  void open_csv(const std::string& path);

  // Build, retain, and stream the row for one committed step.  `g_prev` and
  // `c_prev` are the optimizer's previous raw gradient and average direction
  // as they were before the step committed; `u` is the gradient the base
  // rule consumed.  The recorder remembers u internally to form the next
  // row's cos_used_prev.
  const Sample& record(std::uint64_t step, double loss,
                       std::span<const double> g,
                       std::span<const double> g_prev,
                       std::span<const double> c_prev,
                       std::span<const double> u, double lr_effective);

  const std::vector<Sample>& samples() const { return samples_; }
  std::uint64_t recorded() const { return recorded_; }

  // Aggregates over everything recorded so far (not just retained rows).
  RunSummary summary(std::size_t last_k = kLossWindow) const;

  // Flush and close the CSV stream (also happens on destruction).
  void close();

 private:
  std::size_t memory_cap_;
  std::vector<Sample> samples_;
  std::vector<double> prev_used_;
  Sample last_;
  std::FILE* csv_ = nullptr;

  std::uint64_t recorded_ = 0;
  std::uint64_t degenerate_ = 0;
  double cos_raw_prev_sum_ = 0.0;
  double cos_used_prev_sum_ = 0.0;
  double final_loss_ = 0.0;
  std::vector<double> loss_window_;  // ring buffer of the last kLossWindow
};

// Aggregate a finished run; throws std::invalid_argument on an empty span.
RunSummary summarize(std::span<const Sample> run, std::size_t last_k = kLossWindow);

// Whole-run CSV writer with the same format the Recorder streams.
void write_csv(const std::string& path, std::span<const Sample> samples);

// Fixed-width histogram over [lo, hi]; out-of-range values clamp to the edge
// bins and x == hi lands in the last bin, so counts always sum to xs.size().
std::vector<std::uint64_t> histogram(std::span<const double> xs,
                                     std::size_t bins, double lo, double hi);

}  // namespace orthograd::telemetry
