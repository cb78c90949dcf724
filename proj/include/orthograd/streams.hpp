#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "orthograd/models.hpp"

// Synthetic streaming regression data.
//
// A stream is a fixed dataset of n_sources x steps_per_source samples.  Each
// source s carries an AR(1) input trajectory
//     x_0 = xi_0,   x_t = rho * x_{t-1} + sqrt(1 - rho^2) * xi_t
// with xi ~ N(0, I), so rho = 0 gives fresh draws every step and rho = 1
// freezes the trajectory at its first point.  Targets come from a per-source
// linear map applied to a slowly rotating view of the input:
//     y(s, t) = M_s * rotate(x(s, t), drift * t) + noise_sigma * zeta(s, t)
// where rotate spins each consecutive coordinate pair by the given angle and
// M_s = M_base + spread * D_s.  M_base depends only on the task family and
// the dimensions — never on the stream seed — so two streams with different
// seeds share the same underlying structure and differ only in trajectories,
// noise, and the per-source deviations D_s.  That is what makes a fresh-seed
// stream a meaningful generalization probe.
//
// All randomness is counter-based: every sample is a pure function of
// (seed, source, time), so batching order, seeking, and replay cannot change
// the data.
//
// An epoch visits every (source, time) pair exactly once; the batching
// strategy only decides the order:
//   sequential_time   source by source, consecutive times per batch; batches
//                     never span sources, the last batch of a source may be
//                     short
//   sequential_video  sources grouped in blocks of batch_size; within a
//                     group, one batch per time step holding that time's
//                     sample from every source in the group
//   shuffled          a fresh whole-epoch permutation each epoch, cut into
//                     batches
// Because the order never changes the multiset, any two strategies over the
// same config emit permutations of the same samples.

namespace orthograd::streams {

enum class BatchStrategy { sequential_time, sequential_video, shuffled };

struct StreamConfig {
  std::uint32_t n_sources = 1;
  std::uint32_t steps_per_source = 1;
  std::uint32_t input_dim = 1;
  std::uint32_t output_dim = 1;
  double rho = 0.0;
  double drift = 0.0;
  double noise_sigma = 0.0;
  std::uint32_t batch_size = 1;
  BatchStrategy strategy = BatchStrategy::sequential_time;
  std::uint64_t seed = 0;
  // sequential_time only: windows advance by one step instead of a full
  // batch, so consecutive batches overlap in batch_size - 1 samples.  Epoch
  // coverage guarantees do not apply while this is on.
  bool stride1_overlap = false;
};

// Throws ConfigError listing every problem at once.
void validate(const StreamConfig& cfg);

// Uniform batch supplier the run loop consumes; implemented by live synthetic
// streams and by replay files.
struct BatchSource {
  virtual ~BatchSource() = default;
  // Next batch of the current epoch, or nullopt once it is exhausted.
  virtual std::optional<models::Batch> next_batch() = 0;
  virtual void advance_epoch() = 0;
  // Jump to (epoch, batches already emitted); used by checkpoint resume.
  virtual void seek(std::uint64_t epoch, std::uint64_t cursor) = 0;
  virtual std::uint64_t epoch() const = 0;
  virtual std::uint64_t cursor() const = 0;
  virtual std::uint64_t batches_per_epoch() const = 0;
  virtual std::uint32_t input_dim() const = 0;
  virtual std::uint32_t output_dim() const = 0;
};

class Stream final : public BatchSource {
 public:
  explicit Stream(StreamConfig cfg);

  std::optional<models::Batch> next_batch() override;
  void advance_epoch() override;
  void seek(std::uint64_t epoch, std::uint64_t cursor) override;
  std::uint64_t epoch() const override { return epoch_; }
  std::uint64_t cursor() const override { return cursor_; }
  std::uint64_t batches_per_epoch() const override;
  std::uint32_t input_dim() const override { return cfg_.input_dim; }
  std::uint32_t output_dim() const override { return cfg_.output_dim; }

  const StreamConfig& config() const { return cfg_; }
  std::uint64_t samples_per_epoch() const;

  // Direct table access for tests and diagnostics.
  std::span<const double> input_at(std::uint32_t source, std::uint32_t time) const;
  std::span<const double> target_at(std::uint32_t source, std::uint32_t time) const;

  // The seed-independent map every source deviates from (out x in, row-major).
  static std::vector<double> base_map(std::uint32_t input_dim,
                                      std::uint32_t output_dim);
  // base_map plus this stream's per-source deviation.
  std::vector<double> source_map(std::uint32_t source) const;

 private:
  void build_table();
  void build_permutation();
  // (source, time) pairs of batch `index` in the current epoch's order.
  void batch_members(std::uint64_t index,
                     std::vector<std::pair<std::uint32_t, std::uint32_t>>& out) const;

  StreamConfig cfg_;
  std::vector<double> inputs_;   // n_sources x steps x input_dim
  std::vector<double> targets_;  // n_sources x steps x output_dim
  std::vector<std::uint64_t> perm_;  // shuffled only, rebuilt per epoch
  std::uint64_t epoch_ = 0;
  std::uint64_t cursor_ = 0;
};

// Record `n_batches` batches of a fresh stream built from `cfg` into a
// self-contained file, rolling over epochs as needed.
void dump_replay(const StreamConfig& cfg, std::uint64_t n_batches,
                 const std::string& path);

// Reads a replay file back as a batch source; one epoch = one full pass over
// the recorded batches.
class ReplayReader final : public BatchSource {
 public:
  explicit ReplayReader(const std::string& path);

  std::optional<models::Batch> next_batch() override;
  void advance_epoch() override;
  void seek(std::uint64_t epoch, std::uint64_t cursor) override;
  std::uint64_t epoch() const override { return epoch_; }
  std::uint64_t cursor() const override { return cursor_; }
  std::uint64_t batches_per_epoch() const override { return batches_.size(); }
  std::uint32_t input_dim() const override { return input_dim_; }
  std::uint32_t output_dim() const override { return output_dim_; }

 private:
  std::vector<models::Batch> batches_;
  std::uint32_t input_dim_ = 0;
  std::uint32_t output_dim_ = 0;
  std::uint64_t epoch_ = 0;
  std::uint64_t cursor_ = 0;
};

// Order-insensitive digest of the samples one full epoch emits from the
// source's current position: serialize each sample, sort, hash.  Two sources
// that emit the same samples in any order produce the same digest.
std::uint64_t epoch_multiset_hash(BatchSource& src);

}  // namespace orthograd::streams
