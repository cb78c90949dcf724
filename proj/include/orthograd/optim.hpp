#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

// First-order optimizers (SGD, AdamW, RMSProp) with an optional orthogonal
// rewrite of the incoming gradient: each step projects the raw gradient onto
// an exponential moving average of past raw gradients and keeps only the
// component orthogonal to it.  The moving average is always fed the raw
// gradient, never the rewritten one, so it tracks what the stream produced
// rather than what the optimizer consumed.
//
// Steps are transactional: every candidate buffer is computed and checked for
// finiteness before anything is committed, so a rejected step leaves the
// parameter vector and all optimizer state exactly as they were.

namespace orthograd::optim {

enum class OptimizerKind : std::uint32_t { sgd = 1, adamw = 2, rmsprop = 3 };

// How the scalar learning-rate multiplier for a step is chosen:
//   none    fixed multiplier of 1
//   slower  1 - cos(g, previous raw g): full rate on new directions, near
//           zero when the gradient keeps pointing the same way
enum class LrScaleMode { none, slower };

enum class StepStatus { ok, rejected_non_finite };

struct StepResult {
  StepStatus status = StepStatus::ok;
  // Learning-rate multiplier actually used (1 unless mode == slower).
  double lr_scale = 1.0;
  // Gradient the base rule consumed: the orthogonal residual when the
  // rewrite is enabled, otherwise a copy of the raw gradient.  Empty when
  // the step was rejected.
  std::vector<double> applied;
};

struct OrthoState {
  bool enabled = false;
  double beta = 0.9;
  std::vector<double> c;         // EMA of raw gradients
  std::vector<double> prev_raw;  // last accepted raw gradient
  // Projection blocks over the flat parameter vector.  Empty means one
  // global block; otherwise sizes must sum to the vector length and each
  // block is projected against its own slice of c.
  std::vector<std::uint64_t> group_sizes;
};

struct SgdState {
  double lr = 0.01;
  OrthoState ortho;
  std::uint64_t step = 0;
};

struct AdamWState {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  OrthoState ortho;
  std::uint64_t step = 0;
};

struct RmsPropState {
  double lr = 1e-3;
  double alpha = 0.9;
  double eps = 1e-8;
  std::vector<double> sq;
  OrthoState ortho;
  std::uint64_t step = 0;
};

SgdState make_sgd(std::size_t n, double lr, bool ortho_enabled = false,
                  double beta = 0.9, std::vector<std::uint64_t> group_sizes = {});

AdamWState make_adamw(std::size_t n, double lr, double weight_decay = 0.0,
                      bool ortho_enabled = false, double beta = 0.9,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                      std::vector<std::uint64_t> group_sizes = {});

RmsPropState make_rmsprop(std::size_t n, double lr, double alpha = 0.9,
                          double eps = 1e-8, bool ortho_enabled = false,
                          double beta = 0.9,
                          std::vector<std::uint64_t> group_sizes = {});

// The gradient the base rule will consume.  Pure with respect to the state.
// Disabled: an exact copy of g.  Enabled: per block, g minus its projection
// onto the corresponding slice of c; blocks whose c-slice has norm at or
// below the dead-direction threshold pass through unchanged bit for bit.
std::vector<double> orthogonalize(const OrthoState& o, std::span<const double> g);

// Learning-rate multiplier for LrScaleMode::slower: 1 - cos(g, prev_raw),
// which lands in [0, 2].  While prev_raw is still all zeros (no step has
// committed yet) the cosine is 0 and the multiplier is exactly 1.
double slower_scale(const OrthoState& o, std::span<const double> g);

// One update.  `lr_override` substitutes for the stored base rate (schedules
// live in the caller); the slower multiplier applies on top of it.
StepResult sgd_step(SgdState& s, std::span<double> theta,
                    std::span<const double> g,
                    LrScaleMode mode = LrScaleMode::none,
                    std::optional<double> lr_override = std::nullopt);

StepResult adamw_step(AdamWState& s, std::span<double> theta,
                      std::span<const double> g,
                      LrScaleMode mode = LrScaleMode::none,
                      std::optional<double> lr_override = std::nullopt);

StepResult rmsprop_step(RmsPropState& s, std::span<double> theta,
                        std::span<const double> g,
                        std::optional<double> lr_override = std::nullopt);

// Versioned little-endian blobs; decoding validates magic, version, kind,
// and exact length, and rebuilds the state bit for bit.
std::vector<std::uint8_t> serialize_state(const SgdState& s);
std::vector<std::uint8_t> serialize_state(const AdamWState& s);
std::vector<std::uint8_t> serialize_state(const RmsPropState& s);

using AnyState = std::variant<SgdState, AdamWState, RmsPropState>;

OptimizerKind peek_kind(std::span<const std::uint8_t> blob);
AnyState deserialize_state(std::span<const std::uint8_t> blob);

// Typed decoders; a payload of any other kind raises DecodeError.
SgdState deserialize_sgd(std::span<const std::uint8_t> blob);
AdamWState deserialize_adamw(std::span<const std::uint8_t> blob);
RmsPropState deserialize_rmsprop(std::span<const std::uint8_t> blob);

}  // namespace orthograd::optim
