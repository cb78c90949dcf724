#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "orthograd/models.hpp"
#include "orthograd/optim.hpp"
#include "orthograd/streams.hpp"
#include "orthograd/telemetry.hpp"

// Experiment orchestration: strict JSON configs, the training loop, holdout
// evaluation, checkpoint/resume, axis sweeps, and the three-arm optimizer
// comparison.  Runs are bit-reproducible: identical configs yield identical
// telemetry bytes and identical final parameters, and every emitted artifact
// except wall-clock timings is a pure function of the config.

namespace orthograd::harness {

struct ScheduleConfig {
  std::uint64_t total_steps = 1;
  std::uint64_t warmup_steps = 0;  // linear ramp (t+1)/warmup_steps
  bool cosine_decay = false;       // half-cosine from warmup end to zero at total
};

// Base learning rate shaped by warmup and decay for 0-based step t.
double scheduled_lr(const ScheduleConfig& s, double base_lr, std::uint64_t t);

struct ModelSpec {
  models::ModelKind kind = models::ModelKind::linear;
  std::vector<std::size_t> shape;  // [in, hidden..., out]
  models::Activation activation = models::Activation::tanh_act;
};

struct OptimizerSpec {
  optim::OptimizerKind kind = optim::OptimizerKind::adamw;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double alpha = 0.9;  // rmsprop decay
  bool ortho = false;
  double beta = 0.9;  // gradient-average decay for the orthogonal rewrite
  bool per_layer_projection = false;
  optim::LrScaleMode lr_scale = optim::LrScaleMode::none;
};

struct EvalSpec {
  std::uint64_t eval_every = 0;   // holdout cadence in steps; 0 = final only
  std::uint64_t holdout_seed = 0; // resolved at parse time when not given
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir;
  ModelSpec model;
  streams::StreamConfig stream;
  OptimizerSpec optimizer;
  ScheduleConfig schedule;
  EvalSpec eval;
  std::uint64_t accumulate_steps = 1;  // micro-batches averaged per step
  std::uint64_t checkpoint_every = 0;  // 0 = final checkpoint only
  std::string replay_file;             // train from a recorded stream
};

// Strict parse: unknown keys anywhere are errors, and all validation
// problems are reported together in one ConfigError.  Defaults that depend
// on other fields (stream seed, holdout seed) are resolved here, so the
// returned config is fully explicit.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

// Raw JSON of a config file, for callers that patch fields (seed, out_dir)
// before the strict parse.  File and syntax problems become ConfigError.
nlohmann::json load_config_json(const std::string& path);

// Canonical JSON image of a resolved config (includes out_dir).
nlohmann::json config_to_json(const ExperimentConfig& cfg);

// 16-hex-digit digest of the canonical image minus out_dir, so relocated
// outputs still count as the same experiment.
std::string config_hash(const ExperimentConfig& cfg);

void validate(const ExperimentConfig& cfg);

struct RunResult {
  telemetry::RunSummary train;
  double holdout_final_loss = 0.0;
  std::vector<std::pair<std::uint64_t, double>> holdout_curve;
  std::uint64_t rejected_steps = 0;
  double wall_seconds = 0.0;
  std::vector<double> final_params;
  std::string out_dir;
};

// Execute a run, writing telemetry.csv, holdout.csv, summary.json, and
// checkpoint.bin into cfg.out_dir.  Throws ConfigError up front for bad
// configs or unwritable outputs, StepFailureError when more than 1% of
// steps reject.
RunResult run_experiment(const ExperimentConfig& cfg);

// Decoded checkpoint payload.
struct Checkpoint {
  std::string config_hash;
  std::string config_json;
  std::uint64_t next_step = 0;
  std::uint64_t stream_epoch = 0;
  std::uint64_t stream_cursor = 0;
  std::vector<double> params;
  std::vector<std::uint8_t> optimizer_blob;
};

Checkpoint read_checkpoint(const std::string& path);

// Continue a checkpointed run to completion.  The embedded config drives the
// run; `config_path` (when given) must hash to the checkpoint's stored hash
// unless `force` overrides the refusal.  `out_dir` relocates the outputs.
RunResult resume_run(const std::string& checkpoint_path,
                     const std::string& config_path = "",
                     const std::string& out_dir = "", bool force = false);

struct SweepEntry {
  double value = 0.0;
  std::string run_dir;
  RunResult result;
};

// One run per axis value, each in out_dir/<axis>=<value>/, plus a
// sweep.csv comparison table in input order.  batch_size sweeps rescale
// total_steps to hold the sample budget fixed.
std::vector<SweepEntry> run_sweep(const ExperimentConfig& base,
                                  const std::string& axis,
                                  const std::vector<double>& values,
                                  const std::string& out_dir);

// The valid sweep axes, for error messages and CLI help.
const std::vector<std::string>& sweep_axes();

struct ComparisonResult {
  RunResult base;
  RunResult ortho;
  RunResult slower;
};

// Three arms over byte-identical training data: the plain optimizer, the
// orthogonal rewrite, and the slower learning-rate scaling.  The stream is
// recorded to out_dir/replay.bin once and every arm trains from that file.
ComparisonResult run_comparison(const ExperimentConfig& cfg,
                                const std::string& out_dir);

}  // namespace orthograd::harness
