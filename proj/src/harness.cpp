#include "orthograd/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <sstream>
#include <utility>

#include "orthograd/bytes.hpp"
#include "orthograd/common.hpp"
#include "orthograd/rng.hpp"

namespace orthograd::harness {
namespace {

using nlohmann::json;

constexpr double kPi = 3.141592653589793238462643383279;

// Derivation tags for the run's independent random streams.
constexpr std::uint64_t kTagModelInit = 5;
constexpr std::uint64_t kTagHoldout = 6;

constexpr std::uint32_t kCkptMagic = 0x4B43474F;  // "OGCK" little-endian
constexpr std::uint32_t kCkptVersion = 1;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_out(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open " + path + " for writing");
  return FilePtr(f);
}

void write_text(const std::string& path, const std::string& text) {
  FilePtr f = open_out(path);
  if (std::fwrite(text.data(), 1, text.size(), f.get()) != text.size())
    throw IoError("short write to " + path);
}

// ---------------------------------------------------------------------------
// Error accumulation: every parse/validation problem is collected and the
// whole list raised as one ConfigError, so a broken config is fixed in one
// round trip instead of one message at a time.

struct Errors {
  std::vector<std::string> items;

  void add(std::string msg) { items.push_back(std::move(msg)); }
  bool empty() const { return items.empty(); }

  [[noreturn]] void raise() const {
    std::string msg = "invalid experiment config:";
    for (const std::string& e : items) msg += "\n  - " + e;
    throw ConfigError(msg);
  }

  void raise_if_any() const {
    if (!items.empty()) raise();
  }
};

// Accessors over one JSON object that type-check fields, fall back to
// defaults on problems (recording them), and flag unknown keys.
class Section {
 public:
  Section(const json* j, std::string name, Errors* errs)
      : j_(j), name_(std::move(name)), errs_(errs) {}

  bool has(const char* key) const { return j_ != nullptr && j_->contains(key); }

  void finish(std::initializer_list<const char*> known) const {
    if (!j_) return;
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      bool ok = false;
      for (const char* k : known)
        if (it.key() == k) {
          ok = true;
          break;
        }
      if (!ok)
        errs_->add(where() + "unknown key \"" + it.key() + "\"");
    }
  }

  double num(const char* key, double def) const {
    if (!has(key)) return def;
    const json& v = (*j_)[key];
    if (!v.is_number()) {
      errs_->add(path(key) + " must be a number");
      return def;
    }
    return v.get<double>();
  }

  std::uint64_t uint(const char* key, std::uint64_t def) const {
    if (!has(key)) return def;
    std::uint64_t out = def;
    if (!json_uint((*j_)[key], out))
      errs_->add(path(key) + " must be a non-negative integer");
    return out;
  }

  // JSON integers arrive as unsigned or signed storage depending on how the
  // document was built; accept both as long as the value is non-negative.
  static bool json_uint(const json& v, std::uint64_t& out) {
    if (v.is_number_unsigned()) {
      out = v.get<std::uint64_t>();
      return true;
    }
    if (v.is_number_integer()) {
      const std::int64_t s = v.get<std::int64_t>();
      if (s >= 0) {
        out = static_cast<std::uint64_t>(s);
        return true;
      }
    }
    return false;
  }

  bool flag(const char* key, bool def) const {
    if (!has(key)) return def;
    const json& v = (*j_)[key];
    if (!v.is_boolean()) {
      errs_->add(path(key) + " must be a boolean");
      return def;
    }
    return v.get<bool>();
  }

  std::string str(const char* key, std::string def) const {
    if (!has(key)) return def;
    const json& v = (*j_)[key];
    if (!v.is_string()) {
      errs_->add(path(key) + " must be a string");
      return def;
    }
    return v.get<std::string>();
  }

  // String field constrained to a fixed vocabulary.
  template <typename E>
  E choice(const char* key, E def,
           std::initializer_list<std::pair<const char*, E>> names) const {
    if (!has(key)) return def;
    const json& v = (*j_)[key];
    if (v.is_string()) {
      const std::string s = v.get<std::string>();
      for (const auto& [n, e] : names)
        if (s == n) return e;
    }
    std::string valid;
    for (const auto& [n, e] : names) {
      if (!valid.empty()) valid += ", ";
      valid += std::string("\"") + n + "\"";
    }
    errs_->add(path(key) + " must be one of " + valid);
    return def;
  }

  std::string path(const char* key) const { return where() + key; }

 private:
  std::string where() const {
    return name_.empty() ? std::string() : name_ + ".";
  }

  const json* j_;
  std::string name_;
  Errors* errs_;
};

// Pulls a named subobject out of the top level; a present non-object value
// is an error and reads as an absent section.
const json* subobject(const json& j, const char* key, bool required,
                      Errors& errs) {
  if (!j.contains(key)) {
    if (required) errs.add(std::string(key) + " section is required");
    return nullptr;
  }
  const json& v = j[key];
  if (!v.is_object()) {
    errs.add(std::string(key) + " must be an object");
    return nullptr;
  }
  return &v;
}

const char* name_of(models::ModelKind k) {
  return k == models::ModelKind::linear ? "linear" : "mlp";
}
const char* name_of(models::Activation a) {
  return a == models::Activation::tanh_act ? "tanh" : "relu";
}
const char* name_of(optim::OptimizerKind k) {
  switch (k) {
    case optim::OptimizerKind::sgd: return "sgd";
    case optim::OptimizerKind::adamw: return "adamw";
    case optim::OptimizerKind::rmsprop: return "rmsprop";
  }
  contract_failure("unreachable optimizer kind", __FILE__, __LINE__);
}
const char* name_of(optim::LrScaleMode m) {
  return m == optim::LrScaleMode::none ? "none" : "slower";
}
const char* name_of(streams::BatchStrategy s) {
  switch (s) {
    case streams::BatchStrategy::sequential_time: return "sequential_time";
    case streams::BatchStrategy::sequential_video: return "sequential_video";
    case streams::BatchStrategy::shuffled: return "shuffled";
  }
  contract_failure("unreachable batch strategy", __FILE__, __LINE__);
}

void validate_into(const ExperimentConfig& cfg, Errors& errs) {
  // Model shape and its agreement with the stream.
  if (cfg.model.shape.size() < 2) {
    errs.add("model.shape needs at least [in, out]");
  } else {
    for (std::size_t d : cfg.model.shape)
      if (d == 0) {
        errs.add("model.shape entries must be positive");
        break;
      }
    if (cfg.model.kind == models::ModelKind::linear &&
        cfg.model.shape.size() != 2)
      errs.add("model.kind \"linear\" takes exactly [in, out]");
    if (cfg.model.shape.front() != cfg.stream.input_dim)
      errs.add("model input width " + std::to_string(cfg.model.shape.front()) +
               " does not match stream.input_dim " +
               std::to_string(cfg.stream.input_dim));
    if (cfg.model.shape.back() != cfg.stream.output_dim)
      errs.add("model output width " + std::to_string(cfg.model.shape.back()) +
               " does not match stream.output_dim " +
               std::to_string(cfg.stream.output_dim));
  }

  // Stream problems, re-homed under a "stream:" prefix.
  try {
    streams::validate(cfg.stream);
  } catch (const ConfigError& e) {
    std::istringstream ss(e.what());
    std::string line;
    bool first = true;
    while (std::getline(ss, line)) {
      if (first) {
        first = false;
        continue;
      }
      if (line.rfind("  - ", 0) == 0) line = line.substr(4);
      errs.add("stream: " + line);
    }
  }

  // Optimizer hyperparameters (the same ranges the constructors enforce).
  const OptimizerSpec& o = cfg.optimizer;
  if (!std::isfinite(o.lr) || o.lr < 0.0)
    errs.add("optimizer.lr must be finite and non-negative");
  if (!std::isfinite(o.weight_decay) || o.weight_decay < 0.0)
    errs.add("optimizer.weight_decay must be finite and non-negative");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0))
    errs.add("optimizer.beta1 must lie in [0, 1)");
  if (!(o.beta2 >= 0.0 && o.beta2 < 1.0))
    errs.add("optimizer.beta2 must lie in [0, 1)");
  if (!std::isfinite(o.eps) || o.eps < 0.0)
    errs.add("optimizer.eps must be finite and non-negative");
  if (!(o.alpha >= 0.0 && o.alpha < 1.0))
    errs.add("optimizer.alpha must lie in [0, 1)");
  if (!(o.beta >= 0.0 && o.beta < 1.0))
    errs.add("optimizer.beta must lie in [0, 1)");
  if (o.kind == optim::OptimizerKind::rmsprop &&
      o.lr_scale == optim::LrScaleMode::slower)
    errs.add("optimizer.lr_scale \"slower\" is not available for rmsprop");

  // total_steps == 0 is allowed: the run performs no steps and fails later
  // with the empty-run error when its summary is computed.
  if (cfg.schedule.warmup_steps > cfg.schedule.total_steps)
    errs.add("schedule.warmup_steps must not exceed total_steps");
  if (cfg.accumulate_steps == 0)
    errs.add("accumulate_steps must be at least 1");
}

models::Model build_model(const ModelSpec& spec) {
  if (spec.kind == models::ModelKind::linear)
    return models::Model::make_linear(spec.shape.front(), spec.shape.back());
  return models::Model::make_mlp(spec.shape, spec.activation);
}

optim::AnyState make_state(const OptimizerSpec& o, std::size_t n,
                           std::vector<std::uint64_t> groups) {
  switch (o.kind) {
    case optim::OptimizerKind::sgd:
      return optim::make_sgd(n, o.lr, o.ortho, o.beta, std::move(groups));
    case optim::OptimizerKind::adamw:
      return optim::make_adamw(n, o.lr, o.weight_decay, o.ortho, o.beta,
                               o.beta1, o.beta2, o.eps, std::move(groups));
    case optim::OptimizerKind::rmsprop:
      return optim::make_rmsprop(n, o.lr, o.alpha, o.eps, o.ortho, o.beta,
                                 std::move(groups));
  }
  contract_failure("unreachable optimizer kind", __FILE__, __LINE__);
}

optim::OptimizerKind kind_of(const optim::AnyState& st) {
  if (std::holds_alternative<optim::SgdState>(st))
    return optim::OptimizerKind::sgd;
  if (std::holds_alternative<optim::AdamWState>(st))
    return optim::OptimizerKind::adamw;
  return optim::OptimizerKind::rmsprop;
}

const optim::OrthoState& ortho_of(const optim::AnyState& st) {
  return std::visit(
      [](const auto& s) -> const optim::OrthoState& { return s.ortho; }, st);
}

optim::StepResult do_step(optim::AnyState& st, std::span<double> theta,
                          std::span<const double> g, optim::LrScaleMode mode,
                          double lr) {
  return std::visit(
      overloaded{
          [&](optim::SgdState& s) { return optim::sgd_step(s, theta, g, mode, lr); },
          [&](optim::AdamWState& s) { return optim::adamw_step(s, theta, g, mode, lr); },
          [&](optim::RmsPropState& s) { return optim::rmsprop_step(s, theta, g, lr); },
      },
      st);
}

std::vector<std::uint8_t> serialize_any(const optim::AnyState& st) {
  return std::visit([](const auto& s) { return optim::serialize_state(s); },
                    st);
}

// Mean holdout loss over one full epoch, from the epoch start.
double holdout_loss(const models::Model& m, streams::Stream& hold) {
  hold.seek(0, 0);
  double sum = 0.0;
  std::uint64_t count = 0;
  while (std::optional<models::Batch> b = hold.next_batch()) {
    sum += models::loss_sum(m, *b);
    count += b->size;
  }
  OG_CHECK(count > 0);
  return sum / static_cast<double>(count);
}

void write_checkpoint_file(const std::string& path,
                           const ExperimentConfig& cfg,
                           const std::string& hash, std::uint64_t next_step,
                           const streams::BatchSource& src,
                           std::span<const double> params,
                           const optim::AnyState& state) {
  bytes::Writer w;
  w.u32(kCkptMagic);
  w.u32(kCkptVersion);
  w.str(hash);
  w.str(config_to_json(cfg).dump());
  w.u64(next_step);
  w.u64(src.epoch());
  w.u64(src.cursor());
  w.u64(params.size());
  w.f64_span(params);
  const std::vector<std::uint8_t> blob = serialize_any(state);
  w.u64(blob.size());
  w.raw(blob);
  bytes::write_file(path, w.data());
}

// The run loop shared by fresh runs and resumes.  `ck` restores parameters,
// optimizer state, and the stream position before any step executes.
RunResult run_with(const ExperimentConfig& cfg, const Checkpoint* ck) {
  validate(cfg);
  if (cfg.out_dir.empty())
    throw ConfigError("invalid experiment config:\n  - out_dir is required");

  models::Model model = build_model(cfg.model);
  const std::size_t n = model.param_count();
  const std::string hash = config_hash(cfg);

  std::vector<std::uint64_t> groups;
  if (cfg.optimizer.per_layer_projection) groups = model.layer_group_sizes();
  optim::AnyState state = make_state(cfg.optimizer, n, std::move(groups));

  if (ck) {
    if (ck->params.size() != n)
      throw DecodeError("checkpoint holds " + std::to_string(ck->params.size()) +
                        " parameters but the model has " + std::to_string(n));
    if (ck->next_step > cfg.schedule.total_steps)
      throw ConfigError("checkpoint is at step " + std::to_string(ck->next_step) +
                        ", past total_steps " +
                        std::to_string(cfg.schedule.total_steps));
    optim::AnyState loaded = optim::deserialize_state(ck->optimizer_blob);
    if (kind_of(loaded) != cfg.optimizer.kind)
      throw DecodeError("checkpoint optimizer is " +
                        std::string(name_of(kind_of(loaded))) +
                        " but the config wants " +
                        std::string(name_of(cfg.optimizer.kind)));
    if (ortho_of(loaded).c.size() != n)
      throw DecodeError("checkpoint optimizer state does not match the model size");
    model.params = ck->params;
    state = std::move(loaded);
  } else {
    model.init_params(rng::derive(cfg.seed, kTagModelInit));
  }

  // Training data: a live synthetic stream, or a recorded replay of one.
  std::unique_ptr<streams::BatchSource> train;
  if (cfg.replay_file.empty()) {
    train = std::make_unique<streams::Stream>(cfg.stream);
  } else {
    auto rr = std::make_unique<streams::ReplayReader>(cfg.replay_file);
    if (rr->input_dim() != cfg.stream.input_dim ||
        rr->output_dim() != cfg.stream.output_dim)
      throw ConfigError("replay file dimensions (" +
                        std::to_string(rr->input_dim()) + " -> " +
                        std::to_string(rr->output_dim()) +
                        ") do not match the stream config");
    train = std::move(rr);
  }
  if (ck) train->seek(ck->stream_epoch, ck->stream_cursor);

  // The holdout stream shares every structural knob with training but draws
  // from its own seed; overlap windows are disabled so one epoch means one
  // visit per sample.
  streams::StreamConfig hold_cfg = cfg.stream;
  hold_cfg.seed = cfg.eval.holdout_seed;
  hold_cfg.stride1_overlap = false;
  streams::Stream holdout(hold_cfg);

  // Output files, all claimed before the first step runs.
  namespace fs = std::filesystem;
  try {
    fs::create_directories(fs::path(cfg.out_dir));
  } catch (const fs::filesystem_error& e) {
    throw ConfigError("cannot create out_dir " + cfg.out_dir + ": " + e.what());
  }
  const std::string telemetry_path = cfg.out_dir + "/telemetry.csv";
  const std::string holdout_path = cfg.out_dir + "/holdout.csv";
  const std::string summary_path = cfg.out_dir + "/summary.json";
  const std::string ckpt_path = cfg.out_dir + "/checkpoint.bin";
  for (const std::string& p : {summary_path, ckpt_path}) {
    std::FILE* f = std::fopen(p.c_str(), "wb");
    if (!f) throw ConfigError("out_dir is not writable: cannot create " + p);
    std::fclose(f);
  }

  telemetry::Recorder recorder;
  try {
    recorder.open_csv(telemetry_path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("out_dir is not writable: ") + e.what());
  }
  FilePtr hold_csv = open_out(holdout_path);
  std::fputs("step,holdout_loss\n", hold_csv.get());

  RunResult res;
  res.out_dir = cfg.out_dir;

  auto emit_eval = [&](std::uint64_t step) {
    const double hl = holdout_loss(model, holdout);
    std::fprintf(hold_csv.get(), "%llu,%.17g\n",
                 static_cast<unsigned long long>(step), hl);
    res.holdout_curve.emplace_back(step, hl);
    return hl;
  };

  const std::uint64_t total = cfg.schedule.total_steps;
  const std::uint64_t start = ck ? ck->next_step : 0;
  std::vector<double> grad(n), micro(n), prev_snap(n), c_snap(n);
  std::uint64_t rejected = 0;

  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t t = start; t < total; ++t) {
    // Effective gradient and loss for this step: the mean over
    // accumulate_steps consecutive micro-batches.
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss_acc = 0.0;
    for (std::uint64_t k = 0; k < cfg.accumulate_steps; ++k) {
      std::optional<models::Batch> b = train->next_batch();
      if (!b) {
        train->advance_epoch();
        b = train->next_batch();
        OG_CHECK(b.has_value());
      }
      loss_acc += models::loss_and_grad(model, *b, micro);
      for (std::size_t i = 0; i < n; ++i) grad[i] += micro[i];
    }
    if (cfg.accumulate_steps > 1) {
      const double inv = 1.0 / static_cast<double>(cfg.accumulate_steps);
      loss_acc *= inv;
      for (std::size_t i = 0; i < n; ++i) grad[i] *= inv;
    }

    // History as the optimizer saw it before this step, for the telemetry row.
    const optim::OrthoState& os = ortho_of(state);
    prev_snap.assign(os.prev_raw.begin(), os.prev_raw.end());
    c_snap.assign(os.c.begin(), os.c.end());

    const double lr_t = scheduled_lr(cfg.schedule, cfg.optimizer.lr, t);
    const optim::StepResult r =
        do_step(state, model.params, grad, cfg.optimizer.lr_scale, lr_t);
    if (r.status != optim::StepStatus::ok) {
      // The batch is consumed but nothing was committed and no row is
      // recorded.  A run where more than 1% of steps reject is broken.
      ++rejected;
      if (rejected * 100 > total)
        throw StepFailureError(
            "aborting run: " + std::to_string(rejected) +
            " non-finite steps rejected out of " + std::to_string(total));
      continue;
    }

    recorder.record(t, loss_acc, grad, prev_snap, c_snap, r.applied,
                    lr_t * r.lr_scale);

    const std::uint64_t done = t + 1;
    if (cfg.eval.eval_every > 0 && done % cfg.eval.eval_every == 0 &&
        done < total)
      emit_eval(done);
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 &&
        done < total) {
      char name[32];
      std::snprintf(name, sizeof name, "/checkpoint_%06llu.bin",
                    static_cast<unsigned long long>(done));
      write_checkpoint_file(cfg.out_dir + name, cfg, hash, done, *train,
                            model.params, state);
    }
  }
  // A zero-step run (or a resume of an already-finished one) has nothing to
  // summarize; the empty-run error surfaces here, before final artifacts.
  res.train = recorder.summary();

  res.holdout_final_loss = emit_eval(total);
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  write_checkpoint_file(ckpt_path, cfg, hash, total, *train, model.params,
                        state);

  res.rejected_steps = rejected;
  res.final_params = model.params;

  json s;
  s["config_hash"] = hash;
  s["degenerate_count"] = res.train.degenerate_count;
  s["final_loss"] = res.train.final_loss;
  s["holdout_final_loss"] = res.holdout_final_loss;
  s["mean_cos_raw_prev"] = res.train.mean_cos_raw_prev;
  s["mean_cos_used_prev"] = res.train.mean_cos_used_prev;
  s["mean_loss_last_100"] = res.train.mean_loss_last_k;
  s["rejected_steps"] = res.rejected_steps;
  s["seed"] = cfg.seed;
  s["steps"] = res.train.steps;
  s["wall_clock_seconds"] = res.wall_seconds;
  write_text(summary_path, s.dump(2) + "\n");

  recorder.close();
  return res;
}

bool axis_is_integer(const std::string& axis) {
  return axis == "batch_size" || axis == "n_sources" ||
         axis == "accumulate_steps";
}

void apply_axis(ExperimentConfig& c, const std::string& axis, double v) {
  if (axis == "lr") {
    c.optimizer.lr = v;
  } else if (axis == "weight_decay") {
    c.optimizer.weight_decay = v;
  } else if (axis == "eps") {
    c.optimizer.eps = v;
  } else if (axis == "alpha") {
    c.optimizer.alpha = v;
  } else if (axis == "beta") {
    c.optimizer.beta = v;
  } else if (axis == "rho") {
    c.stream.rho = v;
  } else if (axis == "drift") {
    c.stream.drift = v;
  } else if (axis == "noise_sigma") {
    c.stream.noise_sigma = v;
  } else if (axis == "n_sources") {
    c.stream.n_sources = static_cast<std::uint32_t>(v);
  } else if (axis == "accumulate_steps") {
    c.accumulate_steps = static_cast<std::uint64_t>(v);
  } else if (axis == "batch_size") {
    // Hold the sample budget fixed: fewer samples per batch, more steps.
    const double scale = static_cast<double>(c.stream.batch_size) / v;
    c.stream.batch_size = static_cast<std::uint32_t>(v);
    const auto rescale = [scale](std::uint64_t steps) {
      return static_cast<std::uint64_t>(
          std::llround(static_cast<double>(steps) * scale));
    };
    c.schedule.total_steps = std::max<std::uint64_t>(1, rescale(c.schedule.total_steps));
    c.schedule.warmup_steps =
        std::min(c.schedule.total_steps, rescale(c.schedule.warmup_steps));
  } else {
    contract_failure("unreachable sweep axis", __FILE__, __LINE__);
  }
}

std::string format_value(const std::string& axis, double v) {
  char buf[32];
  if (axis_is_integer(axis))
    std::snprintf(buf, sizeof buf, "%llu",
                  static_cast<unsigned long long>(v));
  else
    std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

// Defined on t in [0, total_steps]; the endpoint is never stepped but makes
// the decay's closed form checkable (cosine decay reaches exactly 0 there).
double scheduled_lr(const ScheduleConfig& s, double base_lr, std::uint64_t t) {
  OG_CHECK(t <= s.total_steps && s.warmup_steps <= s.total_steps);
  if (t < s.warmup_steps)
    return base_lr * static_cast<double>(t + 1) /
           static_cast<double>(s.warmup_steps);
  if (!s.cosine_decay) return base_lr;
  const std::uint64_t span = s.total_steps - s.warmup_steps;
  if (span == 0) return base_lr;
  const double progress =
      static_cast<double>(t - s.warmup_steps) / static_cast<double>(span);
  return base_lr * 0.5 * (1.0 + std::cos(kPi * progress));
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object())
    throw ConfigError(
        "invalid experiment config:\n  - top level must be a JSON object");

  Errors errs;
  ExperimentConfig cfg;

  Section top(&j, "", &errs);
  cfg.seed = top.uint("seed", 0);
  cfg.out_dir = top.str("out_dir", "");
  cfg.accumulate_steps = top.uint("accumulate_steps", 1);
  cfg.checkpoint_every = top.uint("checkpoint_every", 0);
  cfg.replay_file = top.str("replay_file", "");
  top.finish({"seed", "out_dir", "model", "stream", "optimizer", "schedule",
              "eval", "accumulate_steps", "checkpoint_every", "replay_file"});

  Section model(subobject(j, "model", /*required=*/true, errs), "model", &errs);
  cfg.model.kind = model.choice("kind", models::ModelKind::linear,
                                {{"linear", models::ModelKind::linear},
                                 {"mlp", models::ModelKind::mlp}});
  cfg.model.activation =
      model.choice("activation", models::Activation::tanh_act,
                   {{"tanh", models::Activation::tanh_act},
                    {"relu", models::Activation::relu}});
  if (model.has("shape")) {
    const json& v = j["model"]["shape"];
    std::vector<std::size_t> shape;
    bool ok = v.is_array() && v.size() >= 2;
    if (ok)
      for (const json& e : v) {
        std::uint64_t width = 0;
        if (!Section::json_uint(e, width) || width == 0) {
          ok = false;
          break;
        }
        shape.push_back(static_cast<std::size_t>(width));
      }
    if (!ok)
      errs.add(
          "model.shape must be an array of at least two positive integers");
    else
      cfg.model.shape = std::move(shape);
  } else {
    errs.add("model.shape is required");
  }
  model.finish({"kind", "shape", "activation"});

  Section stream(subobject(j, "stream", /*required=*/true, errs), "stream",
                 &errs);
  streams::StreamConfig& sc = cfg.stream;
  sc.n_sources = static_cast<std::uint32_t>(stream.uint("n_sources", 1));
  sc.steps_per_source =
      static_cast<std::uint32_t>(stream.uint("steps_per_source", 1));
  sc.input_dim = static_cast<std::uint32_t>(stream.uint("input_dim", 1));
  sc.output_dim = static_cast<std::uint32_t>(stream.uint("output_dim", 1));
  sc.rho = stream.num("rho", 0.0);
  sc.drift = stream.num("drift", 0.0);
  sc.noise_sigma = stream.num("noise_sigma", 0.0);
  sc.batch_size = static_cast<std::uint32_t>(stream.uint("batch_size", 1));
  sc.strategy = stream.choice(
      "strategy", streams::BatchStrategy::sequential_time,
      {{"sequential_time", streams::BatchStrategy::sequential_time},
       {"sequential_video", streams::BatchStrategy::sequential_video},
       {"shuffled", streams::BatchStrategy::shuffled}});
  sc.seed = stream.has("seed") ? stream.uint("seed", 0) : cfg.seed;
  sc.stride1_overlap = stream.flag("stride1_overlap", false);
  stream.finish({"n_sources", "steps_per_source", "input_dim", "output_dim",
                 "rho", "drift", "noise_sigma", "batch_size", "strategy",
                 "seed", "stride1_overlap"});

  Section opt(subobject(j, "optimizer", /*required=*/false, errs), "optimizer",
              &errs);
  OptimizerSpec& os = cfg.optimizer;
  os.kind = opt.choice("kind", optim::OptimizerKind::adamw,
                       {{"sgd", optim::OptimizerKind::sgd},
                        {"adamw", optim::OptimizerKind::adamw},
                        {"rmsprop", optim::OptimizerKind::rmsprop}});
  os.lr = opt.num("lr", os.lr);
  os.weight_decay = opt.num("weight_decay", os.weight_decay);
  os.beta1 = opt.num("beta1", os.beta1);
  os.beta2 = opt.num("beta2", os.beta2);
  os.eps = opt.num("eps", os.eps);
  os.alpha = opt.num("alpha", os.alpha);
  os.ortho = opt.flag("ortho", os.ortho);
  os.beta = opt.num("beta", os.beta);
  os.per_layer_projection =
      opt.flag("per_layer_projection", os.per_layer_projection);
  os.lr_scale = opt.choice("lr_scale", optim::LrScaleMode::none,
                           {{"none", optim::LrScaleMode::none},
                            {"slower", optim::LrScaleMode::slower}});
  opt.finish({"kind", "lr", "weight_decay", "beta1", "beta2", "eps", "alpha",
              "ortho", "beta", "per_layer_projection", "lr_scale"});

  Section sched(subobject(j, "schedule", /*required=*/false, errs), "schedule",
                &errs);
  cfg.schedule.total_steps = sched.uint("total_steps", 1);
  cfg.schedule.warmup_steps = sched.uint("warmup_steps", 0);
  cfg.schedule.cosine_decay = sched.flag("cosine_decay", false);
  sched.finish({"total_steps", "warmup_steps", "cosine_decay"});

  Section eval(subobject(j, "eval", /*required=*/false, errs), "eval", &errs);
  cfg.eval.eval_every = eval.uint("eval_every", 0);
  cfg.eval.holdout_seed = eval.has("holdout_seed")
                              ? eval.uint("holdout_seed", 0)
                              : rng::derive(sc.seed, kTagHoldout);
  eval.finish({"eval_every", "holdout_seed"});

  errs.raise_if_any();
  validate(cfg);
  return cfg;
}

nlohmann::json load_config_json(const std::string& path) {
  std::vector<std::uint8_t> data;
  try {
    data = bytes::read_file(path);
  } catch (const DecodeError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  try {
    return json::parse(data.begin(), data.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

ExperimentConfig load_config(const std::string& path) {
  return config_from_json(load_config_json(path));
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["accumulate_steps"] = cfg.accumulate_steps;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["replay_file"] = cfg.replay_file;
  j["model"] = {{"kind", name_of(cfg.model.kind)},
                {"shape", cfg.model.shape},
                {"activation", name_of(cfg.model.activation)}};
  j["stream"] = {{"n_sources", cfg.stream.n_sources},
                 {"steps_per_source", cfg.stream.steps_per_source},
                 {"input_dim", cfg.stream.input_dim},
                 {"output_dim", cfg.stream.output_dim},
                 {"rho", cfg.stream.rho},
                 {"drift", cfg.stream.drift},
                 {"noise_sigma", cfg.stream.noise_sigma},
                 {"batch_size", cfg.stream.batch_size},
                 {"strategy", name_of(cfg.stream.strategy)},
                 {"seed", cfg.stream.seed},
                 {"stride1_overlap", cfg.stream.stride1_overlap}};
  j["optimizer"] = {{"kind", name_of(cfg.optimizer.kind)},
                    {"lr", cfg.optimizer.lr},
                    {"weight_decay", cfg.optimizer.weight_decay},
                    {"beta1", cfg.optimizer.beta1},
                    {"beta2", cfg.optimizer.beta2},
                    {"eps", cfg.optimizer.eps},
                    {"alpha", cfg.optimizer.alpha},
                    {"ortho", cfg.optimizer.ortho},
                    {"beta", cfg.optimizer.beta},
                    {"per_layer_projection", cfg.optimizer.per_layer_projection},
                    {"lr_scale", name_of(cfg.optimizer.lr_scale)}};
  j["schedule"] = {{"total_steps", cfg.schedule.total_steps},
                   {"warmup_steps", cfg.schedule.warmup_steps},
                   {"cosine_decay", cfg.schedule.cosine_decay}};
  j["eval"] = {{"eval_every", cfg.eval.eval_every},
               {"holdout_seed", cfg.eval.holdout_seed}};
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = config_to_json(cfg);
  j.erase("out_dir");
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void validate(const ExperimentConfig& cfg) {
  Errors errs;
  validate_into(cfg, errs);
  errs.raise_if_any();
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  return run_with(cfg, nullptr);
}

Checkpoint read_checkpoint(const std::string& path) {
  const std::vector<std::uint8_t> data = bytes::read_file(path);
  bytes::Reader r(data);
  if (r.u32() != kCkptMagic)
    throw DecodeError("not a checkpoint file (bad magic)");
  const std::uint32_t ver = r.u32();
  if (ver != kCkptVersion)
    throw DecodeError("unsupported checkpoint version " + std::to_string(ver));
  Checkpoint ck;
  ck.config_hash = r.str();
  ck.config_json = r.str();
  ck.next_step = r.u64();
  ck.stream_epoch = r.u64();
  ck.stream_cursor = r.u64();
  const std::uint64_t n = r.u64();
  if (n > r.remaining() / sizeof(double))
    throw DecodeError("checkpoint parameter count exceeds the payload");
  ck.params.resize(n);
  r.f64_into(ck.params);
  const std::uint64_t blob_len = r.u64();
  if (blob_len > r.remaining())
    throw DecodeError("checkpoint optimizer blob exceeds the payload");
  ck.optimizer_blob = r.raw(blob_len);
  r.expect_end();
  return ck;
}

RunResult resume_run(const std::string& checkpoint_path,
                     const std::string& config_path, const std::string& out_dir,
                     bool force) {
  const Checkpoint ck = read_checkpoint(checkpoint_path);

  json embedded;
  try {
    embedded = json::parse(ck.config_json);
  } catch (const json::parse_error& e) {
    throw DecodeError(std::string("checkpoint embeds malformed config: ") +
                      e.what());
  }
  ExperimentConfig cfg = config_from_json(embedded);

  if (!config_path.empty()) {
    ExperimentConfig given = load_config(config_path);
    const std::string given_hash = config_hash(given);
    if (given_hash != ck.config_hash && !force)
      throw ConfigError("refusing to resume: config hash " + given_hash +
                        " does not match the checkpoint's " + ck.config_hash +
                        " (pass force to override)");
    cfg = std::move(given);
  }
  if (!out_dir.empty()) cfg.out_dir = out_dir;

  return run_with(cfg, &ck);
}

const std::vector<std::string>& sweep_axes() {
  static const std::vector<std::string> axes = {
      "lr",  "weight_decay", "eps",         "alpha",
      "beta", "rho",         "drift",       "noise_sigma",
      "batch_size", "n_sources", "accumulate_steps"};
  return axes;
}

std::vector<SweepEntry> run_sweep(const ExperimentConfig& base,
                                  const std::string& axis,
                                  const std::vector<double>& values,
                                  const std::string& out_dir) {
  const auto& axes = sweep_axes();
  if (std::find(axes.begin(), axes.end(), axis) == axes.end()) {
    std::string valid;
    for (const std::string& a : axes) {
      if (!valid.empty()) valid += ", ";
      valid += a;
    }
    throw ConfigError("unknown sweep axis \"" + axis + "\"; valid axes: " +
                      valid);
  }
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  for (double v : values) {
    if (!std::isfinite(v))
      throw ConfigError("sweep values must be finite");
    if (axis_is_integer(axis) &&
        (v < 1.0 || v != std::floor(v) || v > 4294967295.0))
      throw ConfigError("sweep axis \"" + axis +
                        "\" takes positive integer values");
  }
  if (out_dir.empty()) throw ConfigError("sweep needs an output directory");

  namespace fs = std::filesystem;
  try {
    fs::create_directories(fs::path(out_dir));
  } catch (const fs::filesystem_error& e) {
    throw ConfigError("cannot create sweep directory " + out_dir + ": " +
                      e.what());
  }

  std::vector<SweepEntry> entries;
  entries.reserve(values.size());
  for (double v : values) {
    ExperimentConfig cfg = base;
    apply_axis(cfg, axis, v);
    cfg.out_dir = out_dir + "/" + axis + "=" + format_value(axis, v);
    SweepEntry e;
    e.value = v;
    e.run_dir = cfg.out_dir;
    e.result = run_experiment(cfg);
    entries.push_back(std::move(e));
  }

  FilePtr f = open_out(out_dir + "/sweep.csv");
  std::fputs(
      "axis,value,final_loss,holdout_final_loss,mean_cos_raw_prev,"
      "mean_cos_used_prev,degenerate_count,steps\n",
      f.get());
  for (const SweepEntry& e : entries)
    std::fprintf(f.get(), "%s,%s,%.17g,%.17g,%.17g,%.17g,%llu,%llu\n",
                 axis.c_str(), format_value(axis, e.value).c_str(),
                 e.result.train.final_loss, e.result.holdout_final_loss,
                 e.result.train.mean_cos_raw_prev,
                 e.result.train.mean_cos_used_prev,
                 static_cast<unsigned long long>(e.result.train.degenerate_count),
                 static_cast<unsigned long long>(e.result.train.steps));
  return entries;
}

ComparisonResult run_comparison(const ExperimentConfig& cfg,
                                const std::string& out_dir) {
  validate(cfg);
  if (cfg.optimizer.kind == optim::OptimizerKind::rmsprop)
    throw ConfigError(
        "comparison needs an optimizer with the slower scaling; rmsprop has "
        "none");
  if (out_dir.empty()) throw ConfigError("comparison needs an output directory");

  namespace fs = std::filesystem;
  try {
    fs::create_directories(fs::path(out_dir));
  } catch (const fs::filesystem_error& e) {
    throw ConfigError("cannot create comparison directory " + out_dir + ": " +
                      e.what());
  }

  // Every arm trains from the same recorded batches, so the data is
  // byte-identical across arms by construction.
  std::string replay = cfg.replay_file;
  if (replay.empty()) {
    replay = out_dir + "/replay.bin";
    streams::dump_replay(cfg.stream,
                         cfg.schedule.total_steps * cfg.accumulate_steps,
                         replay);
  }

  const auto arm = [&](const char* name, bool ortho,
                       optim::LrScaleMode mode) {
    ExperimentConfig c = cfg;
    c.replay_file = replay;
    c.out_dir = out_dir + "/" + name;
    c.optimizer.ortho = ortho;
    c.optimizer.lr_scale = mode;
    return run_experiment(c);
  };

  ComparisonResult res;
  res.base = arm("base", false, optim::LrScaleMode::none);
  res.ortho = arm("ortho", true, optim::LrScaleMode::none);
  res.slower = arm("slower", false, optim::LrScaleMode::slower);

  FilePtr f = open_out(out_dir + "/compare.csv");
  std::fputs(
      "arm,final_loss,holdout_final_loss,mean_cos_raw_prev,"
      "mean_cos_used_prev,degenerate_count\n",
      f.get());
  const auto row = [&](const char* name, const RunResult& r) {
    std::fprintf(f.get(), "%s,%.17g,%.17g,%.17g,%.17g,%llu\n", name,
                 r.train.final_loss, r.holdout_final_loss,
                 r.train.mean_cos_raw_prev, r.train.mean_cos_used_prev,
                 static_cast<unsigned long long>(r.train.degenerate_count));
  };
  row("base", res.base);
  row("ortho", res.ortho);
  row("slower", res.slower);
  return res;
}

}  // namespace orthograd::harness
