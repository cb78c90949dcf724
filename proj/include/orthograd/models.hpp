#pragma once

#include <cstdint>
#include <span>
#include <vector>

// Small dense regression models over flat parameter vectors: plain linear
// maps and MLPs with tanh or relu hidden layers and a linear output.  The
// loss is mean squared error, averaged over both the batch and the output
// dimensions.  Gradient accumulation walks samples in order on one thread,
// so a gradient is a pure function of (params, batch) regardless of any
// parallelism elsewhere.

namespace orthograd::models {

enum class ModelKind { linear, mlp };
enum class Activation { tanh_act, relu };

struct Batch {
  std::size_t size = 0;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::vector<double> inputs;   // size x input_dim, row-major
  std::vector<double> targets;  // size x output_dim, row-major
  // Provenance of each sample in its stream; carried for bookkeeping and
  // replay, never consumed by the model.
  std::vector<std::uint32_t> source_ids;
  std::vector<std::uint32_t> time_indices;

  std::span<const double> input(std::size_t i) const {
    return {inputs.data() + i * input_dim, input_dim};
  }
  std::span<const double> target(std::size_t i) const {
    return {targets.data() + i * output_dim, output_dim};
  }
};

struct Model {
  ModelKind kind = ModelKind::linear;
  Activation activation = Activation::tanh_act;
  // Layer widths [in, hidden..., out]; linear models have no hidden entry.
  std::vector<std::size_t> shape;
  // Per layer: weight matrix (out x in, row-major), then bias.
  std::vector<double> params;

  static Model make_linear(std::size_t in, std::size_t out);
  static Model make_mlp(std::vector<std::size_t> shape,
                        Activation act = Activation::tanh_act);

  std::size_t input_dim() const { return shape.front(); }
  std::size_t output_dim() const { return shape.back(); }
  std::size_t layer_count() const { return shape.size() - 1; }
  std::size_t param_count() const;

  // One block per weight matrix and per bias, in parameter order; the sizes
  // sum to param_count().  Used to run the orthogonal rewrite per layer.
  std::vector<std::uint64_t> layer_group_sizes() const;

  // Weights ~ N(0, 1/fan_in) from a counter-based stream, biases zero.
  // The same seed always rebuilds the same parameters.
  void init_params(std::uint64_t seed);

  // Single-sample forward pass.
  void forward(std::span<const double> x, std::span<double> y) const;
};

// Sum over samples of the per-sample output-averaged squared error.
double loss_sum(const Model& m, const Batch& b);

// loss_sum / batch size: the quantity the optimizers minimize.
double loss(const Model& m, const Batch& b);

// Analytic gradient of `scale * loss` into grad (length param_count()).
// Returns the (unscaled) loss.
double loss_and_grad(const Model& m, const Batch& b, std::span<double> grad,
                     double scale = 1.0);

// Central finite differences of loss(); the slow oracle the analytic
// gradient is validated against.
std::vector<double> finite_diff_grad(const Model& m, const Batch& b, double h);

}  // namespace orthograd::models
