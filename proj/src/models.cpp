#include "orthograd/models.hpp"

#include <cmath>
#include <cstring>

#include "orthograd/common.hpp"
#include "orthograd/rng.hpp"

namespace orthograd::models {

namespace {

double activate(Activation a, double z) {
  return a == Activation::tanh_act ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

// Derivative in terms of z and the already-computed activation value.
double activate_grad(Activation a, double z, double act) {
  return a == Activation::tanh_act ? 1.0 - act * act : (z > 0.0 ? 1.0 : 0.0);
}

}  // namespace

Model Model::make_linear(std::size_t in, std::size_t out) {
  OG_CHECK(in > 0 && out > 0);
  Model m;
  m.kind = ModelKind::linear;
  m.shape = {in, out};
  m.params.assign(m.param_count(), 0.0);
  return m;
}

Model Model::make_mlp(std::vector<std::size_t> shape, Activation act) {
  OG_CHECK(shape.size() >= 2);
  for (std::size_t d : shape) OG_CHECK(d > 0);
  Model m;
  m.kind = ModelKind::mlp;
  m.activation = act;
  m.shape = std::move(shape);
  m.params.assign(m.param_count(), 0.0);
  return m;
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < shape.size(); ++l)
    n += shape[l + 1] * shape[l] + shape[l + 1];
  return n;
}

std::vector<std::uint64_t> Model::layer_group_sizes() const {
  std::vector<std::uint64_t> sizes;
  for (std::size_t l = 0; l + 1 < shape.size(); ++l) {
    sizes.push_back(shape[l + 1] * shape[l]);
    sizes.push_back(shape[l + 1]);
  }
  return sizes;
}

void Model::init_params(std::uint64_t seed) {
  std::size_t off = 0;
  std::uint64_t draw = 0;
  for (std::size_t l = 0; l + 1 < shape.size(); ++l) {
    const std::size_t fan_in = shape[l];
    const std::size_t rows = shape[l + 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < rows * fan_in; ++i)
      params[off + i] = scale * rng::normal(seed, draw++);
    off += rows * fan_in;
    for (std::size_t i = 0; i < rows; ++i) params[off + i] = 0.0;
    off += rows;
  }
  OG_CHECK(off == params.size());
}

void Model::forward(std::span<const double> x, std::span<double> y) const {
  OG_CHECK(x.size() == input_dim() && y.size() == output_dim());
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < shape.size(); ++l) {
    const std::size_t in = shape[l];
    const std::size_t out = shape[l + 1];
    const double* w = params.data() + off;
    const double* b = params.data() + off + out * in;
    next.assign(out, 0.0);
    for (std::size_t r = 0; r < out; ++r) {
      double z = b[r];
      for (std::size_t c = 0; c < in; ++c) z += w[r * in + c] * cur[c];
      next[r] = (l + 2 < shape.size()) ? activate(activation, z) : z;
    }
    cur.swap(next);
    off += out * in + out;
  }
  std::copy(cur.begin(), cur.end(), y.begin());
}

double loss_sum(const Model& m, const Batch& b) {
  OG_CHECK(b.input_dim == m.input_dim() && b.output_dim == m.output_dim());
  std::vector<double> pred(m.output_dim());
  double total = 0.0;
  const double inv_out = 1.0 / static_cast<double>(m.output_dim());
  for (std::size_t i = 0; i < b.size; ++i) {
    m.forward(b.input(i), pred);
    const auto y = b.target(i);
    double s = 0.0;
    for (std::size_t j = 0; j < pred.size(); ++j) {
      const double e = pred[j] - y[j];
      s += e * e;
    }
    total += s * inv_out;
  }
  return total;
}

double loss(const Model& m, const Batch& b) {
  OG_CHECK(b.size > 0);
  return loss_sum(m, b) / static_cast<double>(b.size);
}

double loss_and_grad(const Model& m, const Batch& b, std::span<double> grad,
                     double scale) {
  OG_CHECK(b.size > 0);
  OG_CHECK(b.input_dim == m.input_dim() && b.output_dim == m.output_dim());
  OG_CHECK(grad.size() == m.param_count());
  std::fill(grad.begin(), grad.end(), 0.0);

  const std::size_t layers = m.layer_count();
  // Pre-activations and activations per layer, reused across samples.
  std::vector<std::vector<double>> z(layers), a(layers + 1);
  std::vector<std::size_t> offsets(layers);
  {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers; ++l) {
      offsets[l] = off;
      z[l].resize(m.shape[l + 1]);
      a[l + 1].resize(m.shape[l + 1]);
      off += m.shape[l + 1] * m.shape[l] + m.shape[l + 1];
    }
  }

  double total = 0.0;
  const double inv_out = 1.0 / static_cast<double>(m.output_dim());
  const double grad_coef =
      scale * 2.0 * inv_out / static_cast<double>(b.size);
  std::vector<double> delta, delta_prev;

  for (std::size_t i = 0; i < b.size; ++i) {
    const auto x = b.input(i);
    a[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t in = m.shape[l];
      const std::size_t out = m.shape[l + 1];
      const double* w = m.params.data() + offsets[l];
      const double* bias = w + out * in;
      for (std::size_t r = 0; r < out; ++r) {
        double s = bias[r];
        for (std::size_t c = 0; c < in; ++c) s += w[r * in + c] * a[l][c];
        z[l][r] = s;
        a[l + 1][r] = (l + 1 < layers) ? activate(m.activation, s) : s;
      }
    }

    const auto y = b.target(i);
    const auto& pred = a[layers];
    delta.resize(m.output_dim());
    double s = 0.0;
    for (std::size_t j = 0; j < pred.size(); ++j) {
      const double e = pred[j] - y[j];
      s += e * e;
      delta[j] = grad_coef * e;
    }
    total += s * inv_out;

    for (std::size_t l = layers; l-- > 0;) {
      const std::size_t in = m.shape[l];
      const std::size_t out = m.shape[l + 1];
      double* gw = grad.data() + offsets[l];
      double* gb = gw + out * in;
      for (std::size_t r = 0; r < out; ++r) {
        const double d = delta[r];
        for (std::size_t c = 0; c < in; ++c) gw[r * in + c] += d * a[l][c];
        gb[r] += d;
      }
      if (l == 0) break;
      const double* w = m.params.data() + offsets[l];
      delta_prev.assign(in, 0.0);
      for (std::size_t r = 0; r < out; ++r) {
        const double d = delta[r];
        for (std::size_t c = 0; c < in; ++c) delta_prev[c] += w[r * in + c] * d;
      }
      for (std::size_t c = 0; c < in; ++c)
        delta_prev[c] *= activate_grad(m.activation, z[l - 1][c], a[l][c]);
      delta.swap(delta_prev);
    }
  }
  return total / static_cast<double>(b.size);
}

std::vector<double> finite_diff_grad(const Model& m, const Batch& b, double h) {
  OG_CHECK(h > 0.0);
  Model probe = m;
  std::vector<double> grad(m.param_count());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double saved = probe.params[i];
    probe.params[i] = saved + h;
    const double up = loss(probe, b);
    probe.params[i] = saved - h;
    const double down = loss(probe, b);
    probe.params[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace orthograd::models
