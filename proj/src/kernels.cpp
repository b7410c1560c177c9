#include "nodeselect/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "nodeselect/rng.hpp"

namespace nodeselect {

namespace {

void check_gate(const Graph& g, const DenseMatrix& h, std::span<const double> gate, const char* what) {
  if (h.rows() != g.num_nodes()) throw ShapeError(std::string(what) + ": h.rows must equal num_nodes");
  if (!gate.empty() && gate.size() != g.num_nodes())
    throw ShapeError(std::string(what) + ": gate length must equal num_nodes");
}

void neighbor_sum_rows(const Graph& g, const DenseMatrix& h, std::span<const double> gate, DenseMatrix& out,
                       std::size_t begin, std::size_t end) {
  const std::size_t f = h.cols();
  for (std::size_t i = begin; i < end; ++i) {
    auto orow = out.row(i);
    for (NodeId j : g.neighbors(i)) {
      auto hrow = h.row(j);
      if (gate.empty()) {
        for (std::size_t c = 0; c < f; ++c) orow[c] += hrow[c];
      } else {
        const double w = gate[j];
        for (std::size_t c = 0; c < f; ++c) orow[c] += w * hrow[c];
      }
    }
  }
}

}  // namespace

DenseMatrix neighbor_sum(const Graph& g, const DenseMatrix& h, std::span<const double> gate) {
  check_gate(g, h, gate, "neighbor_sum");
  DenseMatrix out(h.rows(), h.cols());
  neighbor_sum_rows(g, h, gate, out, 0, h.rows());
  return out;
}

DenseMatrix neighbor_sum_parallel(const Graph& g, const DenseMatrix& h, std::span<const double> gate,
                                  unsigned num_threads) {
  check_gate(g, h, gate, "neighbor_sum_parallel");
  DenseMatrix out(h.rows(), h.cols());
  const std::size_t n = h.rows();
  num_threads = std::max(1u, std::min<unsigned>(num_threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (num_threads == 1) {
    neighbor_sum_rows(g, h, gate, out, 0, n);
    return out;
  }
  std::vector<std::thread> workers;
  const std::size_t chunk = (n + num_threads - 1) / num_threads;
  for (unsigned t = 0; t < num_threads; ++t) {
    const std::size_t b = std::min(n, t * chunk);
    const std::size_t e = std::min(n, b + chunk);
    workers.emplace_back([&, b, e] { neighbor_sum_rows(g, h, gate, out, b, e); });
  }
  for (auto& w : workers) w.join();
  return out;
}

NeighborSumGrads neighbor_sum_backward(const Graph& g, const DenseMatrix& h, std::span<const double> gate,
                                       const DenseMatrix& upstream) {
  check_gate(g, h, gate, "neighbor_sum_backward");
  require_shape(upstream, h.rows(), h.cols(), "neighbor_sum_backward upstream");
  NeighborSumGrads out{neighbor_sum(g, upstream), {}};
  if (!gate.empty()) {
    out.grad_gate.resize(gate.size());
    for (std::size_t j = 0; j < gate.size(); ++j) {
      auto r = out.grad_h.row(j);
      out.grad_gate[j] = dot(r, h.row(j));
      for (double& x : r) x *= gate[j];
    }
  }
  return out;
}

double logistic(double x) noexcept {
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  double y;
  if (x >= 0) {
    y = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    y = e / (1.0 + e);
  }
  return std::clamp(y, lo, hi);
}

double logistic_grad_from_output(double y) noexcept { return y * (1.0 - y); }

std::vector<double> logistic(std::span<const double> x) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = logistic(x[i]);
  return y;
}

double activate(Activation act, double x) noexcept {
  switch (act) {
    case Activation::Relu:
      return x > 0.0 ? x : 0.0;
    case Activation::Elu:
      return x > 0.0 ? x : std::expm1(x);
    case Activation::Identity:
      break;
  }
  return x;
}

double activate_grad(Activation act, double x) noexcept {
  switch (act) {
    case Activation::Relu:
      return x > 0.0 ? 1.0 : 0.0;
    case Activation::Elu:
      return x > 0.0 ? 1.0 : std::exp(x);
    case Activation::Identity:
      break;
  }
  return 1.0;
}

DenseMatrix activate(Activation act, const DenseMatrix& x) {
  DenseMatrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = activate(act, x.data()[i]);
  return y;
}

DenseMatrix activate_backward(Activation act, const DenseMatrix& x, const DenseMatrix& upstream) {
  require_shape(upstream, x.rows(), x.cols(), "activate_backward");
  DenseMatrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) g.data()[i] = upstream.data()[i] * activate_grad(act, x.data()[i]);
  return g;
}

DropoutResult dropout(const DenseMatrix& h, double p, std::uint64_t seed, std::uint64_t counter, bool training) {
  if (!(p >= 0.0) || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return {h, {}};
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::Dropout), counter}));
  const double keep_scale = 1.0 / (1.0 - p);
  DropoutResult r{DenseMatrix(h.rows(), h.cols()), DenseMatrix(h.rows(), h.cols())};
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double s = rng.uniform() < p ? 0.0 : keep_scale;
    r.scale.data()[i] = s;
    r.out.data()[i] = h.data()[i] * s;
  }
  return r;
}

LossResult log_softmax_nll(const DenseMatrix& logits, std::span<const int> labels, const std::vector<bool>& mask) {
  if (labels.size() != logits.rows() || mask.size() != logits.rows())
    throw ShapeError("log_softmax_nll: labels/mask length must equal logits rows");
  const std::size_t masked = count(mask);
  if (masked == 0) throw std::invalid_argument("log_softmax_nll: empty mask");

  LossResult r{0.0, DenseMatrix(logits.rows(), logits.cols())};
  const double inv = 1.0 / static_cast<double>(masked);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    auto z = logits.row(i);
    const auto label = static_cast<std::size_t>(labels[i]);
    if (label >= z.size()) throw ShapeError("log_softmax_nll: label exceeds logits width");
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - zmax);
    const double log_denom = std::log(denom);
    r.loss += -((z[label] - zmax) - log_denom) * inv;
    auto grow = r.grad.row(i);
    for (std::size_t c = 0; c < z.size(); ++c) grow[c] = std::exp(z[c] - zmax - log_denom) * inv;
    grow[label] -= inv;
  }
  return r;
}

void adam_step(Param& p, AdamState& s) {
  require_shape(s.m, p.value.rows(), p.value.cols(), "adam_step m");
  require_shape(s.v, p.value.rows(), p.value.cols(), "adam_step v");
  ++s.t;
  const double corr1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double corr2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  const double decay = 1.0 - s.lr * s.weight_decay;
  auto& w = p.value.data();
  auto& gr = p.grad.data();
  auto& m = s.m.data();
  auto& v = s.v.data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * gr[i];
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * gr[i] * gr[i];
    const double mhat = m[i] / corr1;
    const double vhat = v[i] / corr2;
    w[i] = w[i] * decay - s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
  p.zero_grad();
}

}  // namespace nodeselect
