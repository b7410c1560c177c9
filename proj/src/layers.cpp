#include "nodeselect/layers.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace nodeselect {

namespace {

// z_i = sum_c w[offset + c] * m(i, c)
std::vector<double> project_rows(const DenseMatrix& m, const DenseMatrix& w, std::size_t offset) {
  std::vector<double> z(m.rows());
  auto wrow = w.row(0).subspan(offset, m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) z[i] = dot(m.row(i), wrow);
  return z;
}

// grad_w[offset + c] += sum_i coeff_i * m(i, c)
void accumulate_projection_grad(DenseMatrix& grad_w, const DenseMatrix& m, std::span<const double> coeff,
                                std::size_t offset) {
  auto g = grad_w.row(0).subspan(offset, m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (coeff[i] == 0.0) continue;
    auto r = m.row(i);
    for (std::size_t c = 0; c < r.size(); ++c) g[c] += coeff[i] * r[c];
  }
}

// dst_i += coeff_i * w[offset : offset + cols]
void scatter_projection(DenseMatrix& dst, const DenseMatrix& w, std::span<const double> coeff, std::size_t offset) {
  auto wrow = w.row(0).subspan(offset, dst.cols());
  for (std::size_t i = 0; i < dst.rows(); ++i) {
    if (coeff[i] == 0.0) continue;
    auto r = dst.row(i);
    for (std::size_t c = 0; c < r.size(); ++c) r[c] += coeff[i] * wrow[c];
  }
}

void check_input(const Graph& g, const DenseMatrix& x, const Param& w, const char* what) {
  if (x.rows() != g.num_nodes()) throw ShapeError(std::string(what) + ": X rows must equal num_nodes");
  if (x.cols() != w.value.cols())
    throw ShapeError(std::string(what) + ": X has " + std::to_string(x.cols()) + " columns, W expects " +
                     std::to_string(w.value.cols()));
}

// Sensitivity backward shared by both layer kinds: from d loss / d gate to
// the W0 gradient and the extra d loss / d WX contribution via s.
void sensitivity_backward(const Graph& g, const DenseMatrix& neighbor_total, std::span<const double> p_hat,
                          std::span<const double> grad_gate, Param& w0, GateMode mode, GateBackward gb,
                          DenseMatrix& grad_wx) {
  if (mode == GateMode::Hard && gb == GateBackward::Frozen) return;
  std::vector<double> dz0(p_hat.size());
  bool any = false;
  for (std::size_t i = 0; i < p_hat.size(); ++i) {
    dz0[i] = grad_gate[i] * logistic_grad_from_output(p_hat[i]);
    any = any || dz0[i] != 0.0;
  }
  if (!any) return;
  accumulate_projection_grad(w0.grad, neighbor_total, dz0, 0);
  DenseMatrix grad_s(neighbor_total.rows(), neighbor_total.cols());
  scatter_projection(grad_s, w0.value, dz0, 0);
  add_inplace(grad_wx, neighbor_sum(g, grad_s));
}

DenseMatrix finish_transform_backward(const DenseMatrix& x, Param& w, const DenseMatrix& grad_wx,
                                      bool want_input_grad) {
  add_inplace(w.grad, matmul_at(grad_wx, x));
  if (!want_input_grad) return {};
  return matmul(grad_wx, w.value);
}

}  // namespace

ComplexLayerParams::ComplexLayerParams(std::size_t in_dim, std::size_t out_dim, double t, std::size_t q)
    : w(out_dim, in_dim), w0(1, out_dim), w2(1, out_dim + q), w3(1, 2 * out_dim), threshold(t), depth(q) {
  if (q < 2) throw std::invalid_argument("ComplexLayerParams: depth must be >= 2");
}

std::vector<double> sensitivity_from_sum(const DenseMatrix& neighbor_total, const DenseMatrix& w0) {
  require_shape(w0, 1, neighbor_total.cols(), "sensitivity W0");
  auto z = project_rows(neighbor_total, w0, 0);
  for (double& v : z) v = logistic(v);
  return z;
}

std::vector<double> compute_sensitivity(const Graph& g, const DenseMatrix& wx, const Param& w0) {
  return sensitivity_from_sum(neighbor_sum(g, wx), w0.value);
}

std::vector<double> apply_gate(std::span<const double> p_hat, double threshold, GateMode mode) {
  std::vector<double> gate(p_hat.begin(), p_hat.end());
  if (mode == GateMode::Hard)
    for (double& v : gate) v = v >= threshold ? 1.0 : 0.0;
  return gate;
}

double selection_fraction(std::span<const double> p_hat, double threshold) {
  if (p_hat.empty()) return 0.0;
  const auto n = std::count_if(p_hat.begin(), p_hat.end(), [&](double v) { return v >= threshold; });
  return static_cast<double>(n) / static_cast<double>(p_hat.size());
}

SelectiveAggregate selective_aggregate(const Graph& g, const DenseMatrix& wx, std::span<const double> gate,
                                       const Param& w1) {
  return selective_aggregate(g, wx, gate, w1, neighbor_sum(g, wx));
}

SelectiveAggregate selective_aggregate(const Graph& g, const DenseMatrix& wx, std::span<const double> gate,
                                       const Param& w1, DenseMatrix neighbor_total) {
  require_shape(w1.value, 1, 2 * wx.cols(), "selective_aggregate W1");
  if (gate.size() != g.num_nodes()) throw ShapeError("selective_aggregate: gate length must equal num_nodes");
  SelectiveAggregate r;
  r.neighbor_total = std::move(neighbor_total);
  r.gated_total = neighbor_sum(g, wx, gate);
  auto z_u = project_rows(r.gated_total, w1.value, 0);
  auto z_s = project_rows(r.neighbor_total, w1.value, wx.cols());
  r.alpha.resize(g.num_nodes());
  std::vector<double> weight(g.num_nodes());
  for (std::size_t i = 0; i < r.alpha.size(); ++i) {
    r.alpha[i] = logistic(z_u[i] + z_s[i]);
    weight[i] = r.alpha[i] * gate[i];
  }
  r.a = neighbor_sum(g, wx, weight);
  return r;
}

SimpleLayerTrace simple_layer_forward(const Graph& g, const DenseMatrix& x, const SimpleLayerParams& p, GateMode mode,
                                      Activation act) {
  check_input(g, x, p.w, "simple_layer_forward");
  SimpleLayerTrace tr;
  tr.wx = matmul_bt(x, p.w.value);
  DenseMatrix s = neighbor_sum(g, tr.wx);
  tr.p_hat = sensitivity_from_sum(s, p.w0.value);
  tr.gate = apply_gate(tr.p_hat, p.threshold, mode);
  auto agg = selective_aggregate(g, tr.wx, tr.gate, p.w1, std::move(s));
  tr.neighbor_total = std::move(agg.neighbor_total);
  tr.gated_total = std::move(agg.gated_total);
  tr.a = std::move(agg.a);
  tr.alpha = std::move(agg.alpha);
  tr.h = activate(act, tr.wx);
  add_inplace(tr.h, activate(act, tr.a));
  tr.selection_fraction = selection_fraction(tr.p_hat, p.threshold);
  return tr;
}

DenseMatrix simple_layer_backward(const Graph& g, const DenseMatrix& x, SimpleLayerParams& p,
                                  const SimpleLayerTrace& tr, const DenseMatrix& upstream, GateMode mode,
                                  Activation act, GateBackward gb, bool want_input_grad) {
  const std::size_t n = g.num_nodes();
  const std::size_t fo = p.out_dim();
  require_shape(upstream, n, fo, "simple_layer_backward upstream");

  DenseMatrix grad_wx = activate_backward(act, tr.wx, upstream);
  const DenseMatrix grad_a = activate_backward(act, tr.a, upstream);

  // A = neighbor_sum(WX, alpha ⊙ gate)
  std::vector<double> weight(n);
  for (std::size_t i = 0; i < n; ++i) weight[i] = tr.alpha[i] * tr.gate[i];
  auto nsb = neighbor_sum_backward(g, tr.wx, weight, grad_a);
  add_inplace(grad_wx, nsb.grad_h);

  std::vector<double> grad_gate(n), dz1(n);
  for (std::size_t i = 0; i < n; ++i) {
    grad_gate[i] = nsb.grad_gate[i] * tr.alpha[i];
    dz1[i] = nsb.grad_gate[i] * tr.gate[i] * logistic_grad_from_output(tr.alpha[i]);
  }

  // alpha = logistic(W1 . [u || s])
  accumulate_projection_grad(p.w1.grad, tr.gated_total, dz1, 0);
  accumulate_projection_grad(p.w1.grad, tr.neighbor_total, dz1, fo);
  DenseMatrix grad_u(n, fo), grad_s(n, fo);
  scatter_projection(grad_u, p.w1.value, dz1, 0);
  scatter_projection(grad_s, p.w1.value, dz1, fo);

  // u = neighbor_sum(WX, gate)
  auto usb = neighbor_sum_backward(g, tr.wx, tr.gate, grad_u);
  add_inplace(grad_wx, usb.grad_h);
  for (std::size_t i = 0; i < n; ++i) grad_gate[i] += usb.grad_gate[i];

  // s = neighbor_sum(WX)
  add_inplace(grad_wx, neighbor_sum(g, grad_s));

  sensitivity_backward(g, tr.neighbor_total, tr.p_hat, grad_gate, p.w0, mode, gb, grad_wx);
  return finish_transform_backward(x, p.w, grad_wx, want_input_grad);
}

std::vector<std::vector<NodeId>> frontier_sets(const Graph& g, std::span<const NodeId> selected, std::size_t depth) {
  if (depth < 1) throw std::invalid_argument("frontier_sets: depth must be >= 1");
  constexpr std::size_t unseen = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(g.num_nodes(), unseen);
  std::vector<std::vector<NodeId>> sets(depth);
  for (NodeId v : selected) {
    if (v >= g.num_nodes()) throw std::invalid_argument("frontier_sets: node id out of range");
    if (dist[v] == unseen) {
      dist[v] = 0;
      sets[0].push_back(v);
    }
  }
  for (std::size_t q = 1; q < depth; ++q) {
    for (NodeId u : sets[q - 1])
      for (NodeId v : g.neighbors(u))
        if (dist[v] == unseen) {
          dist[v] = q;
          sets[q].push_back(v);
        }
  }
  for (auto& s : sets) std::sort(s.begin(), s.end());
  return sets;
}

namespace {

ComplexLayerTrace complex_propagate(const Graph& g, ComplexLayerTrace tr, const ComplexLayerParams& p) {
  const std::size_t n = g.num_nodes();
  const std::size_t fo = p.out_dim();
  const std::size_t q_max = p.depth;

  std::vector<NodeId> selected;
  for (std::size_t i = 0; i < n; ++i)
    if (tr.gate[i] > 0.0) selected.push_back(static_cast<NodeId>(i));
  tr.frontiers = frontier_sets(g, selected, q_max);

  tr.membership.assign(q_max, std::vector<double>(n, 0.0));
  for (std::size_t q = 0; q < q_max; ++q)
    for (NodeId v : tr.frontiers[q]) tr.membership[q][v] = q == 0 ? tr.gate[v] : 1.0;

  tr.y.clear();
  tr.y.push_back(tr.wx);
  tr.depth_logistic.assign(q_max, {});
  tr.alpha.assign(q_max, {});
  for (std::size_t q = 0; q < q_max; ++q) {
    const DenseMatrix& yq = tr.y.back();
    auto z = project_rows(yq, p.w2.value, 0);
    const double depth_term = p.w2.value(0, fo + q);
    auto& sig = tr.depth_logistic[q];
    auto& alpha = tr.alpha[q];
    sig.resize(n);
    alpha.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      sig[i] = logistic(z[i] + depth_term);
      alpha[i] = tr.membership[q][i] * sig[i];
    }
    DenseMatrix next = neighbor_sum(g, yq, alpha);
    add_inplace(next, yq);
    tr.y.push_back(std::move(next));
  }

  const DenseMatrix& y0 = tr.y.front();
  const DenseMatrix& yq = tr.y.back();
  auto z_last = project_rows(yq, p.w3.value, 0);
  auto z_first = project_rows(y0, p.w3.value, fo);
  tr.blend.resize(n);
  tr.h = DenseMatrix(n, fo);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = logistic(z_last[i] + z_first[i]);
    tr.blend[i] = c;
    auto hr = tr.h.row(i);
    auto a = y0.row(i);
    auto b = yq.row(i);
    // (1-c) y0 + c yQ, written so that yQ == y0 gives y0 exactly
    for (std::size_t k = 0; k < fo; ++k) hr[k] = a[k] + c * (b[k] - a[k]);
  }
  return tr;
}

}  // namespace

ComplexLayerTrace complex_layer_forward(const Graph& g, const DenseMatrix& x, const ComplexLayerParams& p,
                                        GateMode mode) {
  check_input(g, x, p.w, "complex_layer_forward");
  if (p.depth < 2) throw std::invalid_argument("complex_layer_forward: depth must be >= 2");
  ComplexLayerTrace tr;
  tr.wx = matmul_bt(x, p.w.value);
  tr.neighbor_total = neighbor_sum(g, tr.wx);
  tr.p_hat = sensitivity_from_sum(tr.neighbor_total, p.w0.value);
  tr.gate = apply_gate(tr.p_hat, p.threshold, mode);
  tr.selection_fraction = selection_fraction(tr.p_hat, p.threshold);
  return complex_propagate(g, std::move(tr), p);
}

ComplexLayerTrace complex_layer_forward_gated(const Graph& g, const DenseMatrix& x, const ComplexLayerParams& p,
                                              std::vector<double> gate) {
  check_input(g, x, p.w, "complex_layer_forward_gated");
  if (gate.size() != g.num_nodes()) throw ShapeError("complex_layer_forward_gated: gate length");
  ComplexLayerTrace tr;
  tr.wx = matmul_bt(x, p.w.value);
  tr.neighbor_total = neighbor_sum(g, tr.wx);
  tr.gate = std::move(gate);
  return complex_propagate(g, std::move(tr), p);
}

DenseMatrix complex_layer_backward(const Graph& g, const DenseMatrix& x, ComplexLayerParams& p,
                                   const ComplexLayerTrace& tr, const DenseMatrix& upstream, GateMode mode,
                                   GateBackward gb, bool want_input_grad) {
  const std::size_t n = g.num_nodes();
  const std::size_t fo = p.out_dim();
  const std::size_t q_max = p.depth;
  require_shape(upstream, n, fo, "complex_layer_backward upstream");

  const DenseMatrix& y0 = tr.y.front();
  const DenseMatrix& yq = tr.y.back();

  // H = y0 + c (yQ - y0), c = logistic(W3 . [yQ || y0])
  DenseMatrix grad_y(n, fo);    // w.r.t. y^(Q), then walked down to y^(0)
  DenseMatrix grad_y0(n, fo);   // direct contributions to y^(0)
  std::vector<double> dz3(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = tr.blend[i];
    auto up = upstream.row(i);
    double dc = 0.0;
    for (std::size_t k = 0; k < fo; ++k) {
      dc += up[k] * (yq(i, k) - y0(i, k));
      grad_y(i, k) = c * up[k];
      grad_y0(i, k) = (1.0 - c) * up[k];
    }
    dz3[i] = dc * logistic_grad_from_output(c);
  }
  accumulate_projection_grad(p.w3.grad, yq, dz3, 0);
  accumulate_projection_grad(p.w3.grad, y0, dz3, fo);
  scatter_projection(grad_y, p.w3.value, dz3, 0);
  scatter_projection(grad_y0, p.w3.value, dz3, fo);

  std::vector<double> grad_gate(n, 0.0);
  for (std::size_t step = q_max; step-- > 0;) {
    // y^(q+1) = y^(q) + neighbor_sum(y^(q), alpha^(q))
    const DenseMatrix& y_prev = tr.y[step];
    auto nsb = neighbor_sum_backward(g, y_prev, tr.alpha[step], grad_y);
    add_inplace(grad_y, nsb.grad_h);
    const auto& sig = tr.depth_logistic[step];
    const auto& mem = tr.membership[step];
    std::vector<double> dz2(n);
    double depth_grad = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dz2[i] = nsb.grad_gate[i] * mem[i] * logistic_grad_from_output(sig[i]);
      depth_grad += dz2[i];
      if (step == 0) grad_gate[i] += nsb.grad_gate[i] * sig[i];
    }
    accumulate_projection_grad(p.w2.grad, y_prev, dz2, 0);
    p.w2.grad(0, fo + step) += depth_grad;
    scatter_projection(grad_y, p.w2.value, dz2, 0);
  }
  add_inplace(grad_y, grad_y0);

  if (!tr.p_hat.empty())
    sensitivity_backward(g, tr.neighbor_total, tr.p_hat, grad_gate, p.w0, mode, gb, grad_y);
  return finish_transform_backward(x, p.w, grad_y, want_input_grad);
}

DenseMatrix gcn_propagate(const Graph& g, const DenseMatrix& h) {
  if (h.rows() != g.num_nodes()) throw ShapeError("gcn_propagate: h.rows must equal num_nodes");
  const std::size_t n = g.num_nodes();
  DenseMatrix out(n, h.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const double di = static_cast<double>(g.degree(i) + 1);
    auto orow = out.row(i);
    auto self = h.row(i);
    const double cs = 1.0 / std::sqrt(di * di);
    for (std::size_t c = 0; c < orow.size(); ++c) orow[c] += cs * self[c];
    for (NodeId j : g.neighbors(i)) {
      const double cj = 1.0 / std::sqrt(di * static_cast<double>(g.degree(j) + 1));
      auto hr = h.row(j);
      for (std::size_t c = 0; c < orow.size(); ++c) orow[c] += cj * hr[c];
    }
  }
  return out;
}

DenseMatrix gcn_baseline_forward(const Graph& g, const DenseMatrix& x, const Param& wg, Activation act) {
  check_input(g, x, wg, "gcn_baseline_forward");
  return activate(act, gcn_propagate(g, matmul_bt(x, wg.value)));
}

}  // namespace nodeselect
