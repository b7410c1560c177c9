#pragma once

#include <span>
#include <variant>
#include <vector>

#include "nodeselect/graph.hpp"
#include "nodeselect/kernels.hpp"
#include "nodeselect/matrix.hpp"

namespace nodeselect {

enum class GateMode { Hard, Soft };

// How gradients cross the hard gate. StraightThrough treats the step as the
// identity (training). Frozen treats the gate pattern as a constant, which is
// the exact gradient whenever no p_hat crosses T.
enum class GateBackward { StraightThrough, Frozen };

struct SimpleLayerParams {
  Param w;   // F' x F
  Param w0;  // 1 x F'
  Param w1;  // 1 x 2F'
  double threshold = 0.4;

  SimpleLayerParams() = default;
  SimpleLayerParams(std::size_t in_dim, std::size_t out_dim, double t)
      : w(out_dim, in_dim), w0(1, out_dim), w1(1, 2 * out_dim), threshold(t) {}

  std::size_t in_dim() const noexcept { return w.value.cols(); }
  std::size_t out_dim() const noexcept { return w.value.rows(); }
};

struct ComplexLayerParams {
  Param w;   // F' x F
  Param w0;  // 1 x F'
  Param w2;  // 1 x (F' + Q)
  Param w3;  // 1 x 2F'
  double threshold = 0.4;
  std::size_t depth = 2;

  ComplexLayerParams() = default;
  ComplexLayerParams(std::size_t in_dim, std::size_t out_dim, double t, std::size_t q);

  std::size_t in_dim() const noexcept { return w.value.cols(); }
  std::size_t out_dim() const noexcept { return w.value.rows(); }
};

// p_hat_i = logistic(W0 . s_i), s = neighbor_sum(WX).
std::vector<double> compute_sensitivity(const Graph& g, const DenseMatrix& wx, const Param& w0);
std::vector<double> sensitivity_from_sum(const DenseMatrix& neighbor_total, const DenseMatrix& w0);

// Hard: 1 if p_hat >= T else 0. Soft: p_hat.
std::vector<double> apply_gate(std::span<const double> p_hat, double threshold, GateMode mode);

// Fraction of nodes with p_hat >= T.
double selection_fraction(std::span<const double> p_hat, double threshold);

struct SelectiveAggregate {
  DenseMatrix a;               // A_i = sum_{j in N(i)} alpha_j gate_j WX_j
  std::vector<double> alpha;   // logistic(W1 . [u_i || s_i])
  DenseMatrix gated_total;     // u = neighbor_sum(WX, gate)
  DenseMatrix neighbor_total;  // s = neighbor_sum(WX)
};

SelectiveAggregate selective_aggregate(const Graph& g, const DenseMatrix& wx, std::span<const double> gate,
                                       const Param& w1);
// Same, reusing an already computed s.
SelectiveAggregate selective_aggregate(const Graph& g, const DenseMatrix& wx, std::span<const double> gate,
                                       const Param& w1, DenseMatrix neighbor_total);

// Everything the simple layer computes in its forward pass.
struct SimpleLayerTrace {
  DenseMatrix wx;
  DenseMatrix neighbor_total;
  DenseMatrix gated_total;
  DenseMatrix a;
  DenseMatrix h;
  std::vector<double> p_hat;
  std::vector<double> gate;
  std::vector<double> alpha;
  double selection_fraction = 0.0;
};

// H_i = act(WX_i) + act(A_i)
SimpleLayerTrace simple_layer_forward(const Graph& g, const DenseMatrix& x, const SimpleLayerParams& p, GateMode mode,
                                      Activation act = Activation::Relu);

// Accumulates parameter gradients into p.*.grad. Returns dL/dX when
// want_input_grad is set, otherwise an empty matrix.
DenseMatrix simple_layer_backward(const Graph& g, const DenseMatrix& x, SimpleLayerParams& p,
                                  const SimpleLayerTrace& tr, const DenseMatrix& upstream, GateMode mode,
                                  Activation act, GateBackward gb, bool want_input_grad);

// P^(0) = selected, P^(q) = nodes at exact hop distance q from the selected
// set, for q < depth. Each set is sorted ascending.
std::vector<std::vector<NodeId>> frontier_sets(const Graph& g, std::span<const NodeId> selected, std::size_t depth);

struct ComplexLayerTrace {
  DenseMatrix wx;
  DenseMatrix neighbor_total;
  std::vector<double> p_hat;
  std::vector<double> gate;
  std::vector<std::vector<NodeId>> frontiers;
  std::vector<std::vector<double>> membership;  // per depth: gate_i at q=0, 1 on P^(q) otherwise
  std::vector<std::vector<double>> depth_logistic;  // logistic(W2 . [y_i^(q) || onehot(q)])
  std::vector<std::vector<double>> alpha;           // membership * depth_logistic
  std::vector<DenseMatrix> y;                       // y^(0) .. y^(Q)
  std::vector<double> blend;                        // c_i
  DenseMatrix h;
  double selection_fraction = 0.0;
};

ComplexLayerTrace complex_layer_forward(const Graph& g, const DenseMatrix& x, const ComplexLayerParams& p,
                                        GateMode mode);

// Complex layer with an externally supplied gate (p_hat left empty, W0 unused).
ComplexLayerTrace complex_layer_forward_gated(const Graph& g, const DenseMatrix& x, const ComplexLayerParams& p,
                                              std::vector<double> gate);

DenseMatrix complex_layer_backward(const Graph& g, const DenseMatrix& x, ComplexLayerParams& p,
                                   const ComplexLayerTrace& tr, const DenseMatrix& upstream, GateMode mode,
                                   GateBackward gb, bool want_input_grad);

// Symmetric-normalised propagation D^-1/2 (Adj + I) D^-1/2 h, D the degree of Adj + I.
DenseMatrix gcn_propagate(const Graph& g, const DenseMatrix& h);

// act(Â X Wg^T)
DenseMatrix gcn_baseline_forward(const Graph& g, const DenseMatrix& x, const Param& wg,
                                 Activation act = Activation::Relu);

}  // namespace nodeselect
