#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "nodeselect/graph.hpp"
#include "nodeselect/matrix.hpp"

namespace nodeselect {

// out_i = sum_{j in N(i)} gate_j * h_j; gate_j := 1 when no gate is given.
// Accumulation follows CSR order.
DenseMatrix neighbor_sum(const Graph& g, const DenseMatrix& h, std::span<const double> gate = {});

// Row-sharded variant. Every row is reduced in the same CSR order, so the
// result is bitwise equal to neighbor_sum regardless of thread count.
DenseMatrix neighbor_sum_parallel(const Graph& g, const DenseMatrix& h, std::span<const double> gate,
                                  unsigned num_threads);

struct NeighborSumGrads {
  DenseMatrix grad_h;
  std::vector<double> grad_gate;  // empty when the forward had no gate
};

// Adjacency is symmetric, so the transpose action is neighbor_sum itself:
//   grad_h_j = gate_j * (Adj G)_j,  grad_gate_j = <(Adj G)_j, h_j>.
NeighborSumGrads neighbor_sum_backward(const Graph& g, const DenseMatrix& h, std::span<const double> gate,
                                       const DenseMatrix& upstream);

// Logistic output is clamped to the open interval (0, 1) so that thresholds
// at 0 and 1 behave as strict bounds even when exp() saturates.
double logistic(double x) noexcept;
double logistic_grad_from_output(double y) noexcept;

enum class Activation { Relu, Elu, Identity };

double activate(Activation act, double x) noexcept;
// Derivative at pre-activation x (relu'(0) := 0).
double activate_grad(Activation act, double x) noexcept;

DenseMatrix activate(Activation act, const DenseMatrix& x);
// upstream ⊙ act'(x)
DenseMatrix activate_backward(Activation act, const DenseMatrix& x, const DenseMatrix& upstream);

std::vector<double> logistic(std::span<const double> x);

// Inverted dropout. The keep-mask is drawn from the stream (seed, counter),
// so a (seed, counter) pair always produces the same mask.
struct DropoutResult {
  DenseMatrix out;
  DenseMatrix scale;  // per-entry multiplier: 0 or 1/(1-p); empty when identity
};
DropoutResult dropout(const DenseMatrix& h, double p, std::uint64_t seed, std::uint64_t counter, bool training);

struct LossResult {
  double loss = 0.0;
  DenseMatrix grad;  // d loss / d logits, zero outside the mask
};

// Mean over masked rows of -log softmax(logits_i)[label_i].
LossResult log_softmax_nll(const DenseMatrix& logits, std::span<const int> labels, const std::vector<bool>& mask);

struct AdamState {
  DenseMatrix m;
  DenseMatrix v;
  std::uint64_t t = 0;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  AdamState() = default;
  AdamState(const Param& p, double lr_, double weight_decay_)
      : m(p.value.rows(), p.value.cols()), v(p.value.rows(), p.value.cols()), lr(lr_), weight_decay(weight_decay_) {}
};

// Decoupled weight decay (value *= 1 - lr*wd), then a bias-corrected Adam
// update. The gradient is zeroed afterwards.
void adam_step(Param& p, AdamState& s);

}  // namespace nodeselect
