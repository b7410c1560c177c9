#include "nodeselect/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nodeselect/rng.hpp"

namespace nodeselect {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

Graph random_graph(std::size_t n, std::size_t f, std::size_t c, double p, Rng& rng) {
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.uniform() < p) edges.emplace_back(static_cast<NodeId>(i), static_cast<NodeId>(j));
  DenseMatrix x(n, f);
  for (double& v : x.data()) v = rng.normal();
  std::vector<int> labels(n);
  for (int& l : labels) l = static_cast<int>(rng.below(c));
  return Graph::from_edges(n, edges, std::move(x), std::move(labels), static_cast<int>(c));
}

// Discrete state that must not change between the +h and -h evaluations:
// hard gates and the sign pattern of every relu input.
std::vector<char> kink_signature(const ForwardPass& pass, GateMode mode) {
  std::vector<char> sig;
  for (const auto& lp : pass.layers) {
    if (const auto* s = std::get_if<SimpleLayerTrace>(&lp.trace)) {
      for (double v : s->wx.data()) sig.push_back(v > 0.0);
      for (double v : s->a.data()) sig.push_back(v > 0.0);
      if (mode == GateMode::Hard)
        for (double v : s->gate) sig.push_back(v > 0.0);
    } else {
      const auto& c = std::get<ComplexLayerTrace>(lp.trace);
      if (mode == GateMode::Hard)
        for (double v : c.gate) sig.push_back(v > 0.0);
    }
  }
  return sig;
}

}  // namespace

GradcheckResult run_gradcheck(const GradcheckOptions& o) {
  GradcheckResult res;
  const GateMode mode = o.mode == GradcheckMode::Soft ? GateMode::Soft : GateMode::Hard;
  const GateBackward gb = o.mode == GradcheckMode::Soft ? GateBackward::StraightThrough : GateBackward::Frozen;
  std::vector<bool> all(o.nodes, true);

  for (std::size_t trial = 0; trial < o.trials; ++trial) {
    Rng rng(derive_seed(o.seed, {static_cast<std::uint64_t>(Stream::Check), trial}));
    const Graph g = random_graph(o.nodes, o.feat_dim, o.classes, o.edge_prob, rng);

    ModelConfig cfg;
    cfg.num_layers = o.layers;
    cfg.depth = o.depth;
    cfg.stacking = o.stacking;
    cfg.gate_mode = mode;
    cfg.dropout = 0.0;
    cfg.threshold = 0.5;
    cfg.seed = derive_seed(o.seed, {trial, 77});
    Model m = init_model(cfg, o.feat_dim, o.classes);
    for (Param* p : parameters(m))
      for (double& v : p->value.data()) v *= o.weight_scale;

    auto loss_of = [&](ForwardPass* keep) {
      ForwardPass pass = model_forward_pass(m, g, false);
      const double l = log_softmax_nll(pass.logits, g.labels(), all).loss;
      if (keep) *keep = std::move(pass);
      return l;
    };

    ForwardPass base;
    loss_of(&base);
    const auto base_sig = kink_signature(base, mode);
    const auto loss = log_softmax_nll(base.logits, g.labels(), all);
    model_backward(m, g, base, loss.grad, gb);

    auto params = parameters(m);
    const auto names = parameter_names(m);
    if (o.corrupt_backward && trial == 0) params[0]->grad.data()[0] *= 1.01;

    for (std::size_t k = 0; k < params.size(); ++k) {
      Param& p = *params[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p.value.data()[i];
        ForwardPass plus_pass, minus_pass;
        p.value.data()[i] = orig + o.step;
        const double plus = loss_of(&plus_pass);
        p.value.data()[i] = orig - o.step;
        const double minus = loss_of(&minus_pass);
        p.value.data()[i] = orig;
        if (kink_signature(plus_pass, mode) != base_sig || kink_signature(minus_pass, mode) != base_sig) {
          ++res.skipped;
          continue;
        }
        const double numeric = (plus - minus) / (2.0 * o.step);
        const double analytic = p.grad.data()[i];
        const double err = relative_error(analytic, numeric);
        ++res.checked;
        if (err > res.max_rel_err || res.worst.empty()) {
          res.max_rel_err = std::max(res.max_rel_err, err);
          if (err >= res.max_rel_err) {
            std::ostringstream w;
            w << "trial=" << trial << " param=" << names[k] << " index=" << i << " analytic=" << analytic
              << " numeric=" << numeric;
            res.worst = w.str();
          }
        }
      }
    }
  }
  res.passed = res.max_rel_err <= o.tolerance;
  return res;
}

}  // namespace nodeselect
