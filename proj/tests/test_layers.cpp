#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "nodeselect/layers.hpp"
#include "oracles.hpp"

using namespace nodeselect;

namespace {

void fill_normal(Param& p, Rng& rng, double scale = 1.0) {
  for (double& v : p.value.data()) v = scale * rng.normal();
}

SimpleLayerParams random_simple(std::size_t f, std::size_t fo, double t, Rng& rng) {
  SimpleLayerParams p(f, fo, t);
  fill_normal(p.w, rng);
  fill_normal(p.w0, rng);
  fill_normal(p.w1, rng);
  return p;
}

ComplexLayerParams random_complex(std::size_t f, std::size_t fo, double t, std::size_t q, Rng& rng) {
  ComplexLayerParams p(f, fo, t, q);
  fill_normal(p.w, rng);
  fill_normal(p.w0, rng);
  fill_normal(p.w2, rng, 0.5);
  fill_normal(p.w3, rng);
  return p;
}

Graph path_graph(std::size_t n, DenseMatrix x) {
  std::vector<std::pair<NodeId, NodeId>> e;
  for (std::size_t i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
  return Graph::from_edges(n, e, std::move(x), std::vector<int>(n, 0), 1);
}

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}); }

double weighted_total(const DenseMatrix& out, const DenseMatrix& up) {
  double t = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) t += out.data()[i] * up.data()[i];
  return t;
}

// Checks every coordinate of every listed Param against central differences
// of sum(upstream ⊙ H). Coordinates whose perturbation changes `signature`
// are skipped.
struct FdStats {
  double worst = 0.0;
  std::size_t checked = 0;
};

FdStats check_params(const std::vector<Param*>& params, const std::function<DenseMatrix()>& forward,
                     const std::function<std::vector<char>()>& signature, const DenseMatrix& up) {
  FdStats st;
  const auto base = signature();
  for (Param* p : params)
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double orig = p->value.data()[i];
      const double h = 1e-6;
      p->value.data()[i] = orig + h;
      const double plus = weighted_total(forward(), up);
      const bool same_plus = signature() == base;
      p->value.data()[i] = orig - h;
      const double minus = weighted_total(forward(), up);
      const bool same_minus = signature() == base;
      p->value.data()[i] = orig;
      if (!same_plus || !same_minus) continue;
      st.worst = std::max(st.worst, rel_err(p->grad.data()[i], (plus - minus) / (2 * h)));
      ++st.checked;
    }
  return st;
}

}  // namespace

TEST_CASE("sensitivity") {
  SUBCASE("W0 = 0 gives 0.5 everywhere") {
    auto c = oracle::random_case(3, 10, 4);
    Rng rng(1);
    SimpleLayerParams p = random_simple(4, 3, 0.4, rng);
    p.w0.value.fill(0.0);
    for (double v : compute_sensitivity(c.graph, matmul_bt(c.graph.features(), p.w.value), p.w0)) CHECK(v == 0.5);
  }
  SUBCASE("isolated node gives 0.5 whatever W0 is") {
    Graph g = Graph::from_edges(2, {}, DenseMatrix(2, 2, 1.0), {0, 0}, 1);
    Param w0(DenseMatrix(1, 2, std::vector<double>{7.0, -3.0}));
    for (double v : compute_sensitivity(g, g.features(), w0)) CHECK(v == 0.5);
  }
  SUBCASE("3-node path, hand-set weights") {
    // WX = X with W = I; s_0 = x_1, s_1 = x_0 + x_2, s_2 = x_1
    Graph g = path_graph(3, DenseMatrix(3, 2, std::vector<double>{1, 0, 0, 2, 3, 1}));
    Param w0(DenseMatrix(1, 2, std::vector<double>{0.5, -1.0}));
    auto p = compute_sensitivity(g, g.features(), w0);
    CHECK(p[0] == 1.0 / (1.0 + std::exp(2.0)));
    CHECK(p[1] == 1.0 / (1.0 + std::exp(-1.0)));
    CHECK(p[2] == 1.0 / (1.0 + std::exp(2.0)));
  }
}

TEST_CASE("apply_gate") {
  std::vector<double> p{0.5};
  CHECK(apply_gate(p, 0.5, GateMode::Hard)[0] == 1.0);
  CHECK(apply_gate(std::vector<double>{0.49999}, 0.5, GateMode::Hard)[0] == 0.0);
  CHECK(apply_gate(std::vector<double>{0.3}, 0.5, GateMode::Soft)[0] == 0.3);
  std::vector<double> extremes{logistic(-1e6), 1e-300, 0.5, logistic(1e6)};
  for (double g : apply_gate(extremes, 0.0, GateMode::Hard)) CHECK(g == 1.0);
  for (double g : apply_gate(extremes, 1.0, GateMode::Hard)) CHECK(g == 0.0);
  CHECK(selection_fraction(extremes, 0.0) == 1.0);
  CHECK(selection_fraction(extremes, 1.0) == 0.0);
}

TEST_CASE("selective_aggregate") {
  auto c = oracle::random_case(11, 12, 3);
  Rng rng(2);
  SimpleLayerParams p = random_simple(3, 4, 0.4, rng);
  const DenseMatrix wx = matmul_bt(c.graph.features(), p.w.value);
  const DenseMatrix s = oracle::neighbor_sum(c.adj, wx);

  SUBCASE("gate all zero gives A = 0 and alpha from s alone") {
    std::vector<double> gate(c.n, 0.0);
    auto r = selective_aggregate(c.graph, wx, gate, p.w1);
    CHECK(r.a == DenseMatrix(c.n, 4));
    for (std::size_t i = 0; i < c.n; ++i)
      CHECK(r.alpha[i] == oracle::logistic(0.0 + oracle::row_dot(p.w1.value, 4, s, i)));
  }
  SUBCASE("gate all one and W1 = 0 gives alpha = 0.5 and A = s / 2") {
    std::vector<double> gate(c.n, 1.0);
    p.w1.value.fill(0.0);
    auto r = selective_aggregate(c.graph, wx, gate, p.w1);
    for (double a : r.alpha) CHECK(a == 0.5);
    DenseMatrix half = s;
    scale_inplace(half, 0.5);
    CHECK(r.a == half);
  }
  SUBCASE("gate exclusion: a closed node's WX row does not reach A") {
    auto pt = oracle::simple_layer(c.adj, c.graph.features(), p.w.value, p.w0.value, p.w1.value, 0.5, true);
    std::vector<double> weight(c.n);
    for (std::size_t i = 0; i < c.n; ++i) weight[i] = pt.alpha[i] * pt.gate[i];
    DenseMatrix scrambled = wx;
    for (std::size_t j = 0; j < c.n; ++j)
      if (pt.gate[j] == 0.0)
        for (double& v : scrambled.row(j)) v = 1e6 * rng.normal();
    CHECK(neighbor_sum(c.graph, scrambled, weight) == neighbor_sum(c.graph, wx, weight));
  }
}

TEST_CASE("simple_layer_forward matches the dense oracle") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto c = oracle::random_case(s + 300, 16, 5);
    Rng rng(s);
    SimpleLayerParams p = random_simple(5, 3, rng.uniform(), rng);
    for (GateMode mode : {GateMode::Hard, GateMode::Soft}) {
      auto tr = simple_layer_forward(c.graph, c.graph.features(), p, mode);
      auto want = oracle::simple_layer(c.adj, c.graph.features(), p.w.value, p.w0.value, p.w1.value, p.threshold,
                                       mode == GateMode::Hard);
      CHECK(tr.wx == want.wx);
      CHECK(tr.p_hat == want.p_hat);
      CHECK(tr.gate == want.gate);
      CHECK(tr.alpha == want.alpha);
      CHECK(tr.a == want.a);
      CHECK(tr.h == want.h);
    }
  }
}

TEST_CASE("simple_layer_forward special cases") {
  Rng rng(4);
  SUBCASE("isolated node keeps relu(WX)") {
    Graph g = Graph::from_edges(1, {}, DenseMatrix(1, 3, std::vector<double>{1, -2, 0.5}), {0}, 1);
    SimpleLayerParams p = random_simple(3, 2, 0.0, rng);
    auto tr = simple_layer_forward(g, g.features(), p, GateMode::Hard);
    CHECK(tr.h == activate(Activation::Relu, tr.wx));
  }
  SUBCASE("T = 1 turns propagation off") {
    auto c = oracle::random_case(8, 12, 3);
    SimpleLayerParams p = random_simple(3, 3, 1.0, rng);
    auto tr = simple_layer_forward(c.graph, c.graph.features(), p, GateMode::Hard);
    CHECK(tr.selection_fraction == 0.0);
    CHECK(tr.h == activate(Activation::Relu, tr.wx));
  }
  SUBCASE("4-node star, hand-set weights") {
    // centre 0, leaves 1..3; F = F' = 1, W = 1, W0 = 1, W1 = (0, 0), T = 0.5
    std::vector<std::pair<NodeId, NodeId>> e{{0, 1}, {0, 2}, {0, 3}};
    Graph g = Graph::from_edges(4, e, DenseMatrix(4, 1, std::vector<double>{1, 2, -1, 3}), {0, 0, 0, 0}, 1);
    SimpleLayerParams p(1, 1, 0.5);
    p.w.value(0, 0) = 1.0;
    p.w0.value(0, 0) = 1.0;
    auto tr = simple_layer_forward(g, g.features(), p, GateMode::Hard);
    // s = (4, 1, 1, 1) so every p_hat > 0.5: all gates open, alpha = 0.5
    CHECK(tr.gate == std::vector<double>{1, 1, 1, 1});
    // A = 0.5 * s, H = relu(x) + relu(A)
    CHECK(tr.h(0, 0) == 1.0 + 2.0);
    CHECK(tr.h(1, 0) == 2.0 + 0.5);
    CHECK(tr.h(2, 0) == 0.0 + 0.5);
    CHECK(tr.h(3, 0) == 3.0 + 0.5);
  }
  SUBCASE("wrong feature width") {
    auto c = oracle::random_case(1, 5, 3);
    SimpleLayerParams p = random_simple(4, 2, 0.4, rng);
    CHECK_THROWS_AS(simple_layer_forward(c.graph, c.graph.features(), p, GateMode::Hard), ShapeError);
  }
}

TEST_CASE("raising T never enlarges the selected set") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto c = oracle::random_case(s + 40, 16, 3);
    Rng rng(s);
    SimpleLayerParams p = random_simple(3, 3, 0.0, rng);
    std::vector<double> prev(c.n, 1.0);
    for (int k = 0; k <= 10; ++k) {
      p.threshold = k / 10.0;
      auto tr = simple_layer_forward(c.graph, c.graph.features(), p, GateMode::Hard);
      for (std::size_t i = 0; i < c.n; ++i) CHECK(tr.gate[i] <= prev[i]);
      prev = tr.gate;
    }
  }
}

TEST_CASE("frontier_sets") {
  SUBCASE("selected = V leaves deeper shells empty") {
    auto c = oracle::random_case(2, 10, 2);
    std::vector<NodeId> all;
    for (std::size_t i = 0; i < c.n; ++i) all.push_back(static_cast<NodeId>(i));
    auto f = frontier_sets(c.graph, all, 3);
    CHECK(f[0] == all);
    CHECK(f[1].empty());
    CHECK(f[2].empty());
  }
  SUBCASE("path 0-1-2-3 from {0}") {
    Graph g = path_graph(4, DenseMatrix(4, 1));
    std::vector<NodeId> sel{0};
    auto f = frontier_sets(g, sel, 3);
    CHECK(f == std::vector<std::vector<NodeId>>{{0}, {1}, {2}});
  }
  SUBCASE("BFS oracle on random 20-node graphs") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      auto c = oracle::random_case(s + 900, 20, 1);
      Rng rng(s);
      std::vector<NodeId> sel;
      for (std::size_t i = 0; i < c.n; ++i)
        if (rng.uniform() < 0.2) sel.push_back(static_cast<NodeId>(i));
      const std::size_t depth = 1 + rng.below(5);
      auto f = frontier_sets(c.graph, sel, depth);
      auto dist = oracle::bfs_distance(c.adj, sel);
      for (std::size_t q = 0; q < depth; ++q) {
        std::vector<NodeId> want;
        for (std::size_t i = 0; i < c.n; ++i)
          if (dist[i] == q) want.push_back(static_cast<NodeId>(i));
        CHECK(f[q] == want);
      }
    }
  }
}

TEST_CASE("complex_layer_forward") {
  Rng rng(12);
  SUBCASE("nothing selected gives H = y0 exactly") {
    auto c = oracle::random_case(5, 12, 3);
    ComplexLayerParams p = random_complex(3, 3, 1.0, 2, rng);
    auto tr = complex_layer_forward(c.graph, c.graph.features(), p, GateMode::Hard);
    CHECK(tr.h == tr.wx);
  }
  SUBCASE("W2 at -50 closes every alpha") {
    auto c = oracle::random_case(6, 12, 3);
    ComplexLayerParams p = random_complex(3, 3, 0.0, 3, rng);
    p.w2.value.fill(-50.0);
    // keep |W2 . y| small relative to the -50 bias
    for (double& v : p.w.value.data()) v *= 1e-3;
    auto tr = complex_layer_forward(c.graph, c.graph.features(), p, GateMode::Hard);
    for (std::size_t i = 0; i < tr.h.size(); ++i) CHECK(std::abs(tr.h.data()[i] - tr.wx.data()[i]) <= 1e-15);
  }
  SUBCASE("path 0-1-2, selected {0}, Q = 2, hand-stepped") {
    Graph g = path_graph(3, DenseMatrix(3, 1, std::vector<double>{1, 2, 4}));
    ComplexLayerParams p(1, 1, 0.5, 2);
    p.w.value(0, 0) = 1.0;
    p.w2.value = DenseMatrix(1, 3, std::vector<double>{0.0, 0.0, 0.0});  // every alpha on the frontier = 0.5
    p.w3.value = DenseMatrix(1, 2, std::vector<double>{0.0, 0.0});       // c = 0.5
    auto tr = complex_layer_forward_gated(g, g.features(), p, {1.0, 0.0, 0.0});
    // q=0: only node 0 propagates: y1 = (1, 2 + 0.5, 4)
    CHECK(tr.y[1] == DenseMatrix(3, 1, std::vector<double>{1.0, 2.5, 4.0}));
    // q=1: frontier {1}: y2 = (1 + 1.25, 2.5, 4 + 1.25)
    CHECK(tr.y[2] == DenseMatrix(3, 1, std::vector<double>{2.25, 2.5, 5.25}));
    // H = y0 + 0.5 (y2 - y0)
    CHECK(tr.h == DenseMatrix(3, 1, std::vector<double>{1.625, 2.25, 4.625}));
  }
  SUBCASE("matches the stepped oracle") {
    for (std::uint64_t s = 0; s < 100; ++s) {
      auto c = oracle::random_case(s + 500, 16, 4);
      Rng r2(s);
      ComplexLayerParams p = random_complex(4, 3, r2.uniform(), 2 + r2.below(3), r2);
      auto tr = complex_layer_forward(c.graph, c.graph.features(), p, GateMode::Hard);
      auto want = oracle::complex_layer(c.adj, tr.wx, tr.gate, p.w2.value, p.w3.value, p.depth);
      CHECK(tr.y == want.y);
      CHECK(tr.blend == want.blend);
      CHECK(tr.h == want.h);
    }
  }
  SUBCASE("depth < 2 rejected") { CHECK_THROWS(ComplexLayerParams(3, 3, 0.4, 1)); }
}

TEST_CASE("layer gradients vs central differences") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto c = oracle::random_case(s + 700, 8, 3);
    Rng rng(s + 1);
    DenseMatrix up(c.n, 3);
    for (double& v : up.data()) v = rng.normal();
    const DenseMatrix& x = c.graph.features();

    SUBCASE("simple, soft, all parameters and input") {
      SimpleLayerParams p = random_simple(3, 3, 0.5, rng);
      auto tr = simple_layer_forward(c.graph, x, p, GateMode::Soft);
      DenseMatrix dx =
          simple_layer_backward(c.graph, x, p, tr, up, GateMode::Soft, Activation::Relu, GateBackward::StraightThrough, true);
      auto fwd = [&] { return simple_layer_forward(c.graph, x, p, GateMode::Soft).h; };
      auto sig = [&] {
        auto t = simple_layer_forward(c.graph, x, p, GateMode::Soft);
        std::vector<char> out;
        for (double v : t.wx.data()) out.push_back(v > 0);
        for (double v : t.a.data()) out.push_back(v > 0);
        return out;
      };
      auto st = check_params({&p.w, &p.w0, &p.w1}, fwd, sig, up);
      CHECK(st.worst <= 1e-5);
      CHECK(st.checked > 0);
      // input gradient
      for (std::size_t i = 0; i < x.size(); ++i) {
        DenseMatrix xp = x, xm = x;
        xp.data()[i] += 1e-6;
        xm.data()[i] -= 1e-6;
        const double num = (weighted_total(simple_layer_forward(c.graph, xp, p, GateMode::Soft).h, up) -
                            weighted_total(simple_layer_forward(c.graph, xm, p, GateMode::Soft).h, up)) /
                           2e-6;
        CHECK(rel_err(dx.data()[i], num) <= 1e-4);
      }
    }
    SUBCASE("simple, hard with frozen gates: W and W1") {
      SimpleLayerParams p = random_simple(3, 3, 0.5, rng);
      auto tr = simple_layer_forward(c.graph, x, p, GateMode::Hard);
      simple_layer_backward(c.graph, x, p, tr, up, GateMode::Hard, Activation::Relu, GateBackward::Frozen, false);
      auto fwd = [&] { return simple_layer_forward(c.graph, x, p, GateMode::Hard).h; };
      auto sig = [&] {
        auto t = simple_layer_forward(c.graph, x, p, GateMode::Hard);
        std::vector<char> out;
        for (double v : t.wx.data()) out.push_back(v > 0);
        for (double v : t.a.data()) out.push_back(v > 0);
        for (double v : t.gate) out.push_back(v > 0);
        return out;
      };
      auto st = check_params({&p.w, &p.w1}, fwd, sig, up);
      CHECK(st.worst <= 1e-5);
    }
    SUBCASE("complex, soft, all parameters") {
      ComplexLayerParams p = random_complex(3, 3, 0.5, 3, rng);
      auto tr = complex_layer_forward(c.graph, x, p, GateMode::Soft);
      complex_layer_backward(c.graph, x, p, tr, up, GateMode::Soft, GateBackward::StraightThrough, false);
      auto fwd = [&] { return complex_layer_forward(c.graph, x, p, GateMode::Soft).h; };
      auto sig = [] { return std::vector<char>{}; };
      auto st = check_params({&p.w, &p.w0, &p.w2, &p.w3}, fwd, sig, up);
      CHECK(st.worst <= 1e-5);
    }
    SUBCASE("complex, hard with frozen gates") {
      ComplexLayerParams p = random_complex(3, 3, 0.5, 2, rng);
      auto tr = complex_layer_forward(c.graph, x, p, GateMode::Hard);
      complex_layer_backward(c.graph, x, p, tr, up, GateMode::Hard, GateBackward::Frozen, false);
      auto fwd = [&] { return complex_layer_forward(c.graph, x, p, GateMode::Hard).h; };
      auto sig = [&] {
        auto t = complex_layer_forward(c.graph, x, p, GateMode::Hard);
        std::vector<char> out;
        for (double v : t.gate) out.push_back(v > 0);
        return out;
      };
      auto st = check_params({&p.w, &p.w2, &p.w3}, fwd, sig, up);
      CHECK(st.worst <= 1e-5);
    }
  }
}

TEST_CASE("straight-through gives W0 a gradient in hard mode") {
  Graph g = synth_sbm(SbmParams{20, 2, 0.5, 0.1, 3, 1.0}, 0);
  Rng rng(77);
  SimpleLayerParams p = random_simple(3, 3, 0.5, rng);
  DenseMatrix up(g.num_nodes(), 3, 1.0);
  auto tr = simple_layer_forward(g, g.features(), p, GateMode::Hard);
  simple_layer_backward(g, g.features(), p, tr, up, GateMode::Hard, Activation::Relu, GateBackward::StraightThrough,
                        false);
  double norm = 0.0;
  for (double v : p.w0.grad.data()) norm += v * v;
  CHECK(norm > 0.0);
}

TEST_CASE("gcn baseline layer") {
  SUBCASE("single node is act(X Wg^T)") {
    Graph g = Graph::from_edges(1, {}, DenseMatrix(1, 2, std::vector<double>{1.0, -3.0}), {0}, 1);
    Param wg(DenseMatrix(2, 2, std::vector<double>{1, 1, -1, 0}));
    CHECK(gcn_baseline_forward(g, g.features(), wg) == DenseMatrix(1, 2, std::vector<double>{0.0, 0.0}));
    CHECK(gcn_baseline_forward(g, g.features(), wg, Activation::Identity) ==
          DenseMatrix(1, 2, std::vector<double>{-2.0, -1.0}));
  }
  SUBCASE("2-clique with identity features") {
    std::vector<std::pair<NodeId, NodeId>> e{{0, 1}};
    Graph g = Graph::from_edges(2, e, DenseMatrix(2, 2, std::vector<double>{1, 0, 0, 1}), {0, 1}, 2);
    Param wg(DenseMatrix(2, 2, std::vector<double>{1, 0, 0, 1}));
    // Â = [[1/2, 1/2], [1/2, 1/2]]
    CHECK(gcn_baseline_forward(g, g.features(), wg) == DenseMatrix(2, 2, 0.5));
  }
  SUBCASE("Wg = 0 gives zero") {
    auto c = oracle::random_case(3, 8, 3);
    Param wg(2, 3);
    CHECK(gcn_baseline_forward(c.graph, c.graph.features(), wg) == DenseMatrix(c.n, 2));
  }
}
