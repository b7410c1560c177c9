#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nodeselect/gradcheck.hpp"
#include "nodeselect/model.hpp"
#include "oracles.hpp"

using namespace nodeselect;

namespace {

// Two 2-cliques, one per class, features one-hot on the class.
Graph toy_cliques() {
  std::vector<std::pair<NodeId, NodeId>> e{{0, 1}, {2, 3}};
  DenseMatrix x(4, 2, std::vector<double>{1, 0, 1, 0, 0, 1, 0, 1});
  return Graph::from_edges(4, e, std::move(x), {0, 0, 1, 1}, 2);
}

SplitMasks all_masks(std::size_t n) {
  return SplitMasks{std::vector<bool>(n, true), std::vector<bool>(n, true), std::vector<bool>(n, true),
                    std::vector<bool>(n, false)};
}

ModelConfig quiet_config() {
  ModelConfig c;
  c.dropout = 0.0;
  c.epochs = 50;
  return c;
}

}  // namespace

TEST_CASE("param_count equals instantiated entries over the grid") {
  for (std::size_t L : {1, 3, 10})
    for (std::size_t F : {4, 500, 1433})
      for (std::size_t C : {3, 7, 16}) {
        ModelConfig cfg;
        cfg.num_layers = L;
        Model m = init_model(cfg, F, C);
        CHECK(instantiated_param_count(m) == param_count(L, F, C));
        // independent census
        std::size_t census = 0;
        for (Param* p : parameters(m)) census += p->value.rows() * p->value.cols();
        CHECK(census == param_count(L, F, C));
      }
  CHECK(param_count(1, 1, 1) == 4);
  CHECK(param_count(3, 1433, 7) == 30156);
  CHECK(param_count(10, 500, 3) == 15090);
}

TEST_CASE("init_model") {
  ModelConfig cfg;
  cfg.seed = 17;
  Model a = init_model(cfg, 1433, 7);
  Model b = init_model(cfg, 1433, 7);
  auto pa = parameters(a), pb = parameters(b);
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k]->value == pb[k]->value);
  // distinct W per layer
  CHECK_FALSE(pa[0]->value == pa[3]->value);
  CHECK_FALSE(pa[3]->value == pa[6]->value);
  const double bound = std::sqrt(6.0 / 1440.0);
  CHECK(bound == doctest::Approx(0.0645).epsilon(1e-3));
  double largest = 0.0;
  for (double v : pa[0]->value.data()) largest = std::max(largest, std::abs(v));
  CHECK(largest <= bound);
  CHECK(largest > 0.9 * bound);

  SUBCASE("out_dim other than C is rejected") {
    ModelConfig bad;
    bad.out_dim = 5;
    CHECK_THROWS_AS(init_model(bad, 4, 3), ConfigError);
  }
  SUBCASE("depth 2 builds complex layers") {
    ModelConfig c2;
    c2.depth = 2;
    Model m = init_model(c2, 4, 3);
    CHECK(std::holds_alternative<ComplexLayerParams>(m.layers[0]));
    CHECK(parameter_names(m)[2] == "layer0.W2");
  }
}

TEST_CASE("parallel stacking is a plain sum") {
  Graph g = synth_sbm(SbmParams{40, 4, 0.3, 0.05, 6, 1.0}, 2);
  ModelConfig cfg = quiet_config();
  cfg.num_layers = 4;
  Model m = init_model(cfg, 6, 4);

  SUBCASE("identical layers give L times the single layer") {
    for (std::size_t l = 1; l < 4; ++l) m.layers[l] = m.layers[0];
    Model single = m;
    single.layers.resize(1);
    single.config.num_layers = 1;
    DenseMatrix one = model_forward(single, g, false);
    DenseMatrix four = model_forward(m, g, false);
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(four.data()[i] == 4.0 * one.data()[i]);
  }
  SUBCASE("layer order does not matter") {
    DenseMatrix base = model_forward(m, g, false);
    Model shuffled = m;
    std::reverse(shuffled.layers.begin(), shuffled.layers.end());
    std::swap(shuffled.layers[0], shuffled.layers[2]);
    CHECK(model_forward(shuffled, g, false) == base);
  }
  SUBCASE("evaluation forward is repeatable") { CHECK(model_forward(m, g, false) == model_forward(m, g, false)); }
}

TEST_CASE("L = 1: parallel and sequential agree") {
  Graph g = synth_sbm(SbmParams{40, 4, 0.3, 0.05, 6, 1.0}, 3);
  ModelConfig cfg = quiet_config();
  cfg.num_layers = 1;
  Model par = init_model(cfg, 6, 4);
  Model seq = par;
  seq.config.stacking = Stacking::Sequential;
  CHECK(model_forward(par, g, false) == model_forward(seq, g, false));
}

TEST_CASE("two hand-set layers on a 3-node path vs dense oracle") {
  std::vector<std::pair<NodeId, NodeId>> e{{0, 1}, {1, 2}};
  DenseMatrix x(3, 2, std::vector<double>{1, -1, 0.5, 2, -1, 0.25});
  Graph g = Graph::from_edges(3, e, x, {0, 1, 0}, 2);
  ModelConfig cfg = quiet_config();
  cfg.num_layers = 2;
  cfg.threshold = 0.5;
  Model m = init_model(cfg, 2, 2);
  auto& a = std::get<SimpleLayerParams>(m.layers[0]);
  auto& b = std::get<SimpleLayerParams>(m.layers[1]);
  a.w.value = DenseMatrix(2, 2, std::vector<double>{1, 0.5, -0.5, 1});
  a.w0.value = DenseMatrix(1, 2, std::vector<double>{0.3, -0.2});
  a.w1.value = DenseMatrix(1, 4, std::vector<double>{0.1, 0.2, -0.3, 0.4});
  b.w.value = DenseMatrix(2, 2, std::vector<double>{-1, 2, 0.25, 0.75});
  b.w0.value = DenseMatrix(1, 2, std::vector<double>{-0.5, 0.5});
  b.w1.value = DenseMatrix(1, 4, std::vector<double>{1, -1, 0.5, 0});
  auto adj = oracle::dense_adjacency(3, e);
  auto ha = oracle::simple_layer(adj, x, a.w.value, a.w0.value, a.w1.value, 0.5, true).h;
  auto hb = oracle::simple_layer(adj, x, b.w.value, b.w0.value, b.w1.value, 0.5, true).h;
  DenseMatrix want(3, 2);
  for (std::size_t i = 0; i < want.size(); ++i) want.data()[i] = (0.0 + ha.data()[i]) + hb.data()[i];
  CHECK(model_forward(m, g, false) == want);
}

TEST_CASE("evaluate and predict") {
  SUBCASE("one-hot of the true labels") {
    DenseMatrix z(3, 3, std::vector<double>{1, 0, 0, 0, 0, 1, 0, 1, 0});
    CHECK(accuracy(z, std::vector<int>{0, 2, 1}, std::vector<bool>(3, true)) == 1.0);
  }
  SUBCASE("all-zero logits break ties toward class 0") {
    DenseMatrix z(4, 3);
    CHECK(accuracy(z, std::vector<int>{0, 2, 0, 1}, std::vector<bool>(4, true)) == 0.5);
  }
  SUBCASE("random logits vs per-node argmax") {
    Rng rng(5);
    DenseMatrix z(200, 5);
    for (double& v : z.data()) v = std::round(rng.normal() * 2) / 2;  // plenty of ties
    auto pred = predict(z);
    for (std::size_t i = 0; i < 200; ++i) {
      int best = 0;
      for (int k = 1; k < 5; ++k)
        if (z(i, k) > z(i, best)) best = k;
      CHECK(pred[i] == best);
    }
  }
  SUBCASE("empty mask") { CHECK_THROWS(accuracy(DenseMatrix(2, 2), std::vector<int>{0, 0}, {false, false})); }
}

TEST_CASE("training contracts") {
  SUBCASE("lr = 0 without decay leaves the weights alone") {
    Graph g = synth_sbm(SbmParams{40, 4, 0.3, 0.05, 6, 1.0}, 1);
    ModelConfig cfg = quiet_config();
    cfg.lr = 0.0;
    cfg.weight_decay = 0.0;
    cfg.patience = 100;
    Model m = init_model(cfg, 6, 4);
    const Model before = m;
    train(m, g, make_splits(g, SplitRatios{}, 0));
    auto pa = parameters(m);
    auto pb = parameters(const_cast<Model&>(before));
    for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k]->value == pb[k]->value);
  }
  SUBCASE("toy cliques reach train accuracy 1.0 in 200 epochs") {
    Graph g = toy_cliques();
    ModelConfig cfg;
    cfg.epochs = 200;
    cfg.patience = 200;
    Model m = init_model(cfg, 2, 2);
    auto masks = all_masks(4);
    train(m, g, masks);
    CHECK(evaluate(m, g, masks.train) == 1.0);
  }
  SUBCASE("patience 0 stops at the first epoch that does not improve") {
    Graph g = synth_sbm(SbmParams{80, 4, 0.2, 0.02, 8, 1.0}, 4);
    ModelConfig cfg;
    cfg.patience = 0;
    Model m = init_model(cfg, 8, 4);
    auto rep = train(m, g, make_splits(g, SplitRatios{}, 4));
    double best = rep.epochs[0].val_acc;
    std::size_t first_stall = rep.epochs.size();
    for (std::size_t k = 1; k < rep.epochs.size(); ++k) {
      if (rep.epochs[k].val_acc <= best) {
        first_stall = k;
        break;
      }
      best = rep.epochs[k].val_acc;
    }
    CHECK(rep.epochs.size() == first_stall + 1);
  }
  SUBCASE("test accuracy comes from the best-validation weights") {
    Graph g = synth_sbm(SbmParams{80, 4, 0.2, 0.02, 8, 1.0}, 5);
    ModelConfig cfg;
    cfg.epochs = 120;
    cfg.patience = 30;
    Model m = init_model(cfg, 8, 4);
    auto masks = make_splits(g, SplitRatios{}, 5);
    auto rep = train(m, g, masks);
    CHECK(rep.best_val_acc == rep.epochs[rep.best_epoch].val_acc);
    for (const auto& e : rep.epochs) CHECK(e.val_acc <= rep.best_val_acc);
    CHECK(evaluate(m, g, masks.val) == rep.best_val_acc);
    CHECK(evaluate(m, g, masks.test) == rep.test_acc);
    CHECK(rep.layer_selection.size() == 3);
    CHECK(rep.layer_test_acc.size() == 3);
  }
  SUBCASE("pseudo nodes never scored") {
    Graph g = synth_sbm(SbmParams{80, 4, 0.2, 0.02, 8, 1.0}, 6);
    auto masks = make_splits(g, SplitRatios{}, 6);
    NoisyGraph ng = augment_with_noise(g, masks, 0.25, 6);
    ModelConfig cfg;
    cfg.epochs = 30;
    Model m = init_model(cfg, 8, 4);
    auto rep = train(m, ng.graph, ng.masks);
    std::vector<bool> clean_test = ng.masks.test;
    for (std::size_t i = 0; i < clean_test.size(); ++i) clean_test[i] = clean_test[i] && !ng.masks.pseudo[i];
    CHECK(rep.test_acc == evaluate(m, ng.graph, clean_test));
  }
  SUBCASE("empty train mask is an error") {
    Graph g = toy_cliques();
    Model m = init_model(quiet_config(), 2, 2);
    auto masks = all_masks(4);
    masks.train.assign(4, false);
    CHECK_THROWS(train(m, g, masks));
  }
  SUBCASE("p_hat trace records at most 8 nodes per layer per epoch") {
    Graph g = synth_sbm(SbmParams{40, 4, 0.3, 0.05, 6, 1.0}, 1);
    ModelConfig cfg;
    cfg.epochs = 5;
    Model m = init_model(cfg, 6, 4);
    TrainOptions opts;
    for (NodeId v = 0; v < 12; ++v) opts.trace_nodes.push_back(v);
    auto rep = train(m, g, make_splits(g, SplitRatios{}, 0), opts);
    CHECK(rep.phat_trace.size() == rep.epochs.size() * 8 * 3);
    for (const auto& s : rep.phat_trace) {
      CHECK(s.node < 8);
      CHECK(s.p_hat > 0.0);
      CHECK(s.p_hat < 1.0);
    }
  }
}

TEST_CASE("training is deterministic") {
  Graph g = synth_sbm(SbmParams{80, 4, 0.2, 0.02, 8, 1.0}, 7);
  auto masks = make_splits(g, SplitRatios{}, 7);
  ModelConfig cfg;
  cfg.epochs = 40;
  cfg.seed = 7;
  Model a = init_model(cfg, 8, 4), b = init_model(cfg, 8, 4);
  CHECK(train(a, g, masks).metrics_csv() == train(b, g, masks).metrics_csv());
}

TEST_CASE("gcn foil") {
  Graph g = synth_sbm(SbmParams{}, 0);
  GcnConfig gc;
  GcnModel m = init_gcn(gc, 16, 4);
  CHECK(instantiated_param_count(m) == 16 * 16 + 4 * 16);
  auto rep = train(m, g, make_splits(g, SplitRatios{}, 0));
  CHECK(rep.test_acc > 0.7);

}

TEST_CASE("config text") {
  SUBCASE("parse with comments and blanks") {
    ModelConfig c = parse_config("# comment\n\nnum_layers = 5\nthreshold=0.3\ngate_mode=soft\nstacking=sequential\n");
    CHECK(c.num_layers == 5);
    CHECK(c.threshold == 0.3);
    CHECK(c.gate_mode == GateMode::Soft);
    CHECK(c.stacking == Stacking::Sequential);
    CHECK(c.lr == ModelConfig{}.lr);
  }
  SUBCASE("round trip") {
    ModelConfig c;
    c.threshold = 0.1 + 0.2;
    c.lr = 1e-3 / 3;
    c.activation = Activation::Elu;
    c.seed = 123456789012345ULL;
    CHECK(parse_config(format_config(c)) == c);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(parse_config("bogus=1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr=0.1\nlr=0.2\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr=abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("threshold=1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("dropout=1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("num_layers=0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("gate_mode=medium\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("novalue\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/nodeselect.cfg"), ConfigError);
  }
}

TEST_CASE("checkpoint round trip is exact") {
  for (std::size_t depth : {1, 3}) {
    ModelConfig cfg;
    cfg.depth = depth;
    cfg.seed = 99;
    Model m = init_model(cfg, 5, 3);
    for (Param* p : parameters(m)) p->value.data()[0] = 4.9e-324;  // denormal survives
    std::stringstream ss;
    save_checkpoint(m, ss);
    Model back = load_checkpoint(ss);
    CHECK(back.config == m.config);
    CHECK(back.in_dim == 5);
    CHECK(back.num_classes == 3);
    auto pa = parameters(m), pb = parameters(back);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k]->value == pb[k]->value);
  }
  std::stringstream junk("not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint(junk), ConfigError);
}

TEST_CASE("full-model gradient check") {
  SUBCASE("soft, 6 nodes, L = 2") {
    GradcheckOptions o;
    auto r = run_gradcheck(o);
    CHECK(r.passed);
    CHECK(r.max_rel_err <= 1e-4);
    CHECK(r.checked > 0);
  }
  SUBCASE("hard, frozen gates") {
    GradcheckOptions o;
    o.mode = GradcheckMode::HardFrozen;
    CHECK(run_gradcheck(o).passed);
  }
  SUBCASE("sequential and complex variants") {
    GradcheckOptions o;
    o.stacking = Stacking::Sequential;
    o.depth = 2;
    o.trials = 5;
    CHECK(run_gradcheck(o).passed);
  }
  SUBCASE("corrupted backward is caught") {
    GradcheckOptions o;
    o.corrupt_backward = true;
    auto r = run_gradcheck(o);
    CHECK_FALSE(r.passed);
    CHECK(r.worst.find("param=layer") != std::string::npos);
  }
}
