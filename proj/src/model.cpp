#include "nodeselect/model.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "nodeselect/rng.hpp"

namespace nodeselect {

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must be in [0, 1]");
  if (depth < 1) throw ConfigError("depth must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

std::string to_string(GateMode m) { return m == GateMode::Hard ? "hard" : "soft"; }
std::string to_string(Stacking s) { return s == Stacking::Parallel ? "parallel" : "sequential"; }
std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu:
      return "relu";
    case Activation::Elu:
      return "elu";
    case Activation::Identity:
      break;
  }
  return "identity";
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream ss(text);
  T v{};
  ss >> v;
  if (ss.fail() || !(ss >> std::ws).eof()) throw ConfigError("bad value for " + key + ": '" + text + "'");
  if constexpr (std::is_unsigned_v<T>) {
    if (!text.empty() && text.front() == '-') throw ConfigError("bad value for " + key + ": '" + text + "'");
  }
  return v;
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return ss.str();
}

}  // namespace

ModelConfig parse_config(const std::string& text, ModelConfig cfg) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, bool> seen;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (seen[key]) throw ConfigError("duplicate key " + key);
    seen[key] = true;

    if (key == "num_layers") {
      cfg.num_layers = parse_value<std::size_t>(key, val);
    } else if (key == "out_dim") {
      cfg.out_dim = parse_value<std::size_t>(key, val);
    } else if (key == "threshold") {
      cfg.threshold = parse_value<double>(key, val);
    } else if (key == "gate_mode") {
      if (val == "hard")
        cfg.gate_mode = GateMode::Hard;
      else if (val == "soft")
        cfg.gate_mode = GateMode::Soft;
      else
        throw ConfigError("gate_mode must be hard or soft");
    } else if (key == "depth") {
      cfg.depth = parse_value<std::size_t>(key, val);
    } else if (key == "stacking") {
      if (val == "parallel")
        cfg.stacking = Stacking::Parallel;
      else if (val == "sequential")
        cfg.stacking = Stacking::Sequential;
      else
        throw ConfigError("stacking must be parallel or sequential");
    } else if (key == "activation") {
      if (val == "relu")
        cfg.activation = Activation::Relu;
      else if (val == "elu")
        cfg.activation = Activation::Elu;
      else if (val == "identity")
        cfg.activation = Activation::Identity;
      else
        throw ConfigError("activation must be relu, elu or identity");
    } else if (key == "dropout") {
      cfg.dropout = parse_value<double>(key, val);
    } else if (key == "lr") {
      cfg.lr = parse_value<double>(key, val);
    } else if (key == "weight_decay") {
      cfg.weight_decay = parse_value<double>(key, val);
    } else if (key == "epochs") {
      cfg.epochs = parse_value<std::size_t>(key, val);
    } else if (key == "patience") {
      cfg.patience = parse_value<std::size_t>(key, val);
    } else if (key == "seed") {
      cfg.seed = parse_value<std::uint64_t>(key, val);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ModelConfig& c) {
  std::ostringstream out;
  out << "num_layers=" << c.num_layers << "\n"
      << "out_dim=" << c.out_dim << "\n"
      << "threshold=" << format_double(c.threshold) << "\n"
      << "gate_mode=" << to_string(c.gate_mode) << "\n"
      << "depth=" << c.depth << "\n"
      << "stacking=" << to_string(c.stacking) << "\n"
      << "activation=" << to_string(c.activation) << "\n"
      << "dropout=" << format_double(c.dropout) << "\n"
      << "lr=" << format_double(c.lr) << "\n"
      << "weight_decay=" << format_double(c.weight_decay) << "\n"
      << "epochs=" << c.epochs << "\n"
      << "patience=" << c.patience << "\n"
      << "seed=" << c.seed << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Model construction

namespace {

void glorot(Param& p, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
  for (double& v : p.value.data()) v = rng.uniform(-bound, bound);
  p.zero_grad();
}

}  // namespace

Model init_model(const ModelConfig& cfg, std::size_t in_dim, std::size_t num_classes) {
  cfg.validate();
  if (in_dim < 1 || num_classes < 1) throw ConfigError("feature dimension and class count must be >= 1");
  Model m{cfg, in_dim, num_classes, {}};
  const std::size_t fo = m.out_dim();
  if (fo != num_classes)
    throw ConfigError("out_dim must equal the number of classes (" + std::to_string(num_classes) +
                      "): layer outputs are summed directly into logits");
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::size_t fin = (cfg.stacking == Stacking::Sequential && l > 0) ? fo : in_dim;
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::Init), l}));
    if (cfg.depth == 1) {
      SimpleLayerParams p(fin, fo, cfg.threshold);
      glorot(p.w, rng);
      glorot(p.w0, rng);
      glorot(p.w1, rng);
      m.layers.emplace_back(std::move(p));
    } else {
      ComplexLayerParams p(fin, fo, cfg.threshold, cfg.depth);
      glorot(p.w, rng);
      glorot(p.w0, rng);
      glorot(p.w2, rng);
      glorot(p.w3, rng);
      m.layers.emplace_back(std::move(p));
    }
  }
  return m;
}

std::vector<Param*> parameters(Model& m) {
  std::vector<Param*> out;
  for (auto& layer : m.layers) {
    std::visit(
        [&](auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, SimpleLayerParams>) {
            out.insert(out.end(), {&p.w, &p.w0, &p.w1});
          } else {
            out.insert(out.end(), {&p.w, &p.w0, &p.w2, &p.w3});
          }
        },
        layer);
  }
  return out;
}

std::vector<std::string> parameter_names(const Model& m) {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    if (std::holds_alternative<SimpleLayerParams>(m.layers[l])) {
      for (const char* n : {"W", "W0", "W1"}) out.push_back(prefix + n);
    } else {
      for (const char* n : {"W", "W0", "W2", "W3"}) out.push_back(prefix + n);
    }
  }
  return out;
}

std::size_t instantiated_param_count(const Model& m) {
  std::size_t total = 0;
  for (Param* p : parameters(const_cast<Model&>(m))) total += p->size();
  return total;
}

std::size_t param_count(std::size_t num_layers, std::size_t in_dim, std::size_t out_dim) {
  return num_layers * out_dim * (in_dim + 3);
}

// ---------------------------------------------------------------------------
// Forward / backward

const DenseMatrix& LayerPass::output() const {
  return std::visit([](const auto& t) -> const DenseMatrix& { return t.h; }, trace);
}

const std::vector<double>& LayerPass::p_hat() const {
  return std::visit([](const auto& t) -> const std::vector<double>& { return t.p_hat; }, trace);
}

double LayerPass::selection_fraction() const {
  return std::visit([](const auto& t) { return t.selection_fraction; }, trace);
}

ForwardPass model_forward_pass(const Model& m, const Graph& g, bool training, std::uint64_t dropout_counter) {
  if (g.feat_dim() != m.in_dim)
    throw ShapeError("model expects " + std::to_string(m.in_dim) + " features, graph has " +
                     std::to_string(g.feat_dim()));
  const auto& cfg = m.config;
  ForwardPass pass;
  pass.layers.reserve(m.layers.size());
  pass.logits = DenseMatrix(g.num_nodes(), m.out_dim());

  const DenseMatrix* input = &g.features();
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    LayerPass lp;
    if (cfg.stacking == Stacking::Sequential && l > 0) {
      lp.input_copy = pass.layers.back().dropped.out;
      input = &lp.input_copy;
    }
    lp.trace = std::visit(
        [&](const auto& p) -> std::variant<SimpleLayerTrace, ComplexLayerTrace> {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, SimpleLayerParams>) {
            return simple_layer_forward(g, *input, p, cfg.gate_mode, cfg.activation);
          } else {
            return complex_layer_forward(g, *input, p, cfg.gate_mode);
          }
        },
        m.layers[l]);
    lp.dropped = dropout(lp.output(), cfg.dropout, cfg.seed, dropout_counter + l, training);
    pass.layers.push_back(std::move(lp));
  }
  if (cfg.stacking == Stacking::Sequential) {
    pass.logits = pass.layers.back().dropped.out;
    return pass;
  }
  // Each entry sums its layer terms in sorted order, so permuting layers
  // cannot change a single bit of the logits.
  std::vector<double> terms(pass.layers.size());
  for (std::size_t k = 0; k < pass.logits.size(); ++k) {
    for (std::size_t l = 0; l < terms.size(); ++l) terms[l] = pass.layers[l].dropped.out.data()[k];
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += t;
    pass.logits.data()[k] = acc;
  }
  return pass;
}

DenseMatrix model_forward(const Model& m, const Graph& g, bool training, std::uint64_t dropout_counter) {
  return model_forward_pass(m, g, training, dropout_counter).logits;
}

namespace {

DenseMatrix through_dropout(const DropoutResult& d, const DenseMatrix& upstream) {
  if (d.scale.empty()) return upstream;
  DenseMatrix out = upstream;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= d.scale.data()[i];
  return out;
}

}  // namespace

void model_backward(Model& m, const Graph& g, const ForwardPass& pass, const DenseMatrix& grad_logits,
                    GateBackward gb) {
  const auto& cfg = m.config;
  DenseMatrix upstream = grad_logits;
  for (std::size_t k = m.layers.size(); k-- > 0;) {
    const LayerPass& lp = pass.layers[k];
    const bool sequential = cfg.stacking == Stacking::Sequential;
    const DenseMatrix grad_h = through_dropout(lp.dropped, sequential ? upstream : grad_logits);
    const DenseMatrix& input = (sequential && k > 0) ? lp.input_copy : g.features();
    const bool want_input = sequential && k > 0;
    DenseMatrix grad_in = std::visit(
        [&](auto& p) -> DenseMatrix {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, SimpleLayerParams>) {
            return simple_layer_backward(g, input, p, std::get<SimpleLayerTrace>(lp.trace), grad_h, cfg.gate_mode,
                                         cfg.activation, gb, want_input);
          } else {
            return complex_layer_backward(g, input, p, std::get<ComplexLayerTrace>(lp.trace), grad_h,
                                          cfg.gate_mode, gb, want_input);
          }
        },
        m.layers[k]);
    if (want_input) upstream = std::move(grad_in);
  }
}

std::vector<int> predict(const DenseMatrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

double accuracy(const DenseMatrix& logits, std::span<const int> labels, const std::vector<bool>& mask) {
  if (mask.size() != logits.rows() || labels.size() != logits.rows())
    throw ShapeError("accuracy: mask/labels length must equal logits rows");
  const std::size_t total = count(mask);
  if (total == 0) throw std::invalid_argument("accuracy: empty mask");
  const auto pred = predict(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i] && pred[i] == labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(total);
}

double evaluate(const Model& m, const Graph& g, const std::vector<bool>& mask) {
  return accuracy(model_forward(m, g, false), g.labels(), mask);
}

// ---------------------------------------------------------------------------
// Training

std::string TrainReport::metrics_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,val_acc\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t e = 0; e < epochs.size(); ++e) out << e << ',' << epochs[e].train_loss << ',' << epochs[e].val_acc << '\n';
  return out.str();
}

namespace {

struct LoopSettings {
  double lr;
  double weight_decay;
  std::size_t epochs;
  std::size_t patience;
};

// Shared full-batch loop. `step` runs forward/backward on the training mask and
// returns the loss; `eval_logits` produces evaluation-mode logits;
// `on_epoch_end` sees the epoch index after validation.
TrainReport run_training(const std::vector<Param*>& params, const Graph& g, const SplitMasks& masks,
                         const LoopSettings& s, const std::function<double(std::size_t)>& step,
                         const std::function<DenseMatrix()>& eval_logits,
                         const std::function<void(std::size_t, const DenseMatrix&)>& on_epoch_end) {
  if (masks.size() != g.num_nodes()) throw std::invalid_argument("train: masks do not match graph");
  if (count(masks.train) == 0) throw std::invalid_argument("train: empty train mask");
  if (count(masks.val) == 0) throw std::invalid_argument("train: empty validation mask");

  // Whatever the caller already holds on this thread is not ours; count the
  // features and parameters explicitly instead so the figure is reproducible.
  AllocTracker::reset_peak();
  const std::size_t baseline = AllocTracker::current();
  std::size_t resident = g.features().size() * sizeof(double);
  for (Param* p : params) resident += (p->value.size() + p->grad.size()) * sizeof(double);
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport rep;
  std::vector<AdamState> adam;
  adam.reserve(params.size());
  for (Param* p : params) {
    p->zero_grad();
    adam.emplace_back(*p, s.lr, s.weight_decay);
  }
  std::vector<DenseMatrix> best;
  for (Param* p : params) best.push_back(p->value);
  double best_val = -1.0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < s.epochs; ++epoch) {
    const double loss = step(epoch);
    for (std::size_t k = 0; k < params.size(); ++k) adam_step(*params[k], adam[k]);
    const DenseMatrix logits = eval_logits();
    const double val = accuracy(logits, g.labels(), masks.val);
    rep.epochs.push_back({loss, val});
    if (on_epoch_end) on_epoch_end(epoch, logits);
    if (val > best_val) {
      best_val = val;
      rep.best_epoch = epoch;
      since_best = 0;
      for (std::size_t k = 0; k < params.size(); ++k) best[k] = params[k]->value;
    } else if (++since_best > s.patience) {
      break;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best[k];
  rep.best_val_acc = std::max(best_val, 0.0);

  std::vector<bool> test = masks.test;
  for (std::size_t i = 0; i < test.size(); ++i) test[i] = test[i] && !masks.pseudo[i];
  if (count(test) > 0) rep.test_acc = accuracy(eval_logits(), g.labels(), test);

  const auto t1 = std::chrono::steady_clock::now();
  rep.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  rep.epoch_ms = rep.epochs.empty() ? 0.0 : rep.wall_ms / static_cast<double>(rep.epochs.size());
  rep.peak_bytes = AllocTracker::peak() - baseline + resident;
  return rep;
}

constexpr std::uint64_t kCountersPerEpoch = 1u << 16;

}  // namespace

TrainReport train(Model& m, const Graph& g, const SplitMasks& masks, const TrainOptions& opts) {
  const auto& cfg = m.config;
  const auto params = parameters(m);
  std::vector<NodeId> traced(opts.trace_nodes.begin(),
                             opts.trace_nodes.begin() + std::min<std::size_t>(opts.trace_nodes.size(), 8));
  for (NodeId v : traced)
    if (v >= g.num_nodes()) throw std::invalid_argument("train: traced node out of range");

  std::vector<PhatSample> trace;
  ForwardPass last_eval;
  auto step = [&](std::size_t epoch) {
    ForwardPass pass = model_forward_pass(m, g, true, epoch * kCountersPerEpoch);
    auto loss = log_softmax_nll(pass.logits, g.labels(), masks.train);
    model_backward(m, g, pass, loss.grad, opts.gate_backward);
    return loss.loss;
  };
  auto eval = [&] {
    last_eval = model_forward_pass(m, g, false);
    return last_eval.logits;
  };
  auto on_epoch = [&](std::size_t epoch, const DenseMatrix&) {
    for (NodeId v : traced)
      for (std::size_t l = 0; l < last_eval.layers.size(); ++l)
        trace.push_back({epoch, v, l, last_eval.layers[l].p_hat()[v]});
  };

  TrainReport rep = run_training(params, g, masks, {cfg.lr, cfg.weight_decay, cfg.epochs, cfg.patience}, step,
                                 eval, on_epoch);
  rep.phat_trace = std::move(trace);

  std::vector<bool> test = masks.test;
  for (std::size_t i = 0; i < test.size(); ++i) test[i] = test[i] && !masks.pseudo[i];
  const ForwardPass final_pass = model_forward_pass(m, g, false);
  for (const auto& lp : final_pass.layers) {
    rep.layer_selection.push_back(lp.selection_fraction());
    rep.layer_test_acc.push_back(count(test) > 0 ? accuracy(lp.output(), g.labels(), test) : 0.0);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// GCN foil

GcnModel init_gcn(const GcnConfig& cfg, std::size_t in_dim, std::size_t num_classes) {
  GcnModel m{cfg, Param(cfg.hidden, in_dim), Param(num_classes, cfg.hidden)};
  Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::Init), 0x6c6e}));
  glorot(m.w1, rng);
  glorot(m.w2, rng);
  return m;
}

std::size_t instantiated_param_count(const GcnModel& m) { return m.w1.size() + m.w2.size(); }

namespace {

struct GcnPass {
  DenseMatrix pre1;    // Â X W1^T
  DenseMatrix hidden;  // relu(pre1)
  DropoutResult dropped;
  DenseMatrix logits;  // Â hidden' W2^T
};

GcnPass gcn_pass(const GcnModel& m, const Graph& g, bool training, std::uint64_t counter) {
  if (g.feat_dim() != m.w1.value.cols()) throw ShapeError("gcn: feature dimension mismatch");
  GcnPass p;
  p.pre1 = gcn_propagate(g, matmul_bt(g.features(), m.w1.value));
  p.hidden = activate(Activation::Relu, p.pre1);
  p.dropped = dropout(p.hidden, m.config.dropout, m.config.seed, counter, training);
  p.logits = gcn_propagate(g, matmul_bt(p.dropped.out, m.w2.value));
  return p;
}

}  // namespace

DenseMatrix gcn_forward(const GcnModel& m, const Graph& g, bool training, std::uint64_t dropout_counter) {
  return gcn_pass(m, g, training, dropout_counter).logits;
}

TrainReport train(GcnModel& m, const Graph& g, const SplitMasks& masks) {
  const std::vector<Param*> params{&m.w1, &m.w2};
  auto step = [&](std::size_t epoch) {
    GcnPass p = gcn_pass(m, g, true, epoch * kCountersPerEpoch);
    auto loss = log_softmax_nll(p.logits, g.labels(), masks.train);
    // Â is symmetric, so its transpose action is gcn_propagate again.
    const DenseMatrix g_z2 = gcn_propagate(g, loss.grad);  // d/d (hidden' W2^T)
    add_inplace(m.w2.grad, matmul_at(g_z2, p.dropped.out));
    DenseMatrix g_hidden = matmul(g_z2, m.w2.value);
    if (!p.dropped.scale.empty())
      for (std::size_t i = 0; i < g_hidden.size(); ++i) g_hidden.data()[i] *= p.dropped.scale.data()[i];
    const DenseMatrix g_pre1 = activate_backward(Activation::Relu, p.pre1, g_hidden);
    const DenseMatrix g_z1 = gcn_propagate(g, g_pre1);
    add_inplace(m.w1.grad, matmul_at(g_z1, g.features()));
    return loss.loss;
  };
  auto eval = [&] { return gcn_forward(m, g, false); };
  return run_training(params, g, masks, {m.config.lr, m.config.weight_decay, m.config.epochs, m.config.patience},
                      step, eval, {});
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kMagic = "nodeselect-checkpoint";
constexpr int kVersion = 1;

void write_param(std::ostream& out, const std::string& name, const Param& p) {
  out << "param " << name << ' ' << p.value.rows() << ' ' << p.value.cols() << '\n';
  for (std::size_t i = 0; i < p.value.size(); ++i) out << (i ? " " : "") << p.value.data()[i];
  out << '\n';
}

void read_param(std::istream& in, const std::string& name, Param& p) {
  std::string tag, got;
  std::size_t rows = 0, cols = 0;
  in >> tag >> got >> rows >> cols;
  if (!in || tag != "param" || got != name)
    throw ConfigError("checkpoint: expected parameter " + name + ", got '" + got + "'");
  if (rows != p.value.rows() || cols != p.value.cols()) throw ConfigError("checkpoint: shape mismatch for " + name);
  for (double& v : p.value.data()) {
    std::string tok;
    in >> tok;
    if (!in) throw ConfigError("checkpoint: truncated values for " + name);
    // from_chars keeps subnormals; stod and operator>> both reject them
    auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || end != tok.data() + tok.size())
      throw ConfigError("checkpoint: bad value '" + tok + "' for " + name);
  }
  p.zero_grad();
}

}  // namespace

void save_checkpoint(const Model& m, std::ostream& out) {
  out << kMagic << ' ' << kVersion << '\n';
  out << "in_dim=" << m.in_dim << "\nnum_classes=" << m.num_classes << '\n';
  out << format_config(m.config);
  out << "end_config\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  auto params = parameters(const_cast<Model&>(m));
  for (std::size_t k = 0; k < params.size(); ++k) write_param(out, "p" + std::to_string(k), *params[k]);
  out << "end\n";
}

void save_checkpoint(const Model& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  save_checkpoint(m, out);
}

Model load_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kMagic) throw ConfigError("not a checkpoint file");
  if (version != kVersion) throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  std::string line;
  std::getline(in, line);
  std::size_t in_dim = 0, classes = 0;
  std::string cfg_text;
  while (std::getline(in, line)) {
    if (line == "end_config") break;
    if (line.rfind("in_dim=", 0) == 0)
      in_dim = std::stoull(line.substr(7));
    else if (line.rfind("num_classes=", 0) == 0)
      classes = std::stoull(line.substr(12));
    else
      cfg_text += line + "\n";
  }
  Model m = init_model(parse_config(cfg_text), in_dim, classes);
  auto params = parameters(m);
  for (std::size_t k = 0; k < params.size(); ++k) read_param(in, "p" + std::to_string(k), *params[k]);
  std::string end;
  in >> end;
  if (end != "end") throw ConfigError("checkpoint: missing end marker");
  return m;
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace nodeselect
