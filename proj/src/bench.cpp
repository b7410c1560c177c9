#include "nodeselect/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace nodeselect {

namespace fs = std::filesystem;

Experiment parse_experiment(const std::string& name) {
  if (name == "noise") return Experiment::Noise;
  if (name == "scale") return Experiment::Scale;
  if (name == "sweep-t") return Experiment::SweepT;
  if (name == "sweep-l") return Experiment::SweepL;
  if (name == "stacking") return Experiment::Stacking;
  if (name == "diag") return Experiment::Diagnostics;
  throw ConfigError("unknown experiment '" + name + "'");
}

std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::Noise:
      return "noise";
    case Experiment::Scale:
      return "scale";
    case Experiment::SweepT:
      return "sweep-t";
    case Experiment::SweepL:
      return "sweep-l";
    case Experiment::Stacking:
      return "stacking";
    case Experiment::Diagnostics:
      break;
  }
  return "diag";
}

void BenchSpec::validate() const {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  for (double f : fractions)
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("noise fractions must be in [0, 1]");
  for (std::size_t k = 1; k < sizes.size(); ++k)
    if (sizes[k] <= sizes[k - 1]) throw ConfigError("sizes must be increasing");
  for (double t : t_grid)
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("thresholds must be in [0, 1]");
  for (std::size_t l : l_grid)
    if (l < 1) throw ConfigError("layer counts must be >= 1");
  model.validate();
}

// ---------------------------------------------------------------------------
// Report

namespace {

std::string num(double v) {
  std::ostringstream ss;
  ss << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return ss.str();
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

BenchRow make_row(std::string exp, std::string cond, std::string model, std::uint64_t seed) {
  BenchRow r;
  r.experiment = std::move(exp);
  r.condition = std::move(cond);
  r.model = std::move(model);
  r.seed = seed;
  return r;
}

std::string short_num(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

}  // namespace

std::string BenchRow::to_csv(bool with_timing) const {
  std::ostringstream ss;
  ss << experiment << ',' << condition << ',' << model << ',' << seed << ',' << opt(clean_acc) << ','
     << opt(noisy_acc) << ',' << opt(selection_frac) << ',' << params << ',' << peak_bytes << ','
     << (with_timing ? opt(epoch_ms) : std::string());
  return ss.str();
}

std::string BenchReport::csv_header() {
  return "experiment,condition,model,seed,clean_acc,noisy_acc,selection_frac,params,peak_bytes,epoch_ms";
}

std::string BenchReport::to_csv(bool with_timing) const {
  std::string out = csv_header() + "\n";
  for (const auto& r : rows) out += r.to_csv(with_timing) + "\n";
  return out;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

std::vector<AggregateRow> BenchReport::aggregate() const {
  using Key = std::tuple<std::string, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::map<std::string, std::vector<double>>> groups;
  for (const auto& r : rows) {
    Key k{r.experiment, r.condition, r.model};
    if (!groups.count(k)) order.push_back(k);
    auto& g = groups[k];
    if (r.clean_acc) g["clean_acc"].push_back(*r.clean_acc);
    if (r.noisy_acc) g["noisy_acc"].push_back(*r.noisy_acc);
    if (r.clean_acc && r.noisy_acc) g["degradation"].push_back(*r.clean_acc - *r.noisy_acc);
    if (r.selection_frac) g["selection_frac"].push_back(*r.selection_frac);
    if (r.epoch_ms) g["epoch_ms"].push_back(*r.epoch_ms);
  }
  std::vector<AggregateRow> out;
  for (const auto& k : order) {
    for (const char* metric : {"clean_acc", "noisy_acc", "degradation", "selection_frac", "epoch_ms"}) {
      auto it = groups[k].find(metric);
      if (it == groups[k].end()) continue;
      auto [m, s] = mean_std(it->second);
      out.push_back({std::get<0>(k), std::get<1>(k), std::get<2>(k), metric, it->second.size(), m, s});
    }
  }
  return out;
}

std::string BenchReport::aggregate_csv() const {
  std::string out = "experiment,condition,model,metric,n,mean,std\n";
  for (const auto& a : aggregate())
    out += a.experiment + "," + a.condition + "," + a.model + "," + a.metric + "," + std::to_string(a.n) + "," +
           num(a.mean) + "," + num(a.std) + "\n";
  return out;
}

void BenchReport::write(const fs::path& dir, const std::string& stem) const {
  fs::create_directories(dir);
  std::ofstream(dir / (stem + ".csv"), std::ios::binary) << to_csv();
  std::ofstream(dir / (stem + "_aggregate.csv"), std::ios::binary) << aggregate_csv();
}

void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max(1u, jobs);
  if (jobs == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (unsigned t = 0; t < std::min<std::size_t>(jobs, n); ++t) {
    workers.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Experiments

Graph resolve_dataset(const BenchSpec& spec) {
  if (spec.dataset) return load_graph(*spec.dataset);
  return synth_sbm(spec.sbm, spec.graph_seed);
}

namespace {

double mean_of(const std::vector<double>& xs) { return mean_std(xs).first; }

struct Trained {
  Model model;
  TrainReport report;
};

Trained train_nodeselect(const Graph& g, const SplitMasks& masks, ModelConfig cfg, std::uint64_t seed,
                         const TrainOptions& opts = {}) {
  cfg.seed = seed;
  Model m = init_model(cfg, g.feat_dim(), static_cast<std::size_t>(g.num_classes()));
  TrainReport rep = train(m, g, masks, opts);
  return {std::move(m), std::move(rep)};
}

BenchRow nodeselect_row(const std::string& exp, const std::string& cond, const std::string& name, std::uint64_t seed,
                        const Trained& t) {
  BenchRow r = make_row(exp, cond, name, seed);
  r.selection_frac = mean_of(t.report.layer_selection);
  r.params = instantiated_param_count(t.model);
  r.peak_bytes = t.report.peak_bytes;
  r.epoch_ms = t.report.epoch_ms;
  return r;
}

std::string fraction_condition(double f) { return "noise=" + short_num(f); }

}  // namespace

NoiseCell run_clean_cell(const Graph& g, const BenchSpec& spec, std::uint64_t seed) {
  const SplitMasks masks = make_splits(g, SplitRatios{}, seed);
  NoiseCell cell;
  auto ns = train_nodeselect(g, masks, spec.model, seed);
  BenchRow r = nodeselect_row("noise", "clean", "nodeselect", seed, ns);
  r.clean_acc = ns.report.test_acc;
  cell.rows.push_back(r);
  cell.nodeselect_metrics = ns.report.metrics_csv();

  GcnConfig gc = spec.gcn;
  gc.seed = seed;
  GcnModel gm = init_gcn(gc, g.feat_dim(), static_cast<std::size_t>(g.num_classes()));
  TrainReport grep = train(gm, g, masks);
  BenchRow gr = make_row("noise", "clean", "gcn", seed);
  gr.clean_acc = grep.test_acc;
  gr.params = instantiated_param_count(gm);
  gr.peak_bytes = grep.peak_bytes;
  gr.epoch_ms = grep.epoch_ms;
  cell.rows.push_back(gr);
  cell.gcn_metrics = grep.metrics_csv();
  return cell;
}

NoiseCell run_noise_cell(const Graph& g, const BenchSpec& spec, double fraction, std::uint64_t seed,
                         double clean_nodeselect, double clean_gcn) {
  const SplitMasks clean_masks = make_splits(g, SplitRatios{}, seed);
  NoisyGraph noisy = fraction > 0.0 ? augment_with_noise(g, clean_masks, fraction, seed) : NoisyGraph{g, clean_masks};
  const std::string cond = fraction_condition(fraction);

  NoiseCell cell;
  auto ns = train_nodeselect(noisy.graph, noisy.masks, spec.model, seed);
  BenchRow r = nodeselect_row("noise", cond, "nodeselect", seed, ns);
  r.clean_acc = clean_nodeselect;
  r.noisy_acc = ns.report.test_acc;
  cell.rows.push_back(r);
  cell.nodeselect_metrics = ns.report.metrics_csv();

  GcnConfig gc = spec.gcn;
  gc.seed = seed;
  GcnModel gm = init_gcn(gc, noisy.graph.feat_dim(), static_cast<std::size_t>(noisy.graph.num_classes()));
  TrainReport grep = train(gm, noisy.graph, noisy.masks);
  BenchRow gr = make_row("noise", cond, "gcn", seed);
  gr.clean_acc = clean_gcn;
  gr.noisy_acc = grep.test_acc;
  gr.params = instantiated_param_count(gm);
  gr.peak_bytes = grep.peak_bytes;
  gr.epoch_ms = grep.epoch_ms;
  cell.rows.push_back(gr);
  cell.gcn_metrics = grep.metrics_csv();
  return cell;
}

BenchReport noise_bench(const BenchSpec& spec) {
  spec.validate();
  const Graph g = resolve_dataset(spec);
  const std::size_t ns = spec.seeds.size();

  std::vector<NoiseCell> clean(ns);
  parallel_for(ns, spec.jobs, [&](std::size_t i) { clean[i] = run_clean_cell(g, spec, spec.seeds[i]); });

  const std::size_t nf = spec.fractions.size();
  std::vector<NoiseCell> noisy(nf * ns);
  parallel_for(nf * ns, spec.jobs, [&](std::size_t k) {
    const std::size_t f = k / ns, s = k % ns;
    noisy[k] = run_noise_cell(g, spec, spec.fractions[f], spec.seeds[s], *clean[s].rows[0].clean_acc,
                              *clean[s].rows[1].clean_acc);
  });

  BenchReport rep;
  for (auto& c : clean) rep.rows.insert(rep.rows.end(), c.rows.begin(), c.rows.end());
  for (auto& c : noisy) rep.rows.insert(rep.rows.end(), c.rows.begin(), c.rows.end());
  return rep;
}

BenchReport scale_bench(const BenchSpec& spec) {
  spec.validate();
  constexpr std::size_t kEpochs = 5;
  const std::uint64_t seed = spec.seeds.front();
  std::vector<std::vector<BenchRow>> cells(spec.sizes.size());
  parallel_for(spec.sizes.size(), spec.jobs, [&](std::size_t k) {
    const std::size_t n = spec.sizes[k];
    SbmParams sp = spec.sbm;
    sp.num_nodes = n - n % static_cast<std::size_t>(sp.num_classes);
    // hold expected degree fixed (5 within-block, 1.5 between-block)
    const double block = static_cast<double>(sp.num_nodes) / sp.num_classes;
    sp.p_in = std::min(1.0, 5.0 / block);
    sp.p_out = std::min(sp.p_in, 1.5 / (static_cast<double>(sp.num_nodes) - block));
    const Graph g = synth_sbm(sp, spec.graph_seed);
    const SplitMasks masks = make_splits(g, SplitRatios{}, seed);
    const std::string cond = "n=" + std::to_string(sp.num_nodes);

    ModelConfig cfg = spec.model;
    cfg.epochs = kEpochs;
    cfg.patience = kEpochs;
    auto t = train_nodeselect(g, masks, cfg, seed);
    BenchRow r = nodeselect_row("scale", cond, "nodeselect", seed, t);
    r.clean_acc = t.report.test_acc;

    GcnConfig gc = spec.gcn;
    gc.seed = seed;
    gc.epochs = kEpochs;
    gc.patience = kEpochs;
    GcnModel gm = init_gcn(gc, g.feat_dim(), static_cast<std::size_t>(g.num_classes()));
    TrainReport grep = train(gm, g, masks);
    BenchRow gr = make_row("scale", cond, "gcn", seed);
    gr.clean_acc = grep.test_acc;
    gr.params = instantiated_param_count(gm);
    gr.peak_bytes = grep.peak_bytes;
    gr.epoch_ms = grep.epoch_ms;
    cells[k] = {r, gr};
  });
  BenchReport rep;
  for (auto& c : cells) rep.rows.insert(rep.rows.end(), c.begin(), c.end());
  return rep;
}

ThresholdAudit audit_thresholds(const Model& trained, const Graph& g, const std::vector<double>& t_grid) {
  ThresholdAudit a;
  Model m = trained;
  for (double t : t_grid) {
    for (auto& layer : m.layers) std::visit([t](auto& p) { p.threshold = t; }, layer);
    m.config.threshold = t;
    const ForwardPass pass = model_forward_pass(m, g, false);
    std::vector<double> sel;
    for (const auto& lp : pass.layers) sel.push_back(lp.selection_fraction());
    a.thresholds.push_back(t);
    a.selection.push_back(mean_of(sel));
  }
  for (std::size_t k = 1; k < a.selection.size(); ++k)
    if (a.thresholds[k] >= a.thresholds[k - 1] && a.selection[k] > a.selection[k - 1]) a.non_increasing = false;
  return a;
}

BenchReport sweep_threshold(const BenchSpec& spec, ThresholdAudit* audit) {
  spec.validate();
  const Graph g = resolve_dataset(spec);
  const std::size_t ns = spec.seeds.size();
  std::vector<BenchRow> rows(spec.t_grid.size() * ns);
  parallel_for(rows.size(), spec.jobs, [&](std::size_t k) {
    const double t = spec.t_grid[k / ns];
    const std::uint64_t seed = spec.seeds[k % ns];
    ModelConfig cfg = spec.model;
    cfg.threshold = t;
    auto tr = train_nodeselect(g, make_splits(g, SplitRatios{}, seed), cfg, seed);
    rows[k] = nodeselect_row("sweep-t", "T=" + short_num(t), "nodeselect", seed, tr);
    rows[k].clean_acc = tr.report.test_acc;
  });

  BenchReport rep{rows};
  const std::uint64_t seed = spec.seeds.front();
  auto ref = train_nodeselect(g, make_splits(g, SplitRatios{}, seed), spec.model, seed);
  ThresholdAudit a = audit_thresholds(ref.model, g, spec.t_grid);
  for (std::size_t k = 0; k < a.thresholds.size(); ++k) {
    BenchRow r = make_row("sweep-t", "audit T=" + short_num(a.thresholds[k]), "nodeselect-checkpoint", seed);
    r.selection_frac = a.selection[k];
    r.params = instantiated_param_count(ref.model);
    rep.rows.push_back(r);
  }
  if (audit) *audit = a;
  return rep;
}

BenchReport sweep_layers(const BenchSpec& spec) {
  spec.validate();
  const Graph g = resolve_dataset(spec);
  const std::size_t ns = spec.seeds.size();
  std::vector<std::vector<BenchRow>> cells(spec.l_grid.size() * ns);
  parallel_for(cells.size(), spec.jobs, [&](std::size_t k) {
    const std::size_t layers = spec.l_grid[k / ns];
    const std::uint64_t seed = spec.seeds[k % ns];
    ModelConfig cfg = spec.model;
    cfg.num_layers = layers;
    auto tr = train_nodeselect(g, make_splits(g, SplitRatios{}, seed), cfg, seed);
    const std::string cond = "L=" + std::to_string(layers);
    BenchRow model_row = nodeselect_row("sweep-l", cond, "nodeselect", seed, tr);
    model_row.clean_acc = tr.report.test_acc;
    BenchRow layer_row = model_row;
    layer_row.model = "nodeselect-layers-mean";
    layer_row.clean_acc = mean_of(tr.report.layer_test_acc);
    cells[k] = {model_row, layer_row};
  });
  BenchReport rep;
  for (auto& c : cells) rep.rows.insert(rep.rows.end(), c.begin(), c.end());
  return rep;
}

BenchReport stacking_compare(const BenchSpec& spec) {
  spec.validate();
  const Graph g = resolve_dataset(spec);
  const std::size_t ns = spec.seeds.size();
  std::vector<BenchRow> rows(2 * ns);
  parallel_for(rows.size(), spec.jobs, [&](std::size_t k) {
    const Stacking mode = k < ns ? Stacking::Parallel : Stacking::Sequential;
    const std::uint64_t seed = spec.seeds[k % ns];
    ModelConfig cfg = spec.model;
    cfg.stacking = mode;
    auto tr = train_nodeselect(g, make_splits(g, SplitRatios{}, seed), cfg, seed);
    rows[k] = nodeselect_row("stacking", to_string(mode), "nodeselect-" + to_string(mode), seed, tr);
    rows[k].clean_acc = tr.report.test_acc;
  });
  return BenchReport{rows};
}

// ---------------------------------------------------------------------------
// Diagnostics

LayerDiagnostics layer_diagnostics(const Model& m, const Graph& g, const std::vector<bool>& mask) {
  LayerDiagnostics d;
  const ForwardPass pass = model_forward_pass(m, g, false);
  for (const auto& lp : pass.layers) {
    d.standalone_acc.push_back(accuracy(lp.output(), g.labels(), mask));
    d.selection.push_back(lp.selection_fraction());
    const auto& gate =
        std::visit([](const auto& t) -> const std::vector<double>& { return t.gate; }, lp.trace);
    d.gate_count.push_back(static_cast<std::size_t>(std::count_if(gate.begin(), gate.end(), [](double v) { return v > 0.0; })));
    std::vector<std::size_t> hist(10, 0);
    for (double p : lp.p_hat()) hist[std::min<std::size_t>(9, static_cast<std::size_t>(p * 10.0))]++;
    d.phat_histogram.push_back(std::move(hist));
  }

  const std::size_t layers = pass.layers.size();
  if (layers < 2) {
    d.mean_cosine_similarity = std::numeric_limits<double>::quiet_NaN();
    return d;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    double node_sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < layers; ++a) {
      auto ha = pass.layers[a].output().row(i);
      const double na = dot(ha, ha);
      if (na == 0.0) continue;
      for (std::size_t b = a + 1; b < layers; ++b) {
        auto hb = pass.layers[b].output().row(i);
        const double nb = dot(hb, hb);
        if (nb == 0.0) continue;
        node_sum += std::clamp(dot(ha, hb) / std::sqrt(na * nb), -1.0, 1.0);
        ++pairs;
      }
    }
    if (pairs == 0) continue;
    total += node_sum / static_cast<double>(pairs);
    ++d.similarity_nodes;
  }
  d.mean_cosine_similarity =
      d.similarity_nodes ? total / static_cast<double>(d.similarity_nodes) : std::numeric_limits<double>::quiet_NaN();
  return d;
}

void write_diagnostics(const LayerDiagnostics& d, const TrainReport* report, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "diag_layers.csv", std::ios::binary);
    out << "layer,standalone_acc,selection_frac,gate_count\n";
    for (std::size_t l = 0; l < d.selection.size(); ++l)
      out << l << ',' << num(d.standalone_acc[l]) << ',' << num(d.selection[l]) << ',' << d.gate_count[l] << '\n';
  }
  {
    std::ofstream out(dir / "diag_phat_hist.csv", std::ios::binary);
    out << "layer,bin_lo,bin_hi,count\n";
    for (std::size_t l = 0; l < d.phat_histogram.size(); ++l)
      for (std::size_t b = 0; b < 10; ++b)
        out << l << ',' << short_num(b / 10.0) << ',' << short_num((b + 1) / 10.0) << ',' << d.phat_histogram[l][b]
            << '\n';
  }
  {
    std::ofstream out(dir / "diag_similarity.csv", std::ios::binary);
    out << "mean_cosine_similarity,nodes\n";
    out << (std::isnan(d.mean_cosine_similarity) ? std::string() : num(d.mean_cosine_similarity)) << ','
        << d.similarity_nodes << '\n';
  }
  if (report && !report->phat_trace.empty()) {
    std::ofstream out(dir / "diag_phat_trace.csv", std::ios::binary);
    out << "epoch,node,layer,p_hat\n";
    for (const auto& s : report->phat_trace) out << s.epoch << ',' << s.node << ',' << s.layer << ',' << num(s.p_hat) << '\n';
  }
}

}  // namespace nodeselect
