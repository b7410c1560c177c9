// nodeselect: train / eval / bench / gradcheck front end.
//
// Exit codes
//   0  success
//   1  runtime failure, or gradcheck tolerance breach
//   2  bad config, bad flags, unknown experiment
//   3  bad dataset, or checkpoint/dataset dimension mismatch
//
// stdout carries key=value summary lines only; diagnostics go to stderr.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "nodeselect/bench.hpp"
#include "nodeselect/gradcheck.hpp"
#include "nodeselect/graph.hpp"
#include "nodeselect/model.hpp"

namespace fs = std::filesystem;
using namespace nodeselect;

namespace {

constexpr const char* kToolVersion = "nodeselect 0.1.0";

enum Exit { kOk = 0, kRuntime = 1, kConfig = 2, kDataset = 3 };

struct DimensionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

std::string fixed6(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(6) << v;
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string data, config, out;
  std::optional<std::uint64_t> seed;
  std::vector<NodeId> trace_nodes;
};

int cmd_train(const TrainArgs& a) {
  ModelConfig cfg = a.config.empty() ? ModelConfig{} : load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const Graph g = load_graph(a.data);
  const std::uint64_t fp = dataset_fingerprint(a.data);

  fs::create_directories(a.out);
  const fs::path out(a.out);
  std::ostringstream manifest;
  manifest << "subcommand=train\n"
           << "tool_version=" << kToolVersion << "\n"
           << "data=" << fs::absolute(a.data).string() << "\n"
           << "dataset_fingerprint=" << hex64(fp) << "\n"
           << "seed=" << cfg.seed << "\n"
           << "metrics=" << (out / "metrics.csv").string() << "\n"
           << "checkpoint=" << (out / "checkpoint.txt").string() << "\n"
           << "[config]\n"
           << format_config(cfg);
  write_text(out / "manifest.txt", manifest.str());

  const SplitMasks masks = make_splits(g, SplitRatios{}, cfg.seed);
  Model m = init_model(cfg, g.feat_dim(), static_cast<std::size_t>(g.num_classes()));
  TrainOptions opts;
  opts.trace_nodes = a.trace_nodes;
  for (NodeId n : opts.trace_nodes)
    if (n >= g.num_nodes()) throw ConfigError("trace node " + std::to_string(n) + " out of range");
  const TrainReport rep = train(m, g, masks, opts);

  write_text(out / "metrics.csv", rep.metrics_csv());
  save_checkpoint(m, out / "checkpoint.txt");
  if (!opts.trace_nodes.empty()) write_diagnostics(layer_diagnostics(m, g, masks.test), &rep, out);

  std::cerr << "best epoch " << rep.best_epoch << " of " << rep.epochs.size() << ", val_acc "
            << fixed6(rep.best_val_acc) << "\n";
  std::cout << "test_acc=" << fixed6(rep.test_acc) << "\n";
  return kOk;
}

// ---- eval -----------------------------------------------------------------

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split) {
  const Model m = load_checkpoint(fs::path(checkpoint));
  const Graph g = load_graph(data);
  if (m.in_dim != g.feat_dim() || m.num_classes != static_cast<std::size_t>(g.num_classes())) {
    std::ostringstream msg;
    msg << "checkpoint expects F=" << m.in_dim << ", C=" << m.num_classes << " but dataset has F=" << g.feat_dim()
        << ", C=" << g.num_classes();
    throw DimensionMismatch(msg.str());
  }
  const SplitMasks masks = make_splits(g, SplitRatios{}, m.config.seed);
  const std::vector<bool>& mask = split == "train" ? masks.train : split == "val" ? masks.val : masks.test;
  std::cout << split << "_acc=" << fixed6(evaluate(m, g, mask)) << "\n";
  return kOk;
}

// ---- bench ----------------------------------------------------------------

struct BenchArgs {
  std::string experiment, data, config, out = "bench_out", checkpoint;
  std::vector<double> fractions{0.10, 0.25};
  std::vector<std::size_t> sizes{1000, 2000, 4000, 8000};
  std::vector<double> t_grid;
  std::vector<std::size_t> l_grid{1, 5, 10, 20};
  std::size_t seeds = 5;
  unsigned jobs = 1;
};

int cmd_bench(const BenchArgs& a) {
  BenchSpec spec;
  spec.experiment = parse_experiment(a.experiment);
  if (!a.data.empty()) spec.dataset = fs::path(a.data);
  if (!a.config.empty()) spec.model = load_config(a.config);
  spec.fractions = a.fractions;
  spec.sizes = a.sizes;
  if (!a.t_grid.empty()) spec.t_grid = a.t_grid;
  spec.l_grid = a.l_grid;
  if (a.seeds == 0) throw ConfigError("--seeds must be >= 1");
  spec.seeds.clear();
  for (std::size_t s = 0; s < a.seeds; ++s) spec.seeds.push_back(s);
  spec.jobs = a.jobs;
  if (const char* env = std::getenv("NS_THREADS")) {
    try {
      spec.jobs = static_cast<unsigned>(std::stoul(env));
    } catch (const std::exception&) {
      throw ConfigError(std::string("NS_THREADS is not a number: ") + env);
    }
  }
  spec.validate();
  const fs::path out(a.out);

  if (spec.experiment == Experiment::Diagnostics) {
    if (a.checkpoint.empty()) throw ConfigError("diag needs --checkpoint");
    const Model m = load_checkpoint(fs::path(a.checkpoint));
    const Graph g = resolve_dataset(spec);
    if (m.in_dim != g.feat_dim() || m.num_classes != static_cast<std::size_t>(g.num_classes()))
      throw DimensionMismatch("checkpoint dimensions do not match the dataset");
    const SplitMasks masks = make_splits(g, SplitRatios{}, m.config.seed);
    const LayerDiagnostics d = layer_diagnostics(m, g, masks.test);
    write_diagnostics(d, nullptr, out);
    std::cout << "layers=" << d.selection.size() << "\n";
    std::cout << "mean_cosine_similarity=" << fixed6(d.mean_cosine_similarity) << "\n";
    return kOk;
  }

  BenchReport rep;
  switch (spec.experiment) {
    case Experiment::Noise:
      rep = noise_bench(spec);
      break;
    case Experiment::Scale:
      rep = scale_bench(spec);
      break;
    case Experiment::SweepT: {
      ThresholdAudit audit;
      rep = sweep_threshold(spec, &audit);
      std::cout << "selection_non_increasing=" << (audit.non_increasing ? "true" : "false") << "\n";
      break;
    }
    case Experiment::SweepL:
      rep = sweep_layers(spec);
      break;
    case Experiment::Stacking:
      rep = stacking_compare(spec);
      break;
    case Experiment::Diagnostics:
      break;
  }
  const std::string stem = to_string(spec.experiment);
  rep.write(out, stem);
  std::cout << "rows=" << rep.rows.size() << "\n";
  std::cout << "report=" << (out / (stem + ".csv")).string() << "\n";
  return kOk;
}

// ---- gradcheck ------------------------------------------------------------

int cmd_gradcheck(const std::string& mode, std::size_t nodes, std::size_t trials, bool inject_fault) {
  if (nodes < 2 || nodes > 16) throw ConfigError("--nodes must be in [2, 16]");
  GradcheckOptions o;
  o.mode = mode == "soft" ? GradcheckMode::Soft : GradcheckMode::HardFrozen;
  o.nodes = nodes;
  o.trials = trials;
  o.corrupt_backward = inject_fault;
  const GradcheckResult r = run_gradcheck(o);
  std::cout << "max_rel_err=" << std::scientific << std::setprecision(3) << r.max_rel_err << "\n";
  std::cout << "checked=" << r.checked << "\nskipped=" << r.skipped << "\n";
  if (!r.passed) {
    std::cerr << "gradient mismatch above " << o.tolerance << ": " << r.worst << "\n";
    return kRuntime;
  }
  return kOk;
}

template <class F>
int guarded(F&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kDataset;
  } catch (const DimensionMismatch& e) {
    std::cerr << "dimension mismatch: " << e.what() << "\n";
    return kDataset;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NODE-SELECT graph neural network"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  TrainArgs ta;
  std::uint64_t seed_value = 0;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a run directory");
  train_cmd->add_option("--data", ta.data, "dataset directory")->required();
  train_cmd->add_option("--config", ta.config, "key=value config file");
  auto* seed_opt = train_cmd->add_option("--seed", seed_value, "overrides the config seed");
  train_cmd->add_option("--out", ta.out, "run directory")->required();
  train_cmd->add_option("--trace-nodes", ta.trace_nodes, "node ids whose p_hat is traced (max 8)")->delimiter(',');

  std::string ckpt, edata, split = "test";
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ckpt)->required();
  eval_cmd->add_option("--data", edata)->required();
  eval_cmd->add_option("--split", split)->check(CLI::IsMember({"test", "val", "train"}));

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "run an experiment");
  bench_cmd->add_option("--experiment", ba.experiment, "noise|scale|sweep-t|sweep-l|stacking|diag")->required();
  bench_cmd->add_option("--data", ba.data, "dataset directory (default: SBM recipe)");
  bench_cmd->add_option("--config", ba.config);
  bench_cmd->add_option("--out", ba.out);
  bench_cmd->add_option("--checkpoint", ba.checkpoint, "trained checkpoint (diag)");
  bench_cmd->add_option("--fractions", ba.fractions)->delimiter(',');
  bench_cmd->add_option("--sizes", ba.sizes)->delimiter(',');
  bench_cmd->add_option("--t-grid", ba.t_grid)->delimiter(',');
  bench_cmd->add_option("--l-grid", ba.l_grid)->delimiter(',');
  bench_cmd->add_option("--seeds", ba.seeds, "number of seeds, 0..N-1");
  bench_cmd->add_option("--jobs", ba.jobs, "parallel cells (NS_THREADS overrides)");

  std::string mode = "soft";
  std::size_t nodes = 6, trials = 20;
  bool inject_fault = false;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  grad_cmd->add_option("--mode", mode)->check(CLI::IsMember({"soft", "hard-frozen"}));
  grad_cmd->add_option("--nodes", nodes);
  grad_cmd->add_option("--trials", trials);
  grad_cmd->add_flag("--inject-fault", inject_fault)->group("");  // test fixture

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  if (*train_cmd) {
    if (*seed_opt) ta.seed = seed_value;
    return guarded([&] { return cmd_train(ta); });
  }
  if (*eval_cmd) return guarded([&] { return cmd_eval(ckpt, edata, split); });
  if (*bench_cmd) return guarded([&] { return cmd_bench(ba); });
  return guarded([&] { return cmd_gradcheck(mode, nodes, trials, inject_fault); });
}
