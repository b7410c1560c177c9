#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nodeselect/graph.hpp"
#include "nodeselect/model.hpp"

namespace nodeselect {

enum class Experiment { Noise, Scale, SweepT, SweepL, Stacking, Diagnostics };

Experiment parse_experiment(const std::string& name);  // throws ConfigError
std::string to_string(Experiment e);

struct BenchSpec {
  Experiment experiment = Experiment::Noise;
  std::optional<std::filesystem::path> dataset;  // SBM recipe when absent
  SbmParams sbm;
  std::uint64_t graph_seed = 0;
  std::vector<double> fractions{0.10, 0.25};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<std::size_t> sizes{1000, 2000, 4000, 8000};
  std::vector<double> t_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<std::size_t> l_grid{1, 5, 10, 20};
  ModelConfig model;
  GcnConfig gcn;
  unsigned jobs = 1;

  void validate() const;
};

struct BenchRow {
  std::string experiment;
  std::string condition;
  std::string model;
  std::uint64_t seed = 0;
  std::optional<double> clean_acc;
  std::optional<double> noisy_acc;
  std::optional<double> selection_frac;
  std::size_t params = 0;
  std::size_t peak_bytes = 0;
  std::optional<double> epoch_ms;

  // Wall-clock is the only column that is not a pure function of
  // (condition, seed); with_timing=false leaves it blank.
  std::string to_csv(bool with_timing = true) const;
};

struct AggregateRow {
  std::string experiment;
  std::string condition;
  std::string model;
  std::string metric;
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over seeds
};

struct BenchReport {
  std::vector<BenchRow> rows;

  static std::string csv_header();
  std::string to_csv(bool with_timing = true) const;
  // Metrics: clean_acc, noisy_acc, degradation (clean - noisy), selection_frac, epoch_ms.
  std::vector<AggregateRow> aggregate() const;
  std::string aggregate_csv() const;

  // Writes <stem>.csv and <stem>_aggregate.csv into dir.
  void write(const std::filesystem::path& dir, const std::string& stem) const;
};

// mean and population std
std::pair<double, double> mean_std(const std::vector<double>& xs);

Graph resolve_dataset(const BenchSpec& spec);

// One (fraction, seed) cell of the noise study for both models. fraction == 0
// trains on the unmodified graph and split.
struct NoiseCell {
  std::vector<BenchRow> rows;         // nodeselect row then gcn row
  std::string nodeselect_metrics;     // TrainReport::metrics_csv of the nodeselect run
  std::string gcn_metrics;
};
NoiseCell run_clean_cell(const Graph& g, const BenchSpec& spec, std::uint64_t seed);
NoiseCell run_noise_cell(const Graph& g, const BenchSpec& spec, double fraction, std::uint64_t seed,
                         double clean_nodeselect, double clean_gcn);

BenchReport noise_bench(const BenchSpec& spec);
BenchReport scale_bench(const BenchSpec& spec);

struct ThresholdAudit {
  std::vector<double> thresholds;
  std::vector<double> selection;  // mean over layers
  bool non_increasing = true;
};

// Re-evaluates one trained model across the grid without retraining.
ThresholdAudit audit_thresholds(const Model& trained, const Graph& g, const std::vector<double>& t_grid);

BenchReport sweep_threshold(const BenchSpec& spec, ThresholdAudit* audit = nullptr);
BenchReport sweep_layers(const BenchSpec& spec);
BenchReport stacking_compare(const BenchSpec& spec);

struct LayerDiagnostics {
  std::vector<double> standalone_acc;   // per layer, on the given mask
  std::vector<double> selection;        // per layer, p_hat >= T
  std::vector<std::size_t> gate_count;  // per layer, recount of gates > 0
  std::vector<std::vector<std::size_t>> phat_histogram;  // per layer, 10 bins over [0, 1]
  double mean_cosine_similarity = 0.0;  // NaN when fewer than two layers
  std::size_t similarity_nodes = 0;
};

LayerDiagnostics layer_diagnostics(const Model& m, const Graph& g, const std::vector<bool>& mask);

// Files: diag_layers.csv, diag_phat_hist.csv, diag_similarity.csv and, when
// the report carries a trace, diag_phat_trace.csv.
void write_diagnostics(const LayerDiagnostics& d, const TrainReport* report, const std::filesystem::path& dir);

// Runs `fn(i)` for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn);

}  // namespace nodeselect
