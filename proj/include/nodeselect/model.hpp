#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "nodeselect/graph.hpp"
#include "nodeselect/kernels.hpp"
#include "nodeselect/layers.hpp"
#include "nodeselect/matrix.hpp"

namespace nodeselect {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Stacking { Parallel, Sequential };

struct ModelConfig {
  std::size_t num_layers = 3;
  std::size_t out_dim = 0;  // 0 means "number of classes"
  double threshold = 0.4;
  GateMode gate_mode = GateMode::Hard;
  std::size_t depth = 1;  // 1 selects the simple layer
  Stacking stacking = Stacking::Parallel;
  Activation activation = Activation::Relu;
  double dropout = 0.5;
  double lr = 0.005;
  double weight_decay = 5e-4;
  std::size_t epochs = 500;
  std::size_t patience = 50;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Flat key=value text; keys are the field names above. Unknown keys, bad
// values and duplicate keys throw ConfigError.
ModelConfig parse_config(const std::string& text, ModelConfig base = {});
ModelConfig load_config(const std::filesystem::path& path);
std::string format_config(const ModelConfig& cfg);

std::string to_string(GateMode m);
std::string to_string(Stacking s);
std::string to_string(Activation a);

using Layer = std::variant<SimpleLayerParams, ComplexLayerParams>;

struct Model {
  ModelConfig config;
  std::size_t in_dim = 0;
  std::size_t num_classes = 0;
  std::vector<Layer> layers;

  std::size_t out_dim() const noexcept { return config.out_dim == 0 ? num_classes : config.out_dim; }
};

// Glorot-uniform init; layer l draws from sub-seed (seed, l).
Model init_model(const ModelConfig& cfg, std::size_t in_dim, std::size_t num_classes);

std::vector<Param*> parameters(Model& m);
// Same order as parameters(): "layer<l>.W", "layer<l>.W0", ...
std::vector<std::string> parameter_names(const Model& m);
std::size_t instantiated_param_count(const Model& m);

// L * F' * (F + 3): entry count of a simple-layer model without biases.
std::size_t param_count(std::size_t num_layers, std::size_t in_dim, std::size_t out_dim);

struct LayerPass {
  std::variant<SimpleLayerTrace, ComplexLayerTrace> trace;
  DenseMatrix input_copy;  // sequential stacking only: the layer's input
  DropoutResult dropped;

  const DenseMatrix& output() const;
  const std::vector<double>& p_hat() const;
  double selection_fraction() const;
};

struct ForwardPass {
  std::vector<LayerPass> layers;
  DenseMatrix logits;
};

// `dropout_counter` picks the dropout stream; layer l uses counter + l.
ForwardPass model_forward_pass(const Model& m, const Graph& g, bool training, std::uint64_t dropout_counter = 0);
DenseMatrix model_forward(const Model& m, const Graph& g, bool training, std::uint64_t dropout_counter = 0);

// Accumulates gradients of every parameter from d loss / d logits.
void model_backward(Model& m, const Graph& g, const ForwardPass& pass, const DenseMatrix& grad_logits,
                    GateBackward gb = GateBackward::StraightThrough);

// argmax with ties toward the smaller class id
std::vector<int> predict(const DenseMatrix& logits);
double accuracy(const DenseMatrix& logits, std::span<const int> labels, const std::vector<bool>& mask);
double evaluate(const Model& m, const Graph& g, const std::vector<bool>& mask);

struct EpochRecord {
  double train_loss = 0.0;
  double val_acc = 0.0;
};

struct PhatSample {
  std::size_t epoch = 0;
  NodeId node = 0;
  std::size_t layer = 0;
  double p_hat = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  double test_acc = 0.0;
  std::vector<double> layer_selection;  // per layer, at best weights
  std::vector<double> layer_test_acc;   // per layer standalone, at best weights
  std::vector<PhatSample> phat_trace;
  double wall_ms = 0.0;
  double epoch_ms = 0.0;  // mean wall time per epoch
  std::size_t peak_bytes = 0;

  // "epoch,train_loss,val_acc" CSV with round-trip precision.
  std::string metrics_csv() const;
};

struct TrainOptions {
  std::vector<NodeId> trace_nodes;  // at most 8 are traced
  GateBackward gate_backward = GateBackward::StraightThrough;
};

// Full-batch Adam training with early stopping on validation accuracy.
// Restores the best-validation weights before scoring the test mask.
TrainReport train(Model& m, const Graph& g, const SplitMasks& masks, const TrainOptions& opts = {});

// Two-layer GCN used as a comparison foil: logits = Â dropout(relu(Â X W1^T)) W2^T.
struct GcnConfig {
  std::size_t hidden = 16;
  double dropout = 0.5;
  double lr = 0.01;
  double weight_decay = 5e-4;
  std::size_t epochs = 500;
  std::size_t patience = 50;
  std::uint64_t seed = 0;
};

struct GcnModel {
  GcnConfig config;
  Param w1;  // hidden x F
  Param w2;  // C x hidden
};

GcnModel init_gcn(const GcnConfig& cfg, std::size_t in_dim, std::size_t num_classes);
std::size_t instantiated_param_count(const GcnModel& m);
DenseMatrix gcn_forward(const GcnModel& m, const Graph& g, bool training, std::uint64_t dropout_counter = 0);
TrainReport train(GcnModel& m, const Graph& g, const SplitMasks& masks);

// Text checkpoint: header, config, then every parameter with 17 significant digits.
void save_checkpoint(const Model& m, std::ostream& out);
void save_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_checkpoint(std::istream& in);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace nodeselect
