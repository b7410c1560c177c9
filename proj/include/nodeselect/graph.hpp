#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nodeselect/matrix.hpp"

namespace nodeselect {

using NodeId = std::uint32_t;

class DatasetError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Undirected graph in CSR form with dense node features and labels.
// Each undirected edge is stored in both rows; self-loops are never stored.
class Graph {
public:
  Graph() = default;

  // Builds from an undirected edge list. Edges are symmetrized, duplicates
  // collapsed and self-loops dropped (the count is reported via dropped_self_loops()).
  static Graph from_edges(std::size_t num_nodes, std::span<const std::pair<NodeId, NodeId>> edges,
                          DenseMatrix features, std::vector<int> labels, int num_classes);

  std::size_t num_nodes() const noexcept { return labels_.size(); }
  std::size_t num_directed_edges() const noexcept { return col_indices_.size(); }
  std::size_t num_undirected_edges() const noexcept { return col_indices_.size() / 2; }
  std::size_t feat_dim() const noexcept { return features_.cols(); }
  int num_classes() const noexcept { return num_classes_; }

  std::span<const NodeId> neighbors(std::size_t i) const {
    return {col_indices_.data() + row_offsets_[i], row_offsets_[i + 1] - row_offsets_[i]};
  }
  std::size_t degree(std::size_t i) const { return row_offsets_[i + 1] - row_offsets_[i]; }
  double mean_degree() const;

  const std::vector<std::size_t>& row_offsets() const noexcept { return row_offsets_; }
  const std::vector<NodeId>& col_indices() const noexcept { return col_indices_; }
  const DenseMatrix& features() const noexcept { return features_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  std::size_t dropped_self_loops() const noexcept { return dropped_self_loops_; }

  // Undirected edge list with src < dst, sorted.
  std::vector<std::pair<NodeId, NodeId>> edge_list() const;

  // Throws DatasetError if any structural invariant is broken.
  void validate() const;

  bool operator==(const Graph& o) const {
    return row_offsets_ == o.row_offsets_ && col_indices_ == o.col_indices_ && features_ == o.features_ &&
           labels_ == o.labels_ && num_classes_ == o.num_classes_;
  }

private:
  std::vector<std::size_t> row_offsets_{0};
  std::vector<NodeId> col_indices_;
  DenseMatrix features_;
  std::vector<int> labels_;
  int num_classes_ = 0;
  std::size_t dropped_self_loops_ = 0;
};

struct SplitMasks {
  std::vector<bool> train;
  std::vector<bool> val;
  std::vector<bool> test;
  std::vector<bool> pseudo;

  std::size_t size() const noexcept { return train.size(); }
  bool operator==(const SplitMasks&) const = default;
};

std::size_t count(const std::vector<bool>& mask);

struct SplitRatios {
  double train = 0.2;
  double val = 0.2;
  double test = 0.6;
};

// Dataset container: edges.csv, features.csv, labels.csv, meta.csv.
Graph load_graph(const std::filesystem::path& dir);
void save_graph(const Graph& g, const std::filesystem::path& dir);

// 64-bit FNV-1a over the four container files, in fixed order.
std::uint64_t dataset_fingerprint(const std::filesystem::path& dir);

// Seeded uniform permutation; first floor(r_train*N) nodes train, next
// floor(r_val*N) validation, remainder test.
SplitMasks make_splits(const Graph& g, SplitRatios ratios, std::uint64_t seed);
SplitMasks make_splits(std::size_t num_nodes, SplitRatios ratios, std::uint64_t seed);

struct NoisyGraph {
  Graph graph;
  SplitMasks masks;
};

// Appends round(fraction*N) pseudo vertices with standard-normal features,
// uniform random labels and round(mean degree) (min 1) distinct random
// neighbours among the original vertices. Original vertices keep their split
// from `masks`; pseudo vertices are split 20-20-60 among themselves and then
// removed from the test set.
NoisyGraph augment_with_noise(const Graph& g, const SplitMasks& masks, double fraction, std::uint64_t seed);

struct SbmParams {
  std::size_t num_nodes = 400;
  int num_classes = 4;
  double p_in = 0.05;
  double p_out = 0.005;
  std::size_t feat_dim = 16;
  double feat_sep = 1.0;
};

// Planted-partition graph. Node i belongs to block i / (n / classes); its
// features are feat_sep * e_{block mod feat_dim} plus standard-normal noise.
Graph synth_sbm(const SbmParams& params, std::uint64_t seed);

}  // namespace nodeselect
