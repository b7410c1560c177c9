#include "nodeselect/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "nodeselect/rng.hpp"

namespace nodeselect {

namespace fs = std::filesystem;

Graph Graph::from_edges(std::size_t num_nodes, std::span<const std::pair<NodeId, NodeId>> edges,
                        DenseMatrix features, std::vector<int> labels, int num_classes) {
  if (labels.size() != num_nodes) throw DatasetError("label count does not match node count");
  if (features.rows() != num_nodes) throw DatasetError("feature row count does not match node count");

  std::vector<std::pair<NodeId, NodeId>> directed;
  directed.reserve(edges.size() * 2);
  Graph g;
  for (auto [a, b] : edges) {
    if (a >= num_nodes || b >= num_nodes) {
      throw DatasetError("edge (" + std::to_string(a) + "," + std::to_string(b) + ") references node >= " +
                         std::to_string(num_nodes));
    }
    if (a == b) {
      ++g.dropped_self_loops_;
      continue;
    }
    directed.emplace_back(a, b);
    directed.emplace_back(b, a);
  }
  std::sort(directed.begin(), directed.end());
  directed.erase(std::unique(directed.begin(), directed.end()), directed.end());

  g.row_offsets_.assign(num_nodes + 1, 0);
  for (auto [a, b] : directed) ++g.row_offsets_[a + 1];
  std::partial_sum(g.row_offsets_.begin(), g.row_offsets_.end(), g.row_offsets_.begin());
  g.col_indices_.reserve(directed.size());
  for (auto [a, b] : directed) g.col_indices_.push_back(b);

  g.features_ = std::move(features);
  g.labels_ = std::move(labels);
  g.num_classes_ = num_classes;
  g.validate();
  return g;
}

double Graph::mean_degree() const {
  if (num_nodes() == 0) return 0.0;
  return static_cast<double>(num_directed_edges()) / static_cast<double>(num_nodes());
}

std::vector<std::pair<NodeId, NodeId>> Graph::edge_list() const {
  std::vector<std::pair<NodeId, NodeId>> out;
  out.reserve(num_undirected_edges());
  for (std::size_t i = 0; i < num_nodes(); ++i)
    for (NodeId j : neighbors(i))
      if (i < j) out.emplace_back(static_cast<NodeId>(i), j);
  return out;
}

void Graph::validate() const {
  const std::size_t n = num_nodes();
  if (row_offsets_.size() != n + 1 || row_offsets_.front() != 0 || row_offsets_.back() != col_indices_.size())
    throw DatasetError("row_offsets malformed");
  for (std::size_t i = 0; i < n; ++i) {
    if (row_offsets_[i] > row_offsets_[i + 1]) throw DatasetError("row_offsets decreasing");
    for (NodeId j : neighbors(i)) {
      if (j >= n) throw DatasetError("column index out of range");
      if (j == i) throw DatasetError("self-loop stored");
      auto back = neighbors(j);
      if (!std::binary_search(back.begin(), back.end(), static_cast<NodeId>(i)))
        throw DatasetError("adjacency not symmetric");
    }
  }
  if (num_classes_ < 1) throw DatasetError("num_classes must be positive");
  for (int l : labels_)
    if (l < 0 || l >= num_classes_) throw DatasetError("label " + std::to_string(l) + " out of range");
  if (features_.rows() != n) throw DatasetError("feature rows mismatch");
  for (double v : features_.data())
    if (!std::isfinite(v)) throw DatasetError("non-finite feature value");
}

std::size_t count(const std::vector<bool>& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

// ---------------------------------------------------------------------------
// CSV container

namespace {

std::ifstream open_required(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DatasetError("cannot open " + p.string());
  return in;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& where) {
  std::istringstream ss(text);
  T value{};
  ss >> value;
  if (ss.fail()) throw DatasetError(where + ": cannot parse '" + text + "'");
  ss >> std::ws;
  if (!ss.eof()) throw DatasetError(where + ": trailing characters in '" + text + "'");
  return value;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

struct Meta {
  std::size_t num_nodes = 0;
  int num_classes = 0;
  std::size_t feat_dim = 0;
};

Meta read_meta(const fs::path& p) {
  auto in = open_required(p);
  Meta m;
  bool have_n = false, have_c = false, have_f = false;
  std::string line;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw DatasetError("meta.csv: expected key=value, got '" + line + "'");
    auto key = line.substr(0, eq);
    auto val = line.substr(eq + 1);
    if (key == "num_nodes") {
      m.num_nodes = parse_number<std::size_t>(val, "meta.csv num_nodes");
      have_n = true;
    } else if (key == "num_classes") {
      m.num_classes = parse_number<int>(val, "meta.csv num_classes");
      have_c = true;
    } else if (key == "feat_dim") {
      m.feat_dim = parse_number<std::size_t>(val, "meta.csv feat_dim");
      have_f = true;
    } else {
      throw DatasetError("meta.csv: unknown key '" + key + "'");
    }
  }
  if (!have_n || !have_c || !have_f) throw DatasetError("meta.csv: missing num_nodes, num_classes or feat_dim");
  return m;
}

}  // namespace

Graph load_graph(const fs::path& dir) {
  const Meta meta = read_meta(dir / "meta.csv");
  const std::size_t n = meta.num_nodes;

  std::vector<std::pair<NodeId, NodeId>> edges;
  {
    auto in = open_required(dir / "edges.csv");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = strip_cr(line);
      if (line.empty()) continue;
      auto cells = split_commas(line);
      const std::string where = "edges.csv:" + std::to_string(lineno);
      if (cells.size() != 2) throw DatasetError(where + ": expected 'src,dst'");
      auto a = parse_number<std::uint64_t>(cells[0], where);
      auto b = parse_number<std::uint64_t>(cells[1], where);
      if (a >= n || b >= n)
        throw DatasetError(where + ": node id >= declared num_nodes " + std::to_string(n));
      edges.emplace_back(static_cast<NodeId>(a), static_cast<NodeId>(b));
    }
  }

  DenseMatrix features(n, meta.feat_dim);
  {
    auto in = open_required(dir / "features.csv");
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
      line = strip_cr(line);
      if (line.empty()) continue;
      const std::string where = "features.csv:" + std::to_string(row + 1);
      if (row >= n) throw DatasetError(where + ": more feature rows than num_nodes");
      auto cells = split_commas(line);
      if (cells.size() != meta.feat_dim)
        throw DatasetError(where + ": ragged row, expected " + std::to_string(meta.feat_dim) + " values, got " +
                           std::to_string(cells.size()));
      for (std::size_t c = 0; c < cells.size(); ++c) features(row, c) = parse_number<double>(cells[c], where);
      ++row;
    }
    if (row != n) throw DatasetError("features.csv: expected " + std::to_string(n) + " rows, got " + std::to_string(row));
  }

  std::vector<int> labels;
  {
    auto in = open_required(dir / "labels.csv");
    std::string line;
    while (std::getline(in, line)) {
      line = strip_cr(line);
      if (line.empty()) continue;
      const std::string where = "labels.csv:" + std::to_string(labels.size() + 1);
      int l = parse_number<int>(line, where);
      if (l < 0 || l >= meta.num_classes)
        throw DatasetError(where + ": label " + std::to_string(l) + " out of range [0," +
                           std::to_string(meta.num_classes) + ")");
      labels.push_back(l);
    }
    if (labels.size() != n)
      throw DatasetError("labels.csv: expected " + std::to_string(n) + " rows, got " + std::to_string(labels.size()));
  }

  Graph g = Graph::from_edges(n, edges, std::move(features), std::move(labels), meta.num_classes);
  if (g.dropped_self_loops() > 0)
    std::cerr << "warning: dropped " << g.dropped_self_loops() << " self-loop(s) from " << dir.string() << "\n";
  return g;
}

void save_graph(const Graph& g, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "meta.csv", std::ios::binary);
    out << "num_nodes=" << g.num_nodes() << "\nnum_classes=" << g.num_classes() << "\nfeat_dim=" << g.feat_dim()
        << "\n";
  }
  {
    std::ofstream out(dir / "edges.csv", std::ios::binary);
    for (auto [a, b] : g.edge_list()) out << a << ',' << b << '\n';
  }
  {
    std::ofstream out(dir / "features.csv", std::ios::binary);
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < g.num_nodes(); ++i) {
      auto r = g.features().row(i);
      for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "," : "") << r[c];
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "labels.csv", std::ios::binary);
    for (int l : g.labels()) out << l << '\n';
  }
}

std::uint64_t dataset_fingerprint(const fs::path& dir) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* name : {"edges.csv", "features.csv", "labels.csv", "meta.csv"}) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw DatasetError("cannot open " + (dir / name).string());
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
      for (std::streamsize i = 0; i < in.gcount(); ++i) {
        h ^= static_cast<unsigned char>(buf[i]);
        h *= 0x100000001b3ULL;
      }
    }
    h ^= 0xff;  // file separator
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Splits and noise

SplitMasks make_splits(std::size_t n, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0)
    throw std::invalid_argument("make_splits: ratios must be positive");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw std::invalid_argument("make_splits: ratios must sum to 1");

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::Split)}));
  std::shuffle(perm.begin(), perm.end(), rng.engine());

  const auto n_train = static_cast<std::size_t>(std::floor(ratios.train * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::floor(ratios.val * static_cast<double>(n)));

  SplitMasks m{std::vector<bool>(n), std::vector<bool>(n), std::vector<bool>(n), std::vector<bool>(n)};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t v = perm[k];
    if (k < n_train)
      m.train[v] = true;
    else if (k < n_train + n_val)
      m.val[v] = true;
    else
      m.test[v] = true;
  }
  return m;
}

SplitMasks make_splits(const Graph& g, SplitRatios ratios, std::uint64_t seed) {
  return make_splits(g.num_nodes(), ratios, seed);
}

NoisyGraph augment_with_noise(const Graph& g, const SplitMasks& masks, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) throw std::invalid_argument("augment_with_noise: fraction must be in (0, 1]");
  if (masks.size() != g.num_nodes()) throw std::invalid_argument("augment_with_noise: masks do not match graph");

  const std::size_t n = g.num_nodes();
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  const auto rounded = static_cast<std::size_t>(std::max(1LL, std::llround(g.mean_degree())));
  const std::size_t d = std::min(n, rounded);
  const std::size_t total = n + k;

  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::Noise)}));

  DenseMatrix features(total, g.feat_dim());
  for (std::size_t i = 0; i < n; ++i) std::copy(g.features().row(i).begin(), g.features().row(i).end(), features.row(i).begin());
  std::vector<int> labels = g.labels();
  labels.resize(total);

  auto edges = g.edge_list();
  std::vector<NodeId> picked;
  for (std::size_t p = 0; p < k; ++p) {
    const auto v = static_cast<NodeId>(n + p);
    for (double& x : features.row(v)) x = rng.normal();
    labels[v] = static_cast<int>(rng.below(static_cast<std::uint64_t>(g.num_classes())));
    // d distinct neighbours, rejection sampling (d <= n).
    picked.clear();
    while (picked.size() < d) {
      auto u = static_cast<NodeId>(rng.below(n));
      if (std::find(picked.begin(), picked.end(), u) == picked.end()) picked.push_back(u);
    }
    for (NodeId u : picked) edges.emplace_back(u, v);
  }

  NoisyGraph out{Graph::from_edges(total, edges, std::move(features), std::move(labels), g.num_classes()), {}};

  SplitMasks& m = out.masks;
  m.train.assign(total, false);
  m.val.assign(total, false);
  m.test.assign(total, false);
  m.pseudo.assign(total, false);
  for (std::size_t i = 0; i < n; ++i) {
    m.train[i] = masks.train[i];
    m.val[i] = masks.val[i];
    m.test[i] = masks.test[i] && !masks.pseudo[i];
    m.pseudo[i] = masks.pseudo[i];
  }
  if (k > 0) {
    const SplitMasks local = make_splits(k, SplitRatios{}, derive_seed(seed, {static_cast<std::uint64_t>(Stream::Noise), 1}));
    for (std::size_t p = 0; p < k; ++p) {
      m.train[n + p] = local.train[p];
      m.val[n + p] = local.val[p];
      m.pseudo[n + p] = true;  // the test share of pseudo vertices is discarded
    }
  }
  return out;
}

Graph synth_sbm(const SbmParams& p, std::uint64_t seed) {
  if (!(p.p_out >= 0.0 && p.p_out <= p.p_in && p.p_in <= 1.0))
    throw std::invalid_argument("synth_sbm: require 0 <= p_out <= p_in <= 1");
  if (p.num_classes < 1 || p.num_nodes % static_cast<std::size_t>(p.num_classes) != 0)
    throw std::invalid_argument("synth_sbm: num_nodes must be divisible by num_classes");
  if (p.feat_dim < 1) throw std::invalid_argument("synth_sbm: feat_dim must be positive");

  const std::size_t n = p.num_nodes;
  const std::size_t block = n / static_cast<std::size_t>(p.num_classes);
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::Graph)}));

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i / block);

  std::vector<std::pair<NodeId, NodeId>> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double prob = labels[i] == labels[j] ? p.p_in : p.p_out;
      if (rng.uniform() < prob) edges.emplace_back(static_cast<NodeId>(i), static_cast<NodeId>(j));
    }
  }

  DenseMatrix features(n, p.feat_dim);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = features.row(i);
    for (double& x : r) x = rng.normal();
    r[static_cast<std::size_t>(labels[i]) % p.feat_dim] += p.feat_sep;
  }
  return Graph::from_edges(n, edges, std::move(features), std::move(labels), p.num_classes);
}

}  // namespace nodeselect
