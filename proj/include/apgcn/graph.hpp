#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "apgcn/dense.hpp"
#include "apgcn/error.hpp"
#include "apgcn/rng.hpp"

namespace apgcn {

using EdgeList = std::vector<std::pair<std::size_t, std::size_t>>;

/// Immutable undirected graph with node features and labels. Every edge is
/// stored as two arcs; rows of the CSR are sorted and carry no self-loops.
struct GraphBundle {
  std::size_t n_nodes = 0;
  std::size_t n_edges = 0;
  std::vector<std::uint64_t> csr_offsets{0};
  std::vector<std::uint32_t> csr_targets;
  Matrix<double> features;
  std::vector<std::int32_t> labels;
  std::size_t n_classes = 0;
  std::vector<std::string> names;

  std::size_t d_features() const { return features.cols(); }
  std::size_t n_arcs() const { return csr_targets.size(); }

  std::span<const std::uint32_t> neighbors(std::size_t i) const {
    return {csr_targets.data() + csr_offsets[i], csr_targets.data() + csr_offsets[i + 1]};
  }

  /// Degree statistic in the convention of the published dataset tables,
  /// which count each stored arc once per endpoint (4 * edges / nodes).
  double table_average_degree() const {
    return n_nodes ? 2.0 * static_cast<double>(n_arcs()) / static_cast<double>(n_nodes) : 0.0;
  }
  double mean_degree() const {
    return n_nodes ? static_cast<double>(n_arcs()) / static_cast<double>(n_nodes) : 0.0;
  }

  bool operator==(const GraphBundle&) const = default;
};

/// Builds a symmetric CSR graph. Direction is ignored; duplicate edges and
/// self-loops are dropped. Labels must lie in [0, n_classes); when
/// n_classes is 0 it is inferred as max(label) + 1.
inline GraphBundle build_graph(const EdgeList& edges, Matrix<double> features, std::vector<std::int32_t> labels,
                               std::size_t n_classes = 0) {
  const std::size_t n = labels.size();
  if (n == 0) throw InvalidArgument("build_graph: empty graph");
  if (features.rows() != n)
    throw InvalidArgument("build_graph: feature rows (" + std::to_string(features.rows()) + ") != label count (" +
                          std::to_string(n) + ")");
  if (n > std::size_t{UINT32_MAX}) throw InvalidArgument("build_graph: too many nodes");

  std::int32_t max_label = -1;
  for (auto y : labels) {
    if (y < 0) throw InvalidArgument("build_graph: negative label");
    max_label = std::max(max_label, y);
  }
  if (n_classes == 0) n_classes = static_cast<std::size_t>(max_label) + 1;
  if (static_cast<std::size_t>(max_label) >= n_classes) throw InvalidArgument("build_graph: label >= n_classes");

  std::vector<std::vector<std::uint32_t>> adj(n);
  for (auto [u, v] : edges) {
    if (u >= n || v >= n)
      throw InvalidArgument("build_graph: edge (" + std::to_string(u) + "," + std::to_string(v) +
                            ") out of range for " + std::to_string(n) + " nodes");
    if (u == v) continue;
    adj[u].push_back(static_cast<std::uint32_t>(v));
    adj[v].push_back(static_cast<std::uint32_t>(u));
  }

  GraphBundle g;
  g.n_nodes = n;
  g.csr_offsets.assign(1, 0);
  g.csr_offsets.reserve(n + 1);
  for (auto& row : adj) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    g.csr_targets.insert(g.csr_targets.end(), row.begin(), row.end());
    g.csr_offsets.push_back(g.csr_targets.size());
  }
  g.n_edges = g.csr_targets.size() / 2;
  g.features = std::move(features);
  g.labels = std::move(labels);
  g.n_classes = n_classes;
  return g;
}

inline GraphBundle build_graph(const EdgeList& edges, const std::vector<std::vector<double>>& feature_rows,
                               std::vector<std::int32_t> labels, std::size_t n_classes = 0) {
  return build_graph(edges, Matrix<double>::from_rows(feature_rows), std::move(labels), n_classes);
}

/// Checks the structural invariants of a bundle; throws on the first violation.
inline void validate(const GraphBundle& g) {
  if (g.n_nodes == 0) throw InvalidArgument("graph: empty");
  if (g.csr_offsets.size() != g.n_nodes + 1 || g.csr_offsets.front() != 0)
    throw InvalidArgument("graph: bad offsets length");
  for (std::size_t i = 0; i < g.n_nodes; ++i)
    if (g.csr_offsets[i] > g.csr_offsets[i + 1]) throw InvalidArgument("graph: offsets decreasing");
  if (g.csr_offsets.back() != g.csr_targets.size() || g.csr_targets.size() != 2 * g.n_edges)
    throw InvalidArgument("graph: arc count mismatch");
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    auto nb = g.neighbors(i);
    for (std::size_t a = 0; a < nb.size(); ++a) {
      const auto j = nb[a];
      if (j >= g.n_nodes) throw InvalidArgument("graph: target out of range");
      if (j == i) throw InvalidArgument("graph: stored self-loop");
      if (a > 0 && nb[a - 1] >= j) throw InvalidArgument("graph: row not strictly sorted");
      auto back = g.neighbors(j);
      if (!std::binary_search(back.begin(), back.end(), static_cast<std::uint32_t>(i)))
        throw InvalidArgument("graph: asymmetric adjacency");
    }
  }
  if (g.features.rows() != g.n_nodes || g.labels.size() != g.n_nodes)
    throw InvalidArgument("graph: feature/label count mismatch");
  for (auto y : g.labels)
    if (y < 0 || static_cast<std::size_t>(y) >= g.n_classes) throw InvalidArgument("graph: label out of range");
}

/// Component id per node; ids are assigned in order of each component's
/// smallest node index.
inline std::vector<std::size_t> component_labels(const GraphBundle& g, std::size_t* n_components = nullptr) {
  constexpr auto kUnset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> comp(g.n_nodes, kUnset);
  std::size_t next = 0;
  std::vector<std::uint32_t> stack;
  for (std::size_t s = 0; s < g.n_nodes; ++s) {
    if (comp[s] != kUnset) continue;
    comp[s] = next;
    stack.assign(1, static_cast<std::uint32_t>(s));
    while (!stack.empty()) {
      const auto u = stack.back();
      stack.pop_back();
      for (auto v : g.neighbors(u)) {
        if (comp[v] == kUnset) {
          comp[v] = next;
          stack.push_back(v);
        }
      }
    }
    ++next;
  }
  if (n_components) *n_components = next;
  return comp;
}

/// Induced subgraph on `keep` (ascending original indices).
inline GraphBundle induced_subgraph(const GraphBundle& g, const std::vector<std::size_t>& keep) {
  constexpr auto kDropped = static_cast<std::uint32_t>(-1);
  std::vector<std::uint32_t> remap(g.n_nodes, kDropped);
  for (std::size_t k = 0; k < keep.size(); ++k) remap[keep[k]] = static_cast<std::uint32_t>(k);

  GraphBundle out;
  out.n_nodes = keep.size();
  out.n_classes = g.n_classes;
  out.csr_offsets.assign(1, 0);
  out.features = Matrix<double>(keep.size(), g.d_features());
  out.labels.reserve(keep.size());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const auto old = keep[k];
    for (auto v : g.neighbors(old))
      if (remap[v] != kDropped) out.csr_targets.push_back(remap[v]);
    out.csr_offsets.push_back(out.csr_targets.size());
    std::copy(g.features.row(old).begin(), g.features.row(old).end(), out.features.row(k).begin());
    out.labels.push_back(g.labels[old]);
    if (!g.names.empty()) out.names.push_back(g.names[old]);
  }
  out.n_edges = out.csr_targets.size() / 2;
  return out;
}

/// Keeps the largest connected component, re-indexed by ascending original
/// index. Equal-size ties go to the component holding the smallest index.
inline GraphBundle largest_connected_component(const GraphBundle& g) {
  std::size_t n_comp = 0;
  const auto comp = component_labels(g, &n_comp);
  std::vector<std::size_t> sizes(n_comp, 0);
  for (auto c : comp) ++sizes[c];
  const auto best = static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  std::vector<std::size_t> keep;
  keep.reserve(sizes[best]);
  for (std::size_t i = 0; i < g.n_nodes; ++i)
    if (comp[i] == best) keep.push_back(i);
  return induced_subgraph(g, keep);
}

/// Scales each feature row to unit l1 norm; all-zero rows stay zero.
inline GraphBundle l1_normalize_features(GraphBundle g) {
  for (std::size_t i = 0; i < g.features.rows(); ++i) {
    auto row = g.features.row(i);
    double sum = 0.0;
    for (double v : row) {
      if (v < 0.0 || std::isnan(v)) throw InvalidArgument("l1_normalize_features: negative feature in row " +
                                                          std::to_string(i));
      sum += v;
    }
    if (sum == 0.0) continue;
    for (double& v : row) v /= sum;
  }
  return g;
}

enum class OperatorKind {
  renorm_adjacency,  // D~^{-1/2} (A + I) D~^{-1/2}
  sym_laplacian,     // I - D^{-1/2} A D^{-1/2}
};

/// Sparse symmetric propagation matrix with explicit diagonal. Sampled
/// (edge-dropout) copies keep the sparsity pattern and store dropped pairs
/// as zeros.
template <typename T>
struct PropagationOperator {
  std::size_t n = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> targets;
  std::vector<T> values;
  /// Arc index of (j,i) for the arc (i,j); diagonal arcs map to themselves.
  std::vector<std::size_t> mirror;

  std::size_t nnz() const { return values.size(); }

  T value(std::size_t i, std::size_t j) const {
    const auto first = targets.begin() + static_cast<std::ptrdiff_t>(offsets[i]);
    const auto last = targets.begin() + static_cast<std::ptrdiff_t>(offsets[i + 1]);
    auto it = std::lower_bound(first, last, static_cast<std::uint32_t>(j));
    if (it == last || *it != j) return T(0);
    return values[static_cast<std::size_t>(it - targets.begin())];
  }

  Matrix<T> to_dense() const {
    Matrix<T> m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t a = offsets[i]; a < offsets[i + 1]; ++a) m(i, targets[a]) = values[a];
    return m;
  }
};

template <typename T>
PropagationOperator<T> build_operator(const GraphBundle& g, OperatorKind kind = OperatorKind::renorm_adjacency) {
  const std::size_t n = g.n_nodes;
  PropagationOperator<T> op;
  op.n = n;
  op.offsets.assign(1, 0);
  op.offsets.reserve(n + 1);
  op.targets.reserve(g.n_arcs() + n);
  for (std::size_t i = 0; i < n; ++i) {
    bool diag_done = false;
    for (auto j : g.neighbors(i)) {
      if (!diag_done && j > i) {
        op.targets.push_back(static_cast<std::uint32_t>(i));
        diag_done = true;
      }
      op.targets.push_back(j);
    }
    if (!diag_done) op.targets.push_back(static_cast<std::uint32_t>(i));
    op.offsets.push_back(op.targets.size());
  }

  std::vector<double> deg(n);
  for (std::size_t i = 0; i < n; ++i) deg[i] = static_cast<double>(g.csr_offsets[i + 1] - g.csr_offsets[i]);

  op.values.resize(op.targets.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = op.offsets[i]; a < op.offsets[i + 1]; ++a) {
      const std::size_t j = op.targets[a];
      double v = 0.0;
      if (kind == OperatorKind::renorm_adjacency) {
        v = 1.0 / std::sqrt((deg[i] + 1.0) * (deg[j] + 1.0));
      } else if (i == j) {
        v = deg[i] > 0.0 ? 1.0 : 0.0;
      } else {
        v = -1.0 / std::sqrt(deg[i] * deg[j]);
      }
      op.values[a] = static_cast<T>(v);
    }
  }

  op.mirror.resize(op.targets.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = op.offsets[i]; a < op.offsets[i + 1]; ++a) {
      const std::size_t j = op.targets[a];
      const auto first = op.targets.begin() + static_cast<std::ptrdiff_t>(op.offsets[j]);
      const auto last = op.targets.begin() + static_cast<std::ptrdiff_t>(op.offsets[j + 1]);
      op.mirror[a] = static_cast<std::size_t>(std::lower_bound(first, last, static_cast<std::uint32_t>(i)) -
                                              op.targets.begin());
    }
  return op;
}

/// Keeps each undirected pair with probability 1 - rate, rescaling kept
/// entries (and the diagonal) by 1 / (1 - rate). One draw per pair, taken in
/// row-major order over arcs with j > i.
template <typename T>
PropagationOperator<T> sample_edge_dropout(const PropagationOperator<T>& op, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("sample_edge_dropout: rate must be in [0, 1)");
  PropagationOperator<T> out = op;
  if (rate == 0.0) return out;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < op.n; ++i) {
    for (std::size_t a = op.offsets[i]; a < op.offsets[i + 1]; ++a) {
      const std::size_t j = op.targets[a];
      if (j == i) {
        out.values[a] = op.values[a] * scale;
      } else if (j > i) {
        const bool keep = rng.uniform() >= rate;
        const T v = keep ? op.values[a] * scale : T(0);
        out.values[a] = v;
        out.values[op.mirror[a]] = v;
      }
    }
  }
  return out;
}

/// op * Z.
template <typename T>
Matrix<T> propagate(const PropagationOperator<T>& op, const Matrix<T>& z) {
  if (z.rows() != op.n)
    detail::throw_shape("propagate", "operator is " + std::to_string(op.n) + " nodes, state has " +
                                         std::to_string(z.rows()) + " rows");
  Matrix<T> out(z.rows(), z.cols());
  const std::size_t c = z.cols();
  for (std::size_t i = 0; i < op.n; ++i) {
    auto orow = out.row(i);
    for (std::size_t a = op.offsets[i]; a < op.offsets[i + 1]; ++a) {
      const T w = op.values[a];
      if (w == T(0)) continue;
      auto zrow = z.row(op.targets[a]);
      for (std::size_t k = 0; k < c; ++k) orow[k] += w * zrow[k];
    }
  }
  debug_check_finite(out, "propagate");
  return out;
}

}  // namespace apgcn
