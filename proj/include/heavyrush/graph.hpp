#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "heavyrush/error.hpp"

namespace heavyrush {

using Edge = std::pair<std::size_t, std::size_t>;

/**
 * @brief Binary areal adjacency structure.
 *
 * Edges are stored once as (i, j) with i < j, sorted lexicographically.
 * Neighbour lists are sorted ascending. Areas are 0-based and contiguous.
 * Immutable after construction.
 */
class SpatialGraph {
 public:
  std::size_t size() const noexcept { return n_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<std::size_t>& degree() const noexcept { return degree_; }
  std::size_t degree(std::size_t i) const { return degree_.at(i); }
  const std::vector<std::size_t>& neighbours(std::size_t i) const { return adjacency_.at(i); }

  bool adjacent(std::size_t i, std::size_t j) const {
    const auto& nb = adjacency_.at(i);
    return std::binary_search(nb.begin(), nb.end(), j);
  }

  friend SpatialGraph build_graph(std::size_t n, std::span<const Edge> edge_list);

 private:
  std::size_t n_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::size_t> degree_;
  std::vector<std::vector<std::size_t>> adjacency_;
};

/// Validates, symmetrises and deduplicates an edge list.
inline SpatialGraph build_graph(std::size_t n, std::span<const Edge> edge_list) {
  require(n > 0, ErrorCode::EmptyGraph, "graph must have at least one area");
  SpatialGraph g;
  g.n_ = n;
  g.edges_.reserve(edge_list.size());
  for (const auto& [a, b] : edge_list) {
    if (a >= n || b >= n) {
      fail(ErrorCode::IndexOutOfRange, "edge (" + std::to_string(a) + "," + std::to_string(b) +
                                           ") outside [0," + std::to_string(n) + ")");
    }
    if (a == b) fail(ErrorCode::SelfLoop, "self-loop at area " + std::to_string(a));
    g.edges_.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(g.edges_.begin(), g.edges_.end());
  g.edges_.erase(std::unique(g.edges_.begin(), g.edges_.end()), g.edges_.end());

  g.degree_.assign(n, 0);
  g.adjacency_.assign(n, {});
  for (const auto& [i, j] : g.edges_) {
    ++g.degree_[i];
    ++g.degree_[j];
    g.adjacency_[i].push_back(j);
    g.adjacency_[j].push_back(i);
  }
  for (auto& nb : g.adjacency_) std::sort(nb.begin(), nb.end());
  return g;
}

inline SpatialGraph build_graph(std::size_t n, std::initializer_list<Edge> edge_list) {
  return build_graph(n, std::span<const Edge>(edge_list.begin(), edge_list.size()));
}

inline SpatialGraph build_graph(std::size_t n, const std::vector<Edge>& edge_list) {
  return build_graph(n, std::span<const Edge>(edge_list));
}

/// Dense symmetric 0/1 weight matrix with zero diagonal.
inline Eigen::MatrixXd dense_weights(const SpatialGraph& g) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g.size()),
                                            static_cast<Eigen::Index>(g.size()));
  for (const auto& [i, j] : g.edges()) {
    w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
    w(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = 1.0;
  }
  return w;
}

/// Ring (cycle) graph on n areas; n = 2 yields a single edge.
inline SpatialGraph ring_graph(std::size_t n) {
  std::vector<Edge> edges;
  if (n >= 2) {
    for (std::size_t i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
    if (n > 2) edges.emplace_back(n - 1, 0);
  }
  return build_graph(n, edges);
}

}  // namespace heavyrush
