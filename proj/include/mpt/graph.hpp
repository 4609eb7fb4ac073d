#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace mpt {

/// Static undirected topology. Per-step node/edge fields live with the
/// trajectory that owns the graph.
struct Graph {
  std::size_t num_nodes = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;

  /// Throws ValidationError on out-of-range indices, self-loops or
  /// duplicate undirected edges.
  void validate() const;
};

/// Each undirected edge stored in both directions: edge 2e is (i -> j),
/// edge 2e+1 is (j -> i) for edges[e] = (i, j).
struct DirectedEdges {
  std::vector<std::size_t> senders;
  std::vector<std::size_t> receivers;
  std::size_t size() const { return senders.size(); }
};

DirectedEdges directed_edges(const Graph& g);

std::size_t count_components(const Graph& g);

Graph path_graph(std::size_t n);

/// nx*ny grid triangulated with one diagonal per cell; node id = y*nx + x.
Graph grid_mesh(std::size_t nx, std::size_t ny);

}  // namespace mpt
