#include "mpt/graph.hpp"

#include <numeric>
#include <set>
#include <string>

#include "mpt/error.hpp"

namespace mpt {

void Graph::validate() const {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& [i, j] : edges) {
    if (i >= num_nodes || j >= num_nodes) {
      throw ValidationError("edge (" + std::to_string(i) + "," + std::to_string(j) + ") out of range for " +
                            std::to_string(num_nodes) + " nodes");
    }
    if (i == j) throw ValidationError("self-loop at node " + std::to_string(i));
    if (!seen.insert({std::min(i, j), std::max(i, j)}).second) {
      throw ValidationError("duplicate edge (" + std::to_string(i) + "," + std::to_string(j) + ")");
    }
  }
}

DirectedEdges directed_edges(const Graph& g) {
  DirectedEdges d;
  d.senders.reserve(2 * g.edges.size());
  d.receivers.reserve(2 * g.edges.size());
  for (const auto& [i, j] : g.edges) {
    d.senders.push_back(i);
    d.receivers.push_back(j);
    d.senders.push_back(j);
    d.receivers.push_back(i);
  }
  return d;
}

std::size_t count_components(const Graph& g) {
  std::vector<std::size_t> parent(g.num_nodes);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::size_t components = g.num_nodes;
  for (const auto& [i, j] : g.edges) {
    const auto a = find(i), b = find(j);
    if (a != b) {
      parent[a] = b;
      --components;
    }
  }
  return components;
}

Graph path_graph(std::size_t n) {
  Graph g;
  g.num_nodes = n;
  for (std::size_t i = 0; i + 1 < n; ++i) g.edges.emplace_back(i, i + 1);
  return g;
}

Graph grid_mesh(std::size_t nx, std::size_t ny) {
  Graph g;
  g.num_nodes = nx * ny;
  auto id = [nx](std::size_t x, std::size_t y) { return y * nx + x; };
  for (std::size_t y = 0; y < ny; ++y) {
    for (std::size_t x = 0; x < nx; ++x) {
      if (x + 1 < nx) g.edges.emplace_back(id(x, y), id(x + 1, y));
      if (y + 1 < ny) g.edges.emplace_back(id(x, y), id(x, y + 1));
      if (x + 1 < nx && y + 1 < ny) g.edges.emplace_back(id(x, y), id(x + 1, y + 1));
    }
  }
  return g;
}

}  // namespace mpt
