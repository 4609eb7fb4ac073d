#include "mpt/simulator.hpp"

#include "mpt/error.hpp"

namespace mpt {

FeatureLayout feature_layout(const Trajectory& traj) {
  const auto dim = traj.spatial_dim;
  const auto w = traj.field_width();
  if (traj.kind == SystemKind::kLagrangian) return {kNumNodeTypes + dim, 2 * (dim + 1), dim};
  return {kNumNodeTypes + w, dim + 1, w};
}

Eigen::MatrixXd raw_node_features(const Trajectory& traj, const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur) {
  const auto n = cur.rows();
  const auto w = cur.cols();
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(kNumNodeTypes) + w);
  for (Eigen::Index i = 0; i < n; ++i) f(i, traj.node_type[static_cast<std::size_t>(i)]) = 1.0;
  if (traj.kind == SystemKind::kLagrangian) {
    f.rightCols(w) = (cur - prev) / traj.dt;
  } else {
    f.rightCols(w) = cur;
  }
  return f;
}

Eigen::MatrixXd raw_edge_features(const Trajectory& traj, const DirectedEdges& edges, const Eigen::MatrixXd& cur) {
  const auto dim = static_cast<Eigen::Index>(traj.spatial_dim);
  const bool lagrangian = traj.kind == SystemKind::kLagrangian;
  Eigen::MatrixXd f(static_cast<Eigen::Index>(edges.size()), lagrangian ? 2 * (dim + 1) : dim + 1);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto row = static_cast<Eigen::Index>(e);
    const auto s = static_cast<Eigen::Index>(edges.senders[e]);
    const auto r = static_cast<Eigen::Index>(edges.receivers[e]);
    const Eigen::RowVectorXd mesh_rel = traj.mesh_pos.row(s) - traj.mesh_pos.row(r);
    f.row(row).head(dim) = mesh_rel;
    f(row, dim) = mesh_rel.norm();
    if (lagrangian) {
      const Eigen::RowVectorXd world_rel = cur.row(s) - cur.row(r);
      f.row(row).segment(dim + 1, dim) = world_rel;
      f(row, 2 * dim + 1) = world_rel.norm();
    }
  }
  return f;
}

Eigen::MatrixXd raw_target(const Trajectory& traj, const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur,
                           const Eigen::MatrixXd& next) {
  if (traj.kind == SystemKind::kLagrangian) return (next - 2.0 * cur + prev) / (traj.dt * traj.dt);
  return (next - cur) / traj.dt;
}

Eigen::MatrixXd integrate(const Trajectory& traj, const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur,
                          const Eigen::MatrixXd& rate, const Eigen::MatrixXd& truth_next) {
  if (rate.rows() != cur.rows() || rate.cols() != cur.cols()) {
    throw DimensionError("integrate: rate shape does not match the state");
  }
  Eigen::MatrixXd next;
  if (traj.kind == SystemKind::kLagrangian) {
    const Eigen::MatrixXd vel = (cur - prev) / traj.dt + rate * traj.dt;
    next = cur + vel * traj.dt;
  } else {
    next = cur + rate * traj.dt;
  }
  for (std::size_t i = 0; i < traj.node_type.size(); ++i) {
    if (traj.node_type[i] != kNormalNode) next.row(static_cast<Eigen::Index>(i)) = truth_next.row(static_cast<Eigen::Index>(i));
  }
  return next;
}

Normalizers Normalizers::fit(const std::vector<Trajectory>& train) {
  if (train.empty()) throw ValidationError("cannot fit normalizers without training trajectories");
  std::vector<Eigen::MatrixXd> nodes, edge_rows, targets;
  Eigen::Index n_rows = 0, e_rows = 0;
  for (const auto& traj : train) {
    const DirectedEdges edges = directed_edges(traj.graph);
    for (std::size_t t = 1; t + 1 < traj.num_steps(); ++t) {
      nodes.push_back(raw_node_features(traj, traj.states[t - 1], traj.states[t]));
      edge_rows.push_back(raw_edge_features(traj, edges, traj.states[t]));
      targets.push_back(raw_target(traj, traj.states[t - 1], traj.states[t], traj.states[t + 1]));
      n_rows += nodes.back().rows();
      e_rows += edge_rows.back().rows();
    }
  }
  auto stack = [](const std::vector<Eigen::MatrixXd>& parts, Eigen::Index rows) {
    Eigen::MatrixXd m(rows, parts.front().cols());
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      m.middleRows(r, p.rows()) = p;
      r += p.rows();
    }
    return m;
  };
  Normalizers norm;
  norm.node = Standardizer::fit(stack(nodes, n_rows));
  norm.edge = Standardizer::fit(stack(edge_rows, e_rows));
  norm.target = Standardizer::fit(stack(targets, n_rows));
  return norm;
}

nlohmann::json Normalizers::to_json() const {
  return {{"node", node.to_json()}, {"edge", edge.to_json()}, {"target", target.to_json()}};
}

Normalizers Normalizers::from_json(const nlohmann::json& j) {
  return {Standardizer::from_json(j.at("node")), Standardizer::from_json(j.at("edge")),
          Standardizer::from_json(j.at("target"))};
}

Tensor to_tensor(const Eigen::MatrixXd& m) {
  std::vector<double> v(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v[k++] = m(i, j);
  return Tensor::from({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v));
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("to_matrix needs a rank-2 tensor, got " + shape_str(t.shape()));
  const auto rows = t.dim(0), cols = t.dim(1);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t[i * cols + j];
  return m;
}

Sample make_sample(const Trajectory& traj, const DirectedEdges& edges, std::size_t t, const Normalizers& norm,
                   double noise_scale, Rng* rng) {
  if (t < 1 || t + 1 >= traj.num_steps()) {
    throw ContractError("sample index " + std::to_string(t) + " outside [1, " + std::to_string(traj.num_steps() - 2) + "]");
  }
  const Eigen::MatrixXd& prev = traj.states[t - 1];
  Eigen::MatrixXd cur = traj.states[t];
  if (noise_scale > 0.0) {
    if (rng == nullptr) throw ContractError("noise injection needs an rng");
    cur = inject_noise(cur, noise_scale, traj.node_type, *rng);
  }
  Sample s;
  s.input.num_nodes = traj.num_nodes();
  s.input.edges = &edges;
  s.input.node_features = to_tensor(norm.node.transform(raw_node_features(traj, prev, cur)));
  s.input.edge_features = to_tensor(norm.edge.transform(raw_edge_features(traj, edges, cur)));
  s.target = to_tensor(norm.target.transform(raw_target(traj, prev, cur, traj.states[t + 1])));
  return s;
}

Eigen::MatrixXd ModelPredictor::predict(const Trajectory& traj, const DirectedEdges& edges, std::size_t,
                                        const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur) const {
  NoGradGuard no_grad;
  GraphInput in;
  in.num_nodes = traj.num_nodes();
  in.edges = &edges;
  in.node_features = to_tensor(norm_.node.transform(raw_node_features(traj, prev, cur)));
  in.edge_features = to_tensor(norm_.edge.transform(raw_edge_features(traj, edges, cur)));
  const Tensor out = model_.forward(in, ForwardContext{});
  return norm_.target.inverse(to_matrix(out));
}

Eigen::MatrixXd OraclePredictor::predict(const Trajectory& traj, const DirectedEdges&, std::size_t t,
                                         const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur) const {
  return raw_target(traj, prev, cur, traj.states.at(t + 1));
}

Eigen::MatrixXd step(const Trajectory& traj, const DirectedEdges& edges, const Predictor& predictor, std::size_t t,
                     const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur) {
  if (t + 1 >= traj.num_steps()) throw ContractError("step past the end of the trajectory");
  const Eigen::MatrixXd rate = predictor.predict(traj, edges, t, prev, cur);
  return integrate(traj, prev, cur, rate, traj.states[t + 1]);
}

std::vector<Eigen::MatrixXd> rollout(const Trajectory& traj, const Predictor& predictor, std::size_t t0,
                                     std::size_t steps) {
  if (steps < 1) throw ContractError("rollout needs at least one step");
  if (t0 < 1 || t0 + steps >= traj.num_steps()) {
    throw ContractError("rollout of " + std::to_string(steps) + " steps from t=" + std::to_string(t0) +
                        " exceeds trajectory length " + std::to_string(traj.num_steps()));
  }
  const DirectedEdges edges = directed_edges(traj.graph);
  std::vector<Eigen::MatrixXd> out;
  out.reserve(steps);
  Eigen::MatrixXd prev = traj.states[t0 - 1];
  Eigen::MatrixXd cur = traj.states[t0];
  for (std::size_t i = 0; i < steps; ++i) {
    Eigen::MatrixXd next = step(traj, edges, predictor, t0 + i, prev, cur);
    if (!next.allFinite()) {
      throw DivergenceError("rollout of '" + traj.id + "' produced non-finite state at step " + std::to_string(i + 1));
    }
    prev = std::move(cur);
    cur = next;
    out.push_back(std::move(next));
  }
  return out;
}

}  // namespace mpt
