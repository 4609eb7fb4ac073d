#pragma once

// Glue between trajectories and the network: feature assembly,
// standardization, the UPDATE integrators and autoregressive rollout.

#include <Eigen/Core>
#include <vector>

#include <json.hpp>

#include "mpt/model.hpp"
#include "mpt/synth.hpp"

namespace mpt {

struct FeatureLayout {
  std::size_t node_inputs;
  std::size_t edge_inputs;
  std::size_t outputs;
};

/// Lagrangian: node = [type one-hot, velocity], edge = [mesh rel, |mesh rel|,
/// world rel, |world rel|], output = acceleration.
/// Eulerian: node = [type one-hot, field], edge = [mesh rel, |mesh rel|],
/// output = field rate.
FeatureLayout feature_layout(const Trajectory& traj);

Eigen::MatrixXd raw_node_features(const Trajectory& traj, const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur);
Eigen::MatrixXd raw_edge_features(const Trajectory& traj, const DirectedEdges& edges, const Eigen::MatrixXd& cur);
/// Acceleration (x⁺ − 2x + x⁻)/Δt² or rate (w⁺ − w)/Δt.
Eigen::MatrixXd raw_target(const Trajectory& traj, const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur,
                           const Eigen::MatrixXd& next);

/// Semi-implicit Euler (ẋ⁺ = ẋ + ẍΔt, x⁺ = x + ẋ⁺Δt) or forward Euler
/// (w⁺ = w + ẇΔt). Non-normal nodes take their value from `truth_next`.
Eigen::MatrixXd integrate(const Trajectory& traj, const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur,
                          const Eigen::MatrixXd& rate, const Eigen::MatrixXd& truth_next);

struct Normalizers {
  Standardizer node, edge, target;

  /// Fitted on clean samples t = 1..T-2 of every training trajectory.
  static Normalizers fit(const std::vector<Trajectory>& train);
  nlohmann::json to_json() const;
  static Normalizers from_json(const nlohmann::json& j);
};

Tensor to_tensor(const Eigen::MatrixXd& m);
Eigen::MatrixXd to_matrix(const Tensor& t);

struct Sample {
  GraphInput input;
  Tensor target;  // standardized, [N, outputs]
};

/// Training/eval sample for the transition t -> t+1 (1 <= t <= T-2). With
/// noise_scale > 0, normal nodes of state t are perturbed and the target
/// is recomputed so the integrated prediction lands on the clean state t+1.
Sample make_sample(const Trajectory& traj, const DirectedEdges& edges, std::size_t t, const Normalizers& norm,
                   double noise_scale, Rng* rng);

class Predictor {
 public:
  virtual ~Predictor() = default;
  /// Physical-unit rate for the transition from `cur`. `t` indexes the
  /// ground-truth step that `cur` stands in for.
  virtual Eigen::MatrixXd predict(const Trajectory& traj, const DirectedEdges& edges, std::size_t t,
                                  const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur) const = 0;
};

class ModelPredictor : public Predictor {
 public:
  ModelPredictor(const MessagePassingTransformer& model, const Normalizers& norm) : model_(model), norm_(norm) {}
  Eigen::MatrixXd predict(const Trajectory& traj, const DirectedEdges& edges, std::size_t t,
                          const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur) const override;

 private:
  const MessagePassingTransformer& model_;
  const Normalizers& norm_;
};

/// Returns the exact rate that reaches the ground-truth next state.
class OraclePredictor : public Predictor {
 public:
  Eigen::MatrixXd predict(const Trajectory& traj, const DirectedEdges& edges, std::size_t t,
                          const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur) const override;
};

/// One simulator step from ground-truth step t: returns the predicted state t+1.
Eigen::MatrixXd step(const Trajectory& traj, const DirectedEdges& edges, const Predictor& predictor, std::size_t t,
                     const Eigen::MatrixXd& prev, const Eigen::MatrixXd& cur);

/// Autoregressive rollout starting from ground-truth states t0-1 and t0.
/// Returns predicted states t0+1 .. t0+steps. Throws DivergenceError on NaN.
std::vector<Eigen::MatrixXd> rollout(const Trajectory& traj, const Predictor& predictor, std::size_t t0,
                                     std::size_t steps);

}  // namespace mpt
