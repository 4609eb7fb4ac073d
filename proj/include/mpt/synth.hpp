#pragma once

// Synthetic trajectories with exact or high-accuracy reference solutions:
// a mass-spring chain (Lagrangian) and graph heat diffusion (Eulerian).

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpt/graph.hpp"
#include "mpt/rng.hpp"

namespace mpt {

enum class SystemKind { kLagrangian, kEulerian };

std::string to_string(SystemKind k);
SystemKind system_kind_from_string(const std::string& s);

enum NodeType : int { kNormalNode = 0, kFixedNode = 1 };
inline constexpr std::size_t kNumNodeTypes = 2;

struct Trajectory {
  std::string id;
  SystemKind kind = SystemKind::kEulerian;
  Graph graph;
  std::size_t spatial_dim = 2;
  std::vector<int> node_type;
  Eigen::MatrixXd mesh_pos;  // N x spatial_dim rest/mesh coordinates
  /// Dynamic field per step: world positions (Lagrangian, N x dim) or the
  /// scalar/vector field (Eulerian, N x width).
  std::vector<Eigen::MatrixXd> states;
  double dt = 0.0;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t num_nodes() const { return graph.num_nodes; }
  std::size_t num_steps() const { return states.size(); }
  std::size_t field_width() const { return states.empty() ? 0 : static_cast<std::size_t>(states[0].cols()); }
  /// Throws ValidationError on inconsistent shapes, non-finite values or T < 3.
  void validate() const;
};

struct SpringChainSpec {
  std::size_t num_nodes = 20;
  std::size_t dim = 2;
  double stiffness = 50.0;
  double mass = 1.0;
  double rest_length = 0.1;
  double dt = 0.02;
  std::size_t num_steps = 50;
  /// Peak amplitude of the initial displacement, in rest lengths.
  double amplitude = 0.5;
  std::size_t substeps = 10;
};

/// Chain with fixed endpoints integrated by RK4. Throws GeneratorError if
/// total energy drifts by more than 1%.
Trajectory gen_spring_chain(const SpringChainSpec& spec, std::uint64_t seed);
/// Same integrator from an explicit initial state (zero initial velocity).
Trajectory spring_chain_from(const SpringChainSpec& spec, const Eigen::MatrixXd& initial_pos);

double spring_chain_energy(const Trajectory& traj, const Eigen::MatrixXd& pos, const Eigen::MatrixXd& vel,
                           double stiffness, double mass, double rest_length);

struct HeatSpec {
  std::size_t nx = 10;
  std::size_t ny = 10;
  double spacing = 0.1;
  double kappa = 0.5;
  double dt = 0.05;
  std::size_t num_steps = 50;
  std::size_t bumps = 3;
};

/// du/dt = −κ L u solved in closed form on the triangulated grid,
/// u(t) = U exp(−κΛt) Uᵀ u(0).
Trajectory gen_heat_diffusion(const HeatSpec& spec, std::uint64_t seed);
/// Closed-form solve from an explicit initial field on any connected graph.
Trajectory heat_diffusion_from(const Graph& graph, const Eigen::MatrixXd& mesh_pos, const Eigen::MatrixXd& u0,
                               double kappa, double dt, std::size_t num_steps);

/// Adds zero-mean Gaussian noise of std `scale` to rows whose node type is
/// normal; fixed nodes are untouched.
Eigen::MatrixXd inject_noise(const Eigen::MatrixXd& field, double scale, const std::vector<int>& node_type, Rng& rng);

/// Per-channel standardization fitted on training rows.
class Standardizer {
 public:
  static constexpr double kStdFloor = 1e-8;

  Standardizer() = default;
  Standardizer(std::vector<double> mean, std::vector<double> stddev);
  /// Population mean/std of each column.
  static Standardizer fit(const Eigen::MatrixXd& rows);

  std::size_t width() const { return mean_.size(); }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }
  Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& z) const;

  nlohmann::json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);

 private:
  std::vector<double> mean_;
  std::vector<double> std_;
};

/// `<path>`: one-line JSON header, then mesh_pos and the stacked states as
/// row-major little-endian f64.
void save_trajectory(const Trajectory& traj, const std::filesystem::path& path);
Trajectory load_trajectory(const std::filesystem::path& path);

}  // namespace mpt
