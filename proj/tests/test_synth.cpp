#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "mpt/error.hpp"
#include "mpt/simulator.hpp"
#include "mpt/spectral.hpp"
#include "mpt/synth.hpp"

using namespace mpt;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mpt_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

Eigen::MatrixXd grid_positions(std::size_t nx, std::size_t ny) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(nx * ny), 2);
  for (std::size_t y = 0; y < ny; ++y)
    for (std::size_t x = 0; x < nx; ++x) {
      m(static_cast<Eigen::Index>(y * nx + x), 0) = 0.1 * static_cast<double>(x);
      m(static_cast<Eigen::Index>(y * nx + x), 1) = 0.1 * static_cast<double>(y);
    }
  return m;
}

// Classical RK4 on du/dt = -κ L u, independent of the eigendecomposition.
Eigen::MatrixXd rk4_heat(const Eigen::MatrixXd& lap, Eigen::MatrixXd u, double kappa, double time, int steps) {
  const double h = time / steps;
  auto f = [&](const Eigen::MatrixXd& v) -> Eigen::MatrixXd { return -kappa * lap * v; };
  for (int s = 0; s < steps; ++s) {
    const Eigen::MatrixXd k1 = f(u), k2 = f(u + 0.5 * h * k1), k3 = f(u + 0.5 * h * k2), k4 = f(u + h * k3);
    u += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return u;
}

}  // namespace

TEST_CASE("spring chain at its stretched equilibrium does not move") {
  SpringChainSpec spec;
  spec.num_nodes = 8;
  spec.num_steps = 20;
  Eigen::MatrixXd pos = Eigen::MatrixXd::Zero(8, 2);
  for (int i = 0; i < 8; ++i) pos(i, 0) = 1.3 * spec.rest_length * i;
  const Trajectory t = spring_chain_from(spec, pos);
  for (const auto& s : t.states) CHECK((s - pos).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("spring chain conserves energy and pins its endpoints") {
  SpringChainSpec spec;
  spec.num_steps = 200;
  const Trajectory t = gen_spring_chain(spec, 3);
  CHECK(t.metadata.at("energy_drift").get<double>() < 0.01);
  CHECK(t.kind == SystemKind::kLagrangian);
  const auto last = static_cast<Eigen::Index>(spec.num_nodes - 1);
  for (const auto& s : t.states) {
    CHECK(s.row(0) == t.states[0].row(0));
    CHECK(s.row(last) == t.states[0].row(last));
  }
  // Interior nodes do move.
  CHECK((t.states.back() - t.states.front()).norm() > 1e-3);
}

TEST_CASE("unstable spring parameters are rejected") {
  SpringChainSpec spec;
  spec.stiffness = 5e4;
  spec.substeps = 1;
  CHECK_THROWS_AS(gen_spring_chain(spec, 1), GeneratorError);
  spec = SpringChainSpec{};
  spec.num_nodes = 2;
  CHECK_THROWS_AS(gen_spring_chain(spec, 1), GeneratorError);
}

TEST_CASE("heat: a constant field stays constant") {
  const Graph g = grid_mesh(4, 3);
  const Eigen::MatrixXd u0 = Eigen::MatrixXd::Constant(12, 1, 0.7);
  const Trajectory t = heat_diffusion_from(g, grid_positions(4, 3), u0, 0.5, 0.05, 10);
  for (const auto& s : t.states) CHECK((s.array() - 0.7).abs().maxCoeff() < 1e-12);
}

TEST_CASE("heat: a single eigenvector decays exponentially") {
  const Graph g = grid_mesh(5, 4);
  const SpectralBasis b = eigendecompose(build_laplacian(g));
  const double kappa = 0.3, dt = 0.04;
  for (Eigen::Index k : {1, 7, 19}) {
    const Eigen::MatrixXd u0 = b.vectors.col(k);
    const Trajectory t = heat_diffusion_from(g, grid_positions(5, 4), u0, kappa, dt, 12);
    for (std::size_t s = 0; s < t.num_steps(); ++s) {
      const Eigen::MatrixXd want = std::exp(-kappa * b.values(k) * dt * static_cast<double>(s)) * u0;
      CHECK((t.states[s] - want).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("heat: closed form agrees with a fine time integrator") {
  HeatSpec spec;
  spec.nx = 6;
  spec.ny = 5;
  spec.num_steps = 10;
  const Trajectory t = gen_heat_diffusion(spec, 9);
  const Eigen::MatrixXd lap = build_laplacian(t.graph);
  for (std::size_t s : {1, 5, 9}) {
    const double time = spec.dt * static_cast<double>(s);
    const Eigen::MatrixXd ref = rk4_heat(lap, t.states[0], spec.kappa, time, 100 * static_cast<int>(s));
    CHECK((t.states[s] - ref).norm() / ref.norm() < 1e-6);
  }
}

TEST_CASE("noise has the requested scale and skips fixed nodes") {
  Rng rng(21);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(50000, 2);
  std::vector<int> types(50000, kNormalNode);
  types[0] = kFixedNode;
  const Eigen::MatrixXd noisy = inject_noise(zero, 0.3, types, rng);
  CHECK(noisy.row(0).isZero());
  const double mean = noisy.mean();
  const double sd = std::sqrt((noisy.array() - mean).square().sum() / static_cast<double>(noisy.size() - 2));
  CHECK(std::abs(sd - 0.3) < 0.05 * 0.3);
  CHECK(std::abs(mean) < 0.01);
  CHECK(inject_noise(noisy, 0.0, types, rng) == noisy);
}

TEST_CASE("standardizer fit, round trip and serialization") {
  Rng rng(22);
  Eigen::MatrixXd x(200, 3);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    x(i, 0) = 5.0 + 2.0 * rng.normal();
    x(i, 1) = -1.0 + 0.01 * rng.normal();
    x(i, 2) = 4.0;
  }
  const Standardizer s = Standardizer::fit(x);
  const Eigen::MatrixXd z = s.transform(x);
  for (Eigen::Index j = 0; j < 2; ++j) {
    CHECK(std::abs(z.col(j).mean()) < 1e-12);
    CHECK(std::abs(std::sqrt(z.col(j).array().square().mean()) - 1.0) < 1e-12);
  }
  CHECK(s.stddev()[2] == Standardizer::kStdFloor);
  CHECK((s.inverse(z) - x).cwiseAbs().maxCoeff() < 1e-10);
  const Standardizer back = Standardizer::from_json(s.to_json());
  CHECK(back.mean() == s.mean());
  CHECK(back.stddev() == s.stddev());
  CHECK_THROWS_AS(s.transform(Eigen::MatrixXd::Zero(2, 2)), DimensionError);
}

TEST_CASE("trajectory files round trip bit exactly and reject corruption") {
  const auto dir = temp_dir("traj");
  SpringChainSpec spec;
  spec.num_steps = 12;
  Trajectory t = gen_spring_chain(spec, 4);
  t.id = "chain";
  save_trajectory(t, dir / "a.traj");
  const Trajectory back = load_trajectory(dir / "a.traj");
  CHECK(back.id == "chain");
  CHECK(back.kind == t.kind);
  CHECK(back.dt == t.dt);
  CHECK(back.graph.edges == t.graph.edges);
  CHECK(back.node_type == t.node_type);
  CHECK(back.mesh_pos == t.mesh_pos);
  REQUIRE(back.num_steps() == t.num_steps());
  for (std::size_t s = 0; s < t.num_steps(); ++s) CHECK(back.states[s] == t.states[s]);

  const auto size = std::filesystem::file_size(dir / "a.traj");
  std::filesystem::copy_file(dir / "a.traj", dir / "short.traj");
  std::filesystem::resize_file(dir / "short.traj", size - 8);
  CHECK_THROWS_AS(load_trajectory(dir / "short.traj"), ParseError);
  {
    std::ofstream os(dir / "long.traj", std::ios::binary | std::ios::app);
    std::ifstream is(dir / "a.traj", std::ios::binary);
    os << is.rdbuf() << "x";
  }
  CHECK_THROWS_AS(load_trajectory(dir / "long.traj"), ParseError);
  {
    std::ofstream os(dir / "bad.traj", std::ios::binary);
    os << "{\"format\":\"other\"}\n";
  }
  CHECK_THROWS_AS(load_trajectory(dir / "bad.traj"), ParseError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("generators are deterministic per seed") {
  HeatSpec heat;
  heat.num_steps = 5;
  const Trajectory a = gen_heat_diffusion(heat, 7), b = gen_heat_diffusion(heat, 7), c = gen_heat_diffusion(heat, 8);
  CHECK(a.states.back() == b.states.back());
  CHECK(a.states.back() != c.states.back());
  SpringChainSpec spring;
  spring.num_steps = 5;
  CHECK(gen_spring_chain(spring, 2).states.back() == gen_spring_chain(spring, 2).states.back());
}

TEST_CASE("oracle step reproduces the next state") {
  SpringChainSpec spec;
  spec.num_steps = 30;
  const Trajectory lag = gen_spring_chain(spec, 5);
  HeatSpec heat;
  heat.num_steps = 30;
  const Trajectory eul = gen_heat_diffusion(heat, 5);
  const OraclePredictor oracle;
  for (const Trajectory* t : {&lag, &eul}) {
    const DirectedEdges edges = directed_edges(t->graph);
    for (std::size_t s = 1; s + 1 < t->num_steps(); ++s) {
      const Eigen::MatrixXd next = step(*t, edges, oracle, s, t->states[s - 1], t->states[s]);
      CHECK((next - t->states[s + 1]).cwiseAbs().maxCoeff() < 1e-12);
    }
    const auto pred = rollout(*t, oracle, 1, t->num_steps() - 2);
    CHECK((pred.back() - t->states.back()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("fixed nodes take the ground truth during integration") {
  SpringChainSpec spec;
  spec.num_steps = 10;
  const Trajectory t = gen_spring_chain(spec, 6);
  const Eigen::MatrixXd rate = Eigen::MatrixXd::Constant(t.states[1].rows(), t.states[1].cols(), 100.0);
  const Eigen::MatrixXd next = integrate(t, t.states[0], t.states[1], rate, t.states[2]);
  CHECK(next.row(0) == t.states[2].row(0));
  CHECK(next.row(1) != t.states[2].row(1));
}

TEST_CASE("untrained model rolls out a 50-node mesh for 100 steps") {
  HeatSpec heat;
  heat.nx = 10;
  heat.ny = 5;
  heat.num_steps = 100;
  Trajectory t = gen_heat_diffusion(heat, 11);
  const FeatureLayout layout = feature_layout(t);
  ModelConfig cfg;
  cfg.node_inputs = layout.node_inputs;
  cfg.edge_inputs = layout.edge_inputs;
  cfg.outputs = layout.outputs;
  cfg.latent = 16;
  cfg.hidden = 16;
  cfg.mp_steps = 3;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  const MessagePassingTransformer model(cfg, 3);
  const Normalizers norm = Normalizers::fit({t});
  const ModelPredictor predictor(model, norm);
  const auto pred = rollout(t, predictor, 1, 98);
  CHECK(pred.size() == 98);
  for (const auto& p : pred) {
    CHECK(p.rows() == 50);
    CHECK(p.allFinite());
  }
  CHECK_THROWS_AS(rollout(t, predictor, 1, 99), ContractError);
}
