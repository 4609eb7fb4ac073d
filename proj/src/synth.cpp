#include "mpt/synth.hpp"

#include <cmath>
#include <numbers>

#include "mpt/binio.hpp"
#include "mpt/error.hpp"
#include "mpt/spectral.hpp"

namespace mpt {

std::string to_string(SystemKind k) { return k == SystemKind::kLagrangian ? "lagrangian" : "eulerian"; }

SystemKind system_kind_from_string(const std::string& s) {
  if (s == "lagrangian") return SystemKind::kLagrangian;
  if (s == "eulerian") return SystemKind::kEulerian;
  throw ParseError("unknown system kind '" + s + "'");
}

void Trajectory::validate() const {
  graph.validate();
  const auto n = static_cast<Eigen::Index>(graph.num_nodes);
  if (states.size() < 3) throw ValidationError("trajectory '" + id + "' has fewer than 3 steps");
  if (node_type.size() != graph.num_nodes) throw ValidationError("trajectory '" + id + "': node_type size mismatch");
  if (mesh_pos.rows() != n || mesh_pos.cols() != static_cast<Eigen::Index>(spatial_dim)) {
    throw ValidationError("trajectory '" + id + "': mesh_pos shape mismatch");
  }
  for (const auto& s : states) {
    if (s.rows() != n || s.cols() != states[0].cols()) throw ValidationError("trajectory '" + id + "': ragged states");
    if (!s.allFinite()) throw ValidationError("trajectory '" + id + "': non-finite state");
  }
  if (kind == SystemKind::kLagrangian && states[0].cols() != static_cast<Eigen::Index>(spatial_dim)) {
    throw ValidationError("trajectory '" + id + "': Lagrangian states must have spatial_dim columns");
  }
  if (!(dt > 0.0)) throw ValidationError("trajectory '" + id + "': dt must be > 0");
}

// ---------------------------------------------------------------------------
// Spring chain

namespace {

Eigen::MatrixXd spring_accel(const Trajectory& traj, const Eigen::MatrixXd& pos, double k, double m, double rest) {
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(pos.rows(), pos.cols());
  for (const auto& [i, j] : traj.graph.edges) {
    const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(j);
    const Eigen::RowVectorXd d = pos.row(a) - pos.row(b);
    const double len = d.norm();
    if (len == 0.0) continue;
    const Eigen::RowVectorXd f = -k * (len - rest) / len * d;
    acc.row(a) += f / m;
    acc.row(b) -= f / m;
  }
  for (std::size_t i = 0; i < traj.node_type.size(); ++i)
    if (traj.node_type[i] == kFixedNode) acc.row(static_cast<Eigen::Index>(i)).setZero();
  return acc;
}

Trajectory chain_skeleton(const SpringChainSpec& spec) {
  if (spec.num_nodes < 3) throw GeneratorError("spring chain needs at least 3 nodes");
  if (spec.dim < 1 || spec.dim > 2) throw GeneratorError("spring chain dimension must be 1 or 2");
  if (spec.num_steps < 3) throw GeneratorError("spring chain needs at least 3 steps");
  Trajectory t;
  t.kind = SystemKind::kLagrangian;
  t.graph = path_graph(spec.num_nodes);
  t.spatial_dim = spec.dim;
  t.node_type.assign(spec.num_nodes, kNormalNode);
  t.node_type.front() = kFixedNode;
  t.node_type.back() = kFixedNode;
  t.mesh_pos = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.num_nodes), static_cast<Eigen::Index>(spec.dim));
  for (std::size_t i = 0; i < spec.num_nodes; ++i) t.mesh_pos(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i) * spec.rest_length;
  t.dt = spec.dt;
  return t;
}

}  // namespace

double spring_chain_energy(const Trajectory& traj, const Eigen::MatrixXd& pos, const Eigen::MatrixXd& vel,
                           double stiffness, double mass, double rest_length) {
  double e = 0.5 * mass * vel.squaredNorm();
  for (const auto& [i, j] : traj.graph.edges) {
    const double stretch = (pos.row(static_cast<Eigen::Index>(i)) - pos.row(static_cast<Eigen::Index>(j))).norm() - rest_length;
    e += 0.5 * stiffness * stretch * stretch;
  }
  return e;
}

Trajectory spring_chain_from(const SpringChainSpec& spec, const Eigen::MatrixXd& initial_pos) {
  Trajectory t = chain_skeleton(spec);
  if (initial_pos.rows() != static_cast<Eigen::Index>(spec.num_nodes) ||
      initial_pos.cols() != static_cast<Eigen::Index>(spec.dim)) {
    throw GeneratorError("spring chain initial positions have the wrong shape");
  }
  const double k = spec.stiffness, m = spec.mass, rest = spec.rest_length;
  const double h = spec.dt / static_cast<double>(spec.substeps);
  Eigen::MatrixXd x = initial_pos;
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  const double e0 = spring_chain_energy(t, x, v, k, m, rest);
  double max_drift = 0.0;
  t.states.push_back(x);
  for (std::size_t step = 1; step < spec.num_steps; ++step) {
    for (std::size_t s = 0; s < spec.substeps; ++s) {
      const Eigen::MatrixXd k1x = v, k1v = spring_accel(t, x, k, m, rest);
      const Eigen::MatrixXd k2x = v + 0.5 * h * k1v, k2v = spring_accel(t, x + 0.5 * h * k1x, k, m, rest);
      const Eigen::MatrixXd k3x = v + 0.5 * h * k2v, k3v = spring_accel(t, x + 0.5 * h * k2x, k, m, rest);
      const Eigen::MatrixXd k4x = v + h * k3v, k4v = spring_accel(t, x + h * k3x, k, m, rest);
      x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
      v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    }
    const double e = spring_chain_energy(t, x, v, k, m, rest);
    max_drift = std::max(max_drift, std::abs(e - e0));
    t.states.push_back(x);
  }
  const double rel_drift = e0 > 0.0 ? max_drift / e0 : max_drift;
  if (rel_drift > 0.01) {
    throw GeneratorError("spring chain unstable: energy drift " + std::to_string(100.0 * rel_drift) +
                         "% exceeds 1%; reduce dt or stiffness");
  }
  t.metadata = {{"generator", "spring_chain"},
                {"stiffness", k},
                {"mass", m},
                {"rest_length", rest},
                {"substeps", spec.substeps},
                {"energy", e0},
                {"energy_drift", rel_drift}};
  t.validate();
  return t;
}

Trajectory gen_spring_chain(const SpringChainSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  const auto n = static_cast<Eigen::Index>(spec.num_nodes);
  // Endpoints pinned 20% beyond rest length so the chain is under tension.
  constexpr double kStretch = 1.2;
  Eigen::MatrixXd pos = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(spec.dim));
  std::vector<double> modes(3);
  for (std::size_t m = 0; m < modes.size(); ++m) modes[m] = rng.uniform(-1.0, 1.0) / static_cast<double>(m + 1);
  const Eigen::Index axis = spec.dim == 2 ? 1 : 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    pos(i, 0) = static_cast<double>(i) * spec.rest_length * kStretch;
    if (i == 0 || i == n - 1) continue;
    double disp = 0.0;
    for (std::size_t m = 0; m < modes.size(); ++m) {
      disp += modes[m] * std::sin(static_cast<double>(m + 1) * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n - 1));
    }
    pos(i, axis) += spec.amplitude * spec.rest_length * disp;
  }
  Trajectory t = spring_chain_from(spec, pos);
  t.metadata["seed"] = seed;
  t.metadata["stretch"] = kStretch;
  return t;
}

// ---------------------------------------------------------------------------
// Heat diffusion

Trajectory heat_diffusion_from(const Graph& graph, const Eigen::MatrixXd& mesh_pos, const Eigen::MatrixXd& u0,
                               double kappa, double dt, std::size_t num_steps) {
  graph.validate();
  if (count_components(graph) != 1) throw ValidationError("heat diffusion needs a connected mesh");
  if (u0.rows() != static_cast<Eigen::Index>(graph.num_nodes)) throw ValidationError("initial field row count mismatch");
  const SpectralBasis basis = eigendecompose(build_laplacian(graph));
  const Eigen::MatrixXd coeffs = gft(basis, u0);
  Trajectory t;
  t.kind = SystemKind::kEulerian;
  t.graph = graph;
  t.spatial_dim = static_cast<std::size_t>(mesh_pos.cols());
  t.mesh_pos = mesh_pos;
  t.node_type.assign(graph.num_nodes, kNormalNode);
  t.dt = dt;
  for (std::size_t s = 0; s < num_steps; ++s) {
    const double time = static_cast<double>(s) * dt;
    const Eigen::VectorXd decay = (-kappa * time * basis.values.array()).exp();
    t.states.push_back(igft(basis, decay.asDiagonal() * coeffs));
  }
  t.metadata = {{"generator", "heat_diffusion"}, {"kappa", kappa}};
  t.validate();
  return t;
}

Trajectory gen_heat_diffusion(const HeatSpec& spec, std::uint64_t seed) {
  if (spec.nx < 2 || spec.ny < 1) throw GeneratorError("heat mesh needs at least 2x1 nodes");
  Rng rng(seed);
  const Graph g = grid_mesh(spec.nx, spec.ny);
  const auto n = static_cast<Eigen::Index>(g.num_nodes);
  Eigen::MatrixXd mesh(n, 2);
  for (std::size_t y = 0; y < spec.ny; ++y)
    for (std::size_t x = 0; x < spec.nx; ++x) {
      const auto i = static_cast<Eigen::Index>(y * spec.nx + x);
      mesh(i, 0) = static_cast<double>(x) * spec.spacing;
      mesh(i, 1) = static_cast<double>(y) * spec.spacing;
    }
  const double ex = static_cast<double>(spec.nx - 1) * spec.spacing;
  const double ey = static_cast<double>(std::max<std::size_t>(spec.ny, 2) - 1) * spec.spacing;
  Eigen::MatrixXd u0 = Eigen::MatrixXd::Constant(n, 1, rng.uniform(-0.5, 0.5));
  for (std::size_t b = 0; b < spec.bumps; ++b) {
    const double cx = rng.uniform(0.0, ex), cy = rng.uniform(0.0, ey);
    const double sigma = rng.uniform(0.1, 0.3) * std::max(ex, ey);
    const double amp = rng.uniform(-1.0, 1.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r2 = (mesh(i, 0) - cx) * (mesh(i, 0) - cx) + (mesh(i, 1) - cy) * (mesh(i, 1) - cy);
      u0(i, 0) += amp * std::exp(-r2 / (2.0 * sigma * sigma));
    }
  }
  // Small-scale roughness so high-frequency modes carry energy.
  for (Eigen::Index i = 0; i < n; ++i) u0(i, 0) += 0.1 * rng.normal();
  Trajectory t = heat_diffusion_from(g, mesh, u0, spec.kappa, spec.dt, spec.num_steps);
  t.metadata["seed"] = seed;
  t.metadata["nx"] = spec.nx;
  t.metadata["ny"] = spec.ny;
  return t;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd inject_noise(const Eigen::MatrixXd& field, double scale, const std::vector<int>& node_type, Rng& rng) {
  Eigen::MatrixXd out = field;
  if (scale == 0.0) return out;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (static_cast<std::size_t>(i) < node_type.size() && node_type[static_cast<std::size_t>(i)] != kNormalNode) continue;
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) += scale * rng.normal();
  }
  return out;
}

Standardizer::Standardizer(std::vector<double> mean, std::vector<double> stddev)
    : mean_(std::move(mean)), std_(std::move(stddev)) {
  if (mean_.size() != std_.size()) throw ValidationError("standardizer mean/std width mismatch");
  for (auto& s : std_) s = std::max(s, kStdFloor);
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& rows) {
  if (rows.rows() == 0) throw ValidationError("cannot fit a standardizer on zero rows");
  const auto w = static_cast<std::size_t>(rows.cols());
  std::vector<double> mean(w), stddev(w);
  for (std::size_t j = 0; j < w; ++j) {
    const auto col = rows.col(static_cast<Eigen::Index>(j));
    const double m = col.mean();
    mean[j] = m;
    stddev[j] = std::sqrt((col.array() - m).square().mean());
  }
  return {std::move(mean), std::move(stddev)};
}

Eigen::MatrixXd Standardizer::transform(const Eigen::MatrixXd& x) const {
  if (static_cast<std::size_t>(x.cols()) != width()) throw DimensionError("standardizer width mismatch");
  Eigen::MatrixXd z(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const auto u = static_cast<std::size_t>(j);
    z.col(j) = (x.col(j).array() - mean_[u]) / std_[u];
  }
  return z;
}

Eigen::MatrixXd Standardizer::inverse(const Eigen::MatrixXd& z) const {
  if (static_cast<std::size_t>(z.cols()) != width()) throw DimensionError("standardizer width mismatch");
  Eigen::MatrixXd x(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const auto u = static_cast<std::size_t>(j);
    x.col(j) = z.col(j).array() * std_[u] + mean_[u];
  }
  return x;
}

nlohmann::json Standardizer::to_json() const { return {{"mean", mean_}, {"std", std_}}; }

Standardizer Standardizer::from_json(const nlohmann::json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
}

// ---------------------------------------------------------------------------
// Trajectory files

namespace {
constexpr const char* kTrajFormat = "mpt-traj";
constexpr int kTrajVersion = 1;
}  // namespace

void save_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
  traj.validate();
  const auto n = traj.num_nodes(), w = traj.field_width(), steps = traj.num_steps();
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [i, j] : traj.graph.edges) edges.push_back({i, j});
  nlohmann::json header = {
      {"format", kTrajFormat},
      {"version", kTrajVersion},
      {"id", traj.id},
      {"kind", to_string(traj.kind)},
      {"dt", traj.dt},
      {"num_nodes", n},
      {"num_steps", steps},
      {"spatial_dim", traj.spatial_dim},
      {"field_width", w},
      {"edges", edges},
      {"node_type", traj.node_type},
      {"metadata", traj.metadata},
      {"fields",
       {{{"name", "mesh_pos"}, {"shape", {n, traj.spatial_dim}}}, {{"name", "states"}, {"shape", {steps, n, w}}}}}};
  auto os = binio::open_out(path);
  os << header.dump() << '\n';
  std::vector<double> buf;
  auto write_rowmajor = [&](const Eigen::MatrixXd& m) {
    buf.resize(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) buf[k++] = m(i, j);
    binio::write_f64(os, buf);
  };
  write_rowmajor(traj.mesh_pos);
  for (const auto& s : traj.states) write_rowmajor(s);
  if (!os) throw IoError("failed writing " + path.string());
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  auto is = binio::open_in(path);
  const std::string where = path.string();
  Trajectory t;
  try {
    const auto header = nlohmann::json::parse(binio::read_header_line(is, where));
    if (header.at("format").get<std::string>() != kTrajFormat || header.at("version").get<int>() != kTrajVersion) {
      throw ParseError(where + ": not a version-1 trajectory file");
    }
    const auto fields = header.at("fields");
    if (!fields.is_array() || fields.size() != 2 || fields[0].at("name") != "mesh_pos" || fields[1].at("name") != "states") {
      throw ParseError(where + ": header must list exactly the mesh_pos and states fields");
    }
    t.id = header.at("id").get<std::string>();
    t.kind = system_kind_from_string(header.at("kind").get<std::string>());
    t.dt = header.at("dt").get<double>();
    t.spatial_dim = header.at("spatial_dim").get<std::size_t>();
    t.graph.num_nodes = header.at("num_nodes").get<std::size_t>();
    for (const auto& e : header.at("edges")) t.graph.edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
    t.node_type = header.at("node_type").get<std::vector<int>>();
    t.metadata = header.at("metadata");
    const auto steps = header.at("num_steps").get<std::size_t>();
    const auto w = header.at("field_width").get<std::size_t>();
    const auto n = t.graph.num_nodes;
    if (fields[0].at("shape") != nlohmann::json({n, t.spatial_dim}) || fields[1].at("shape") != nlohmann::json({steps, n, w})) {
      throw ParseError(where + ": field shapes disagree with header sizes");
    }
    auto read_matrix = [&](std::size_t rows, std::size_t cols) {
      const auto v = binio::read_f64(is, rows * cols, where);
      Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i * cols + j];
      return m;
    };
    t.mesh_pos = read_matrix(n, t.spatial_dim);
    for (std::size_t s = 0; s < steps; ++s) t.states.push_back(read_matrix(n, w));
    if (is.peek() != std::char_traits<char>::eof()) throw ParseError(where + ": trailing bytes after declared fields");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": bad header: " + e.what());
  }
  try {
    t.validate();
  } catch (const ValidationError& e) {
    throw ParseError(where + ": " + e.what());
  }
  return t;
}

}  // namespace mpt
