#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "mpt/error.hpp"
#include "mpt/graph.hpp"
#include "mpt/spectral.hpp"
#include "testing.hpp"

using namespace mpt;

namespace {

Graph random_graph(std::size_t n, double p, Rng& rng) {
  Graph g{n, {}};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.uniform() < p) g.edges.emplace_back(i, j);
  return g;
}

Graph cycle_graph(std::size_t n) {
  Graph g = path_graph(n);
  g.edges.emplace_back(n - 1, 0);
  return g;
}

std::vector<double> sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

void check_values(const SpectralBasis& b, const std::vector<double>& expected, double tol) {
  REQUIRE(b.size() == expected.size());
  const auto want = sorted(expected);
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(b.values(static_cast<Eigen::Index>(i)) - want[i]) < tol);
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mpt_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("graph validation") {
  CHECK_NOTHROW(path_graph(4).validate());
  CHECK_THROWS_AS((Graph{3, {{0, 3}}}.validate()), ValidationError);
  CHECK_THROWS_AS((Graph{3, {{1, 1}}}.validate()), ValidationError);
  CHECK_THROWS_AS((Graph{3, {{0, 1}, {1, 0}}}.validate()), ValidationError);
}

TEST_CASE("directed edges come in opposite pairs") {
  const DirectedEdges d = directed_edges(Graph{3, {{0, 1}, {1, 2}}});
  REQUIRE(d.size() == 4);
  CHECK(d.senders == std::vector<std::size_t>{0, 1, 1, 2});
  CHECK(d.receivers == std::vector<std::size_t>{1, 0, 2, 1});
}

TEST_CASE("grid mesh topology") {
  const Graph g = grid_mesh(4, 3);
  CHECK(g.num_nodes == 12);
  CHECK(g.edges.size() == 3 * 3 + 4 * 2 + 3 * 2);
  CHECK(count_components(g) == 1);
  CHECK_NOTHROW(g.validate());
}

TEST_CASE("Laplacian of the path P3") {
  const Eigen::MatrixXd lap = build_laplacian(path_graph(3));
  Eigen::MatrixXd want(3, 3);
  want << 1, -1, 0, -1, 2, -1, 0, -1, 1;
  CHECK((lap - want).norm() == 0.0);
  check_values(eigendecompose(lap), {0.0, 1.0, 3.0}, 1e-9);
}

TEST_CASE("analytic spectra of cycle, complete and star graphs") {
  for (std::size_t n : {5, 8, 13}) {
    CAPTURE(n);
    std::vector<double> cyc;
    for (std::size_t k = 0; k < n; ++k) cyc.push_back(2.0 - 2.0 * std::cos(2.0 * std::numbers::pi * k / n));
    check_values(eigendecompose(build_laplacian(cycle_graph(n))), cyc, 1e-10);

    Graph complete{n, {}};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) complete.edges.emplace_back(i, j);
    std::vector<double> kn(n, static_cast<double>(n));
    kn[0] = 0.0;
    check_values(eigendecompose(build_laplacian(complete)), kn, 1e-10);

    Graph star{n, {}};
    for (std::size_t i = 1; i < n; ++i) star.edges.emplace_back(0, i);
    std::vector<double> sn(n, 1.0);
    sn[0] = 0.0;
    sn[n - 1] = static_cast<double>(n);
    check_values(eigendecompose(build_laplacian(star)), sn, 1e-10);
  }
}

TEST_CASE("eigenvalues are roots of the characteristic polynomial") {
  Rng rng(11);
  const Graph g = random_graph(7, 0.5, rng);
  const Eigen::MatrixXd lap = build_laplacian(g);
  const SpectralBasis b = eigendecompose(lap);
  // det(L - λI) via an independent LU factorization, relative to ‖L‖^N.
  const double scale = std::pow(std::max(1.0, lap.norm()), 7);
  for (Eigen::Index i = 0; i < b.values.size(); ++i) {
    const Eigen::MatrixXd shifted = lap - b.values(i) * Eigen::MatrixXd::Identity(7, 7);
    CHECK(std::abs(shifted.fullPivLu().determinant()) / scale < 1e-10);
  }
}

TEST_CASE("random graphs: residual, orthonormality, ordering and null space") {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.index(40);
    const Graph g = random_graph(n, 0.05 + 0.5 * rng.uniform(), rng);
    const Eigen::MatrixXd lap = build_laplacian(g);
    const SpectralBasis b = eigendecompose(lap);
    CHECK(reconstruction_residual(lap, b) < 1e-8 * std::max(1.0, lap.norm()));
    CHECK(orthonormality_error(b) < 1e-10);
    CHECK(std::abs(b.values(0)) < 1e-9);
    for (Eigen::Index i = 1; i < b.values.size(); ++i) CHECK(b.values(i) >= b.values(i - 1));
    std::size_t zeros = 0;
    for (Eigen::Index i = 0; i < b.values.size(); ++i) zeros += std::abs(b.values(i)) < 1e-8;
    CHECK(zeros == count_components(g));
  }
}

TEST_CASE("random symmetric matrix is reconstructed") {
  Rng rng(13);
  Eigen::MatrixXd a(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j <= i; ++j) a(i, j) = a(j, i) = rng.normal();
  const SpectralBasis b = eigendecompose(a);
  CHECK(reconstruction_residual(a, b) < 1e-9);
  // Cross-check against Eigen's own solver.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(a);
  for (int i = 0; i < 8; ++i) CHECK(std::abs(b.values(i) - ref.eigenvalues()(i)) < 1e-10);
}

TEST_CASE("eigenvector sign convention") {
  Rng rng(14);
  const SpectralBasis b = eigendecompose(build_laplacian(random_graph(12, 0.4, rng)));
  for (Eigen::Index k = 0; k < b.vectors.cols(); ++k) {
    for (Eigen::Index r = 0; r < b.vectors.rows(); ++r) {
      if (std::abs(b.vectors(r, k)) > 1e-9) {
        CHECK(b.vectors(r, k) > 0.0);
        break;
      }
    }
  }
}

TEST_CASE("GFT round trip and Parseval") {
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + rng.index(30);
    const SpectralBasis b = eigendecompose(build_laplacian(random_graph(n, 0.3, rng)));
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const Eigen::MatrixXd xh = gft(b, x);
    CHECK((igft(b, xh) - x).cwiseAbs().maxCoeff() < 1e-10);
    for (int c = 0; c < 3; ++c) CHECK(std::abs(xh.col(c).norm() - x.col(c).norm()) < 1e-10);
  }
}

TEST_CASE("tensor GFT matches the matrix GFT") {
  Rng rng(16);
  const SpectralBasis b = eigendecompose(build_laplacian(grid_mesh(3, 3)));
  Tensor x = testing::randn({9, 2}, rng);
  Eigen::MatrixXd xm(9, 2);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 2; ++j) xm(i, j) = x[static_cast<std::size_t>(i * 2 + j)];
  const Eigen::MatrixXd want = gft(b, xm);
  const Tensor got = gft(b, x);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 2; ++j) CHECK(std::abs(got[static_cast<std::size_t>(i * 2 + j)] - want(i, j)) < 1e-14);
}

TEST_CASE("spectral cache round trip is bit exact") {
  const auto dir = temp_dir("cache");
  const SpectralCache cache(dir);
  Rng rng(17);
  const SpectralBasis b = eigendecompose(build_laplacian(random_graph(10, 0.5, rng)));
  CHECK_FALSE(cache.contains("g0"));
  CHECK_THROWS_AS(cache.load("g0"), CacheMissError);
  cache.store("g0", b);
  CHECK(cache.contains("g0"));
  const SpectralBasis back = cache.load("g0");
  CHECK(back.vectors == b.vectors);
  CHECK(back.values == b.values);

  {
    std::ofstream os(cache.path_for("bad"), std::ios::binary);
    os << "{not json\n";
  }
  CHECK_THROWS_AS(cache.load("bad"), ParseError);
  std::filesystem::remove_all(dir);
}
