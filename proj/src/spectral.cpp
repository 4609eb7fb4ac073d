#include "mpt/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "mpt/binio.hpp"
#include "mpt/error.hpp"
#include "mpt/ops.hpp"

namespace mpt {

namespace {
constexpr int kCacheVersion = 1;
constexpr const char* kCacheFormat = "mpt-gfb";
}  // namespace

SpectralBasis SpectralBasis::make(Eigen::MatrixXd vectors, Eigen::VectorXd values) {
  SpectralBasis b;
  const auto n = static_cast<std::size_t>(vectors.rows());
  std::vector<double> ut(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      ut[i * n + j] = vectors(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
  b.transpose = Tensor::from({n, n}, std::move(ut));
  b.vectors = std::move(vectors);
  b.values = std::move(values);
  return b;
}

Eigen::MatrixXd build_laplacian(const Graph& g) {
  g.validate();
  const auto n = static_cast<Eigen::Index>(g.num_nodes);
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [i, j] : g.edges) {
    const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(j);
    lap(a, b) -= 1.0;
    lap(b, a) -= 1.0;
    lap(a, a) += 1.0;
    lap(b, b) += 1.0;
  }
  return lap;
}

SpectralBasis eigendecompose(const Eigen::MatrixXd& sym, const JacobiOptions& opts) {
  const Eigen::Index n = sym.rows();
  if (sym.cols() != n) {
    throw ValidationError("eigendecompose needs a square matrix, got " + std::to_string(sym.rows()) + "x" +
                          std::to_string(sym.cols()));
  }
  const double fro = sym.norm();
  if ((sym - sym.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, fro)) {
    throw ValidationError("eigendecompose input is not symmetric");
  }

  Eigen::MatrixXd a = sym;
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  const double target = opts.relative_tolerance * fro;
  int sweep = 0;
  while (off_norm() > target) {
    if (sweep++ >= opts.max_sweeps) {
      throw NumericalError("Jacobi eigendecomposition did not converge in " + std::to_string(opts.max_sweeps) +
                           " sweeps (off-diagonal norm " + std::to_string(off_norm()) + ")");
    }
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a(r, p), arq = a(r, q);
          a(r, p) = a(p, r) = c * arp - s * arq;
          a(r, q) = a(q, r) = s * arp + c * arq;
        }
        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (Eigen::Index r = 0; r < n; ++r) {
          const double vrp = v(r, p), vrq = v(r, q);
          v(r, p) = c * vrp - s * vrq;
          v(r, q) = s * vrp + c * vrq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return a(x, x) < a(y, y); });

  Eigen::MatrixXd vectors(n, n);
  Eigen::VectorXd values(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    values(k) = a(src, src);
    vectors.col(k) = v.col(src);
    for (Eigen::Index r = 0; r < n; ++r) {
      if (std::abs(vectors(r, k)) > 1e-9) {
        if (vectors(r, k) < 0.0) vectors.col(k) *= -1.0;
        break;
      }
    }
  }
  return SpectralBasis::make(std::move(vectors), std::move(values));
}

double reconstruction_residual(const Eigen::MatrixXd& sym, const SpectralBasis& basis) {
  return (sym - basis.vectors * basis.values.asDiagonal() * basis.vectors.transpose()).norm();
}

double orthonormality_error(const SpectralBasis& basis) {
  const auto n = basis.vectors.cols();
  return (basis.vectors.transpose() * basis.vectors - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
}

Eigen::MatrixXd gft(const SpectralBasis& basis, const Eigen::MatrixXd& x) {
  if (x.rows() != basis.vectors.rows()) {
    throw DimensionError("gft: field has " + std::to_string(x.rows()) + " rows, basis has " +
                         std::to_string(basis.vectors.rows()));
  }
  return basis.vectors.transpose() * x;
}

Eigen::MatrixXd igft(const SpectralBasis& basis, const Eigen::MatrixXd& xhat) {
  if (xhat.rows() != basis.vectors.rows()) {
    throw DimensionError("igft: spectrum has " + std::to_string(xhat.rows()) + " rows, basis has " +
                         std::to_string(basis.vectors.rows()));
  }
  return basis.vectors * xhat;
}

Tensor gft(const SpectralBasis& basis, const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) != basis.size()) {
    throw DimensionError("gft: field " + shape_str(x.shape()) + " vs basis of size " + std::to_string(basis.size()));
  }
  return matmul(basis.transpose, x);
}

std::filesystem::path SpectralCache::path_for(const std::string& trajectory_id) const {
  return dir_ / (trajectory_id + ".gfb");
}

bool SpectralCache::contains(const std::string& trajectory_id) const {
  return std::filesystem::exists(path_for(trajectory_id));
}

void SpectralCache::store(const std::string& trajectory_id, const SpectralBasis& basis) const {
  const auto n = basis.size();
  nlohmann::json header = {{"format", kCacheFormat},
                           {"version", kCacheVersion},
                           {"num_nodes", n},
                           {"eigenvalues", std::vector<double>(basis.values.data(), basis.values.data() + n)}};
  std::vector<double> rows(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      rows[i * n + j] = basis.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  auto tmp = path_for(trajectory_id);
  tmp += ".tmp";
  {
    auto os = binio::open_out(tmp);
    os << header.dump() << '\n';
    binio::write_f64(os, rows);
    if (!os) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path_for(trajectory_id));
}

SpectralBasis SpectralCache::load(const std::string& trajectory_id) const {
  const auto path = path_for(trajectory_id);
  if (!std::filesystem::exists(path)) {
    throw CacheMissError("no spectral basis cached for trajectory '" + trajectory_id + "' in " + dir_.string() +
                         "; run the preprocess command first");
  }
  auto is = binio::open_in(path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(binio::read_header_line(is, path.string()));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad header: " + e.what());
  }
  if (header.value("format", "") != kCacheFormat || header.value("version", 0) != kCacheVersion) {
    throw ParseError(path.string() + ": unsupported spectral cache format");
  }
  const auto n = header.at("num_nodes").get<std::size_t>();
  const auto evals = header.at("eigenvalues").get<std::vector<double>>();
  if (evals.size() != n) throw ParseError(path.string() + ": eigenvalue count does not match num_nodes");
  const auto rows = binio::read_f64(is, n * n, path.string());
  Eigen::MatrixXd vectors(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i * n + j];
  Eigen::VectorXd values = Eigen::Map<const Eigen::VectorXd>(evals.data(), static_cast<Eigen::Index>(n));
  return SpectralBasis::make(std::move(vectors), std::move(values));
}

}  // namespace mpt
