#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>

#include "mpt/graph.hpp"
#include "mpt/tensor.hpp"

namespace mpt {

/// Laplacian eigenbasis: columns of `vectors` are orthonormal eigenvectors,
/// `values` ascending. Immutable once built.
struct SpectralBasis {
  Eigen::MatrixXd vectors;
  Eigen::VectorXd values;
  /// U^T as a constant row-major tensor, for differentiable transforms.
  Tensor transpose;

  static SpectralBasis make(Eigen::MatrixXd vectors, Eigen::VectorXd values);
  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
};

/// Combinatorial Laplacian L = D - A of the unweighted graph.
Eigen::MatrixXd build_laplacian(const Graph& g);

struct JacobiOptions {
  double relative_tolerance = 1e-12;
  int max_sweeps = 50;
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Eigenpairs are
/// sorted ascending; each eigenvector's first entry with magnitude > 1e-9
/// is made positive.
SpectralBasis eigendecompose(const Eigen::MatrixXd& sym, const JacobiOptions& opts = {});

/// ‖L − U diag(λ) Uᵀ‖_F
double reconstruction_residual(const Eigen::MatrixXd& sym, const SpectralBasis& basis);
/// max |UᵀU − I|
double orthonormality_error(const SpectralBasis& basis);

/// x̂ = Uᵀx for an N×d field.
Eigen::MatrixXd gft(const SpectralBasis& basis, const Eigen::MatrixXd& x);
/// x = U x̂
Eigen::MatrixXd igft(const SpectralBasis& basis, const Eigen::MatrixXd& xhat);
/// Differentiable x̂ = Uᵀx for an [N, d] tensor.
Tensor gft(const SpectralBasis& basis, const Tensor& x);

/// One `<dir>/<id>.gfb` file per trajectory: a one-line JSON header
/// (format, version, num_nodes, eigenvalues) then U as row-major
/// little-endian f64.
class SpectralCache {
 public:
  explicit SpectralCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::filesystem::path path_for(const std::string& trajectory_id) const;
  bool contains(const std::string& trajectory_id) const;
  void store(const std::string& trajectory_id, const SpectralBasis& basis) const;
  /// Throws CacheMissError when the entry does not exist.
  SpectralBasis load(const std::string& trajectory_id) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

}  // namespace mpt
