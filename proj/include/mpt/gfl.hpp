#pragma once

// Graph Fourier Loss: frequency-domain MSE with the high-energy spectral
// rows rescaled by an adjustment factor alpha, plus the direct-error variant
// and the plain time-domain MSE used as the baseline loss.

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "mpt/spectral.hpp"
#include "mpt/tensor.hpp"

namespace mpt {

enum class LossKind { kMse, kGflStandard, kGflDirect };
enum class LambdaMode { kLearnable, kFixed };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);
std::string to_string(LambdaMode m);
LambdaMode lambda_mode_from_string(const std::string& s);

struct GflConfig {
  double segment_rate = 0.5;
  double epsilon = 1e-8;
  LambdaMode lambda_mode = LambdaMode::kLearnable;
  /// Initial value when learnable, constant value when fixed.
  double lambda_value = 1.0;
  /// Diagnostic hook: bypasses the alpha formula (and lambda) entirely.
  std::optional<double> forced_alpha;

  void validate() const;
};

struct EnergySplit {
  std::vector<double> energy;
  std::vector<std::size_t> high;  // ordered by descending energy
  std::vector<std::size_t> low;
};

/// Per-frequency energy E_i = Σ_k ŷ_{i,k}². Throws ValidationError on NaN.
std::vector<double> spectral_energy(const Eigen::MatrixXd& yhat);

/// Sorts by energy descending (ties: lower index first); the top
/// ⌈segment_rate·N⌉ rows form the high set.
EnergySplit segment(const std::vector<double>& energy, double segment_rate);

/// α = sqrt(mean(E_low) / (mean(E_high) + ε)) · λ
double adjustment_factor(const EnergySplit& split, double lambda, double epsilon);

/// Scales the rows listed in `high` by alpha.
Eigen::MatrixXd adjust(const Eigen::MatrixXd& yhat, const std::vector<std::size_t>& high, double alpha);

/// Differentiable adjust: alpha is a [1] tensor.
Tensor adjust(const Tensor& yhat, const std::vector<std::size_t>& high, const Tensor& alpha);

/// Both fields transformed; split and alpha come from the target spectrum;
/// both spectra adjusted with the same rows and alpha. `lambda` is a [1]
/// tensor (learnable or constant).
Tensor gfl_standard(const Tensor& prediction, const Tensor& target, const SpectralBasis& basis, const GflConfig& cfg,
                    const Tensor& lambda);

/// Adjusts the transformed error; split and alpha come from the error
/// spectrum and alpha is differentiated through it.
Tensor gfl_direct(const Tensor& prediction, const Tensor& target, const SpectralBasis& basis, const GflConfig& cfg,
                  const Tensor& lambda);

/// (1/N)‖target − prediction‖_F²
Tensor time_mse(const Tensor& prediction, const Tensor& target);

}  // namespace mpt
