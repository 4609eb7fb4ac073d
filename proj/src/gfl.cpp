#include "mpt/gfl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mpt/error.hpp"
#include "mpt/ops.hpp"

namespace mpt {

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kMse: return "mse";
    case LossKind::kGflStandard: return "gfl_standard";
    case LossKind::kGflDirect: return "gfl_direct";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "mse") return LossKind::kMse;
  if (s == "gfl_standard" || s == "gfl") return LossKind::kGflStandard;
  if (s == "gfl_direct") return LossKind::kGflDirect;
  throw ConfigError("unknown loss '" + s + "' (expected mse, gfl_standard or gfl_direct)");
}

std::string to_string(LambdaMode m) { return m == LambdaMode::kLearnable ? "learnable" : "fixed"; }

LambdaMode lambda_mode_from_string(const std::string& s) {
  if (s == "learnable") return LambdaMode::kLearnable;
  if (s == "fixed") return LambdaMode::kFixed;
  throw ConfigError("unknown lambda mode '" + s + "' (expected learnable or fixed)");
}

void GflConfig::validate() const {
  if (!(segment_rate > 0.0 && segment_rate < 1.0)) throw ConfigError("segment_rate must lie in (0,1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
}

std::vector<double> spectral_energy(const Eigen::MatrixXd& yhat) {
  if (!yhat.allFinite()) throw ValidationError("spectral energy of a non-finite signal");
  std::vector<double> e(static_cast<std::size_t>(yhat.rows()));
  for (Eigen::Index i = 0; i < yhat.rows(); ++i) e[static_cast<std::size_t>(i)] = yhat.row(i).squaredNorm();
  return e;
}

EnergySplit segment(const std::vector<double>& energy, double segment_rate) {
  const std::size_t n = energy.size();
  if (n < 2) throw ConfigError("energy segmentation needs at least 2 frequencies, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return energy[a] > energy[b]; });
  // The small slack keeps e.g. 0.3*10 from rounding up to 4.
  const auto n_high = static_cast<std::size_t>(std::ceil(segment_rate * static_cast<double>(n) - 1e-9));
  EnergySplit split;
  split.energy = energy;
  split.high.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_high, n)));
  split.low.assign(order.begin() + static_cast<std::ptrdiff_t>(std::min(n_high, n)), order.end());
  return split;
}

namespace {

double mean_over(const std::vector<double>& e, const std::vector<std::size_t>& idx) {
  double s = 0.0;
  for (auto i : idx) s += e[i];
  return s / static_cast<double>(idx.size());
}

void require_nonempty(const EnergySplit& split) {
  if (split.high.empty() || split.low.empty()) {
    throw ConfigError("segment rate leaves an empty energy partition (high " + std::to_string(split.high.size()) +
                      ", low " + std::to_string(split.low.size()) + ")");
  }
}

Tensor row_mask(std::size_t n, const std::vector<std::size_t>& rows, bool selected) {
  std::vector<double> m(n, selected ? 0.0 : 1.0);
  for (auto r : rows) m[r] = selected ? 1.0 : 0.0;
  return Tensor::from({n, 1}, std::move(m));
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
  const auto d = t.dim(1);
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t[i * d + j];
  return m;
}

void check_fields(const Tensor& prediction, const Tensor& target, const SpectralBasis* basis) {
  if (prediction.rank() != 2 || prediction.shape() != target.shape()) {
    throw DimensionError("loss: prediction " + shape_str(prediction.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  if (basis != nullptr && basis->size() != prediction.dim(0)) {
    throw DimensionError("loss: spectral basis of size " + std::to_string(basis->size()) + " for " +
                         std::to_string(prediction.dim(0)) + " nodes");
  }
}

}  // namespace

double adjustment_factor(const EnergySplit& split, double lambda, double epsilon) {
  require_nonempty(split);
  return std::sqrt(mean_over(split.energy, split.low) / (mean_over(split.energy, split.high) + epsilon)) * lambda;
}

Eigen::MatrixXd adjust(const Eigen::MatrixXd& yhat, const std::vector<std::size_t>& high, double alpha) {
  Eigen::MatrixXd out = yhat;
  for (auto r : high) out.row(static_cast<Eigen::Index>(r)) *= alpha;
  return out;
}

Tensor adjust(const Tensor& yhat, const std::vector<std::size_t>& high, const Tensor& alpha) {
  const auto n = yhat.dim(0);
  return add(hadamard(yhat, row_mask(n, high, false)), hadamard(hadamard(yhat, row_mask(n, high, true)), alpha));
}

Tensor gfl_standard(const Tensor& prediction, const Tensor& target, const SpectralBasis& basis, const GflConfig& cfg,
                    const Tensor& lambda) {
  check_fields(prediction, target, &basis);
  const auto n = static_cast<double>(prediction.dim(0));
  const Eigen::MatrixXd target_hat = gft(basis, to_matrix(target));
  const EnergySplit split = segment(spectral_energy(target_hat), cfg.segment_rate);
  Tensor alpha;
  if (cfg.forced_alpha) {
    alpha = Tensor::scalar(*cfg.forced_alpha);
  } else {
    // α = c·λ with c fixed by the target spectrum; only λ carries gradient.
    alpha = scale(lambda, adjustment_factor(split, 1.0, cfg.epsilon));
  }
  const Tensor pred_hat = gft(basis, prediction);
  const Tensor target_hat_t = gft(basis, target.detach());
  const Tensor diff = sub(adjust(pred_hat, split.high, alpha), adjust(target_hat_t, split.high, alpha));
  return scale(sum(square(diff)), 1.0 / n);
}

Tensor gfl_direct(const Tensor& prediction, const Tensor& target, const SpectralBasis& basis, const GflConfig& cfg,
                  const Tensor& lambda) {
  check_fields(prediction, target, &basis);
  const auto n = static_cast<double>(prediction.dim(0));
  const Tensor err_hat = gft(basis, sub(prediction, target));
  const Tensor energy = sum(square(err_hat), 1);  // [N]
  const std::vector<double> e(energy.data().begin(), energy.data().end());
  if (std::any_of(e.begin(), e.end(), [](double x) { return !std::isfinite(x); })) {
    throw ValidationError("spectral energy of a non-finite signal");
  }
  const EnergySplit split = segment(e, cfg.segment_rate);
  require_nonempty(split);
  Tensor alpha;
  if (cfg.forced_alpha) {
    alpha = Tensor::scalar(*cfg.forced_alpha);
  } else {
    const Tensor mean_low = mean(gather_rows(energy, split.low));
    const Tensor mean_high = mean(gather_rows(energy, split.high));
    if (mean_low.item() == 0.0) {
      // sqrt is not differentiable at 0; alpha is exactly 0 here.
      alpha = scale(lambda, 0.0);
    } else {
      alpha = hadamard(sqrt(div(mean_low, add_scalar(mean_high, cfg.epsilon))), lambda);
    }
  }
  return scale(sum(square(adjust(err_hat, split.high, alpha))), 1.0 / n);
}

Tensor time_mse(const Tensor& prediction, const Tensor& target) {
  check_fields(prediction, target, nullptr);
  return scale(sum(square(sub(target, prediction))), 1.0 / static_cast<double>(prediction.dim(0)));
}

}  // namespace mpt
