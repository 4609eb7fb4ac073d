#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpt/gfl.hpp"
#include "mpt/model.hpp"
#include "mpt/simulator.hpp"
#include "mpt/spectral.hpp"
#include "mpt/synth.hpp"

namespace mpt {

struct TrainConfig {
  std::size_t steps = 20000;
  std::size_t batch_size = 1;
  double lr_init = 1e-4;
  double lr_final = 1e-6;
  /// Fraction of `steps` over which the rate decays; constant afterwards.
  double decay_fraction = 0.4;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kGflStandard;
  /// Noise std relative to the std of the dynamic field; < 0 picks the
  /// per-system default (1e-3 Lagrangian, 2e-2 Eulerian).
  double noise_rel = -1.0;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::size_t eval_every = 0;  // 0: evaluate after the last step only
  std::size_t eval_trajectories = 0;  // 0: all validation trajectories
  std::size_t rmse_k = 10;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  bool record_wall_time = false;

  void validate() const;
};

/// lr_init·(lr_final/lr_init)^min(step/decay_steps, 1)
double lr_schedule(std::size_t step, const TrainConfig& cfg);

class Adam {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  /// Applies one bias-corrected update to every tensor that has a gradient.
  /// Throws NumericalError naming the first parameter with a non-finite gradient.
  void step(const std::vector<NamedTensor>& params, double lr);
  std::size_t iterations() const { return t_; }

  struct Moments {
    std::vector<double> m, v;
  };
  const std::map<std::string, Moments>& state() const { return moments_; }
  void restore(std::size_t t, std::map<std::string, Moments> moments) {
    t_ = t;
    moments_ = std::move(moments);
  }

 private:
  std::size_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm);

/// Root mean squared error over steps [0, k), nodes and channels;
/// predicted[i] is compared with truth[i].
double rmse_k(const std::vector<Eigen::MatrixXd>& predicted, const std::vector<Eigen::MatrixXd>& truth, std::size_t k);

struct RolloutMetrics {
  double rmse1 = 0.0;
  double rmse_k = 0.0;
  double rmse_all = 0.0;
};

/// Full-length rollouts from t=1, averaged over trajectories.
RolloutMetrics evaluate(const Predictor& predictor, const std::vector<Trajectory>& trajectories, std::size_t k);

struct Dataset {
  std::vector<Trajectory> train;
  std::vector<Trajectory> valid;
  /// Spectral bases of `train`, same order; required by the GFL losses.
  std::vector<SpectralBasis> train_bases;
};

struct TrainSetup {
  ModelConfig model;  // input/output widths are filled in from the data
  GflConfig gfl;
  TrainConfig train;
};

struct MetricsRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::optional<double> lambda;
  double lr = 0.0;
  std::optional<RolloutMetrics> eval;
  std::optional<double> wall_ms;
};

std::string metrics_csv_header(bool with_lambda);
std::string metrics_csv_row(const MetricsRecord& r, bool with_lambda);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;         // metrics.csv + checkpoint/
  std::optional<std::filesystem::path> resume_from;     // checkpoint directory
  std::optional<std::size_t> stop_after;                // stop early (resume testing)
  std::function<void(const MetricsRecord&)> on_record;  // progress hook
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  std::optional<RolloutMetrics> final_eval;
  std::optional<double> final_lambda;
  std::size_t clipped_updates = 0;
  MessagePassingTransformer model;
  Normalizers normalizers;
};

/// Fills the model's input/output widths from the first training trajectory.
ModelConfig resolve_model_config(const Dataset& data, ModelConfig cfg);

TrainResult train(const Dataset& data, const TrainSetup& setup, const TrainOptions& options = {});

struct Checkpoint {
  std::size_t step = 0;
  ModelConfig model;
  GflConfig gfl;
  LossKind loss = LossKind::kMse;
  Normalizers normalizers;
  std::string rng_state;
  std::size_t adam_t = 0;
  std::map<std::string, Adam::Moments> adam;
  std::vector<std::pair<std::string, std::vector<double>>> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
/// Throws CacheMissError-style remediation (IoError) if missing.
Checkpoint load_checkpoint(const std::filesystem::path& dir);
/// Rebuilds the network (and lambda) from a checkpoint.
MessagePassingTransformer model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mpt
