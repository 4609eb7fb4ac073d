#pragma once

// Attention x loss ablation grid plus the attention, lambda-mode and
// segment-rate comparisons, each repeated over several seeds.

#include <functional>
#include <string>

#include <json.hpp>

#include "mpt/config.hpp"
#include "mpt/trainer.hpp"

namespace mpt {

struct AblationVariant {
  std::string name;
  Mechanism mechanism = Mechanism::kHpa;
  LossKind loss = LossKind::kGflStandard;
  LambdaMode lambda_mode = LambdaMode::kLearnable;
  double segment_rate = 0.5;
};

/// Every distinct training configuration the report needs, in run order.
std::vector<AblationVariant> ablation_variants(const GflConfig& base, const AblationConfig& cfg);

/// Trains every variant for every seed; a failing run is recorded in the
/// report and the remaining runs continue.
nlohmann::json run_ablation(const Dataset& data, const TrainSetup& base, const AblationConfig& cfg,
                            const std::function<void(const std::string&)>& progress = {});

}  // namespace mpt
