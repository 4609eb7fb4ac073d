#include "mpt/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "mpt/error.hpp"

namespace mpt {

namespace {

using nlohmann::json;

std::string rate_tag(double s) {
  std::ostringstream os;
  os << s;
  return os.str();
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

json nan_safe(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

struct CellResult {
  std::vector<std::uint64_t> seeds;
  std::vector<double> rmse1, rmse_k, rmse_all, lambda;
  json failures = json::array();
};

json cell_json(const AblationVariant& v, const CellResult& r) {
  json lambdas = json::array();
  for (double l : r.lambda) lambdas.push_back(nan_safe(l));
  auto per = [](const std::vector<double>& xs) {
    json a = json::array();
    for (double x : xs) a.push_back(nan_safe(x));
    return a;
  };
  return {{"name", v.name},
          {"mechanism", to_string(v.mechanism)},
          {"loss", to_string(v.loss)},
          {"lambda_mode", to_string(v.lambda_mode)},
          {"segment_rate", v.segment_rate},
          {"seeds", r.seeds},
          {"per_seed", {{"rmse1", per(r.rmse1)}, {"rmseK", per(r.rmse_k)}, {"rmseAll", per(r.rmse_all)},
                        {"lambda", lambdas}}},
          {"median",
           {{"rmse1", nan_safe(median(r.rmse1))},
            {"rmseK", nan_safe(median(r.rmse_k))},
            {"rmseAll", nan_safe(median(r.rmse_all))}}},
          {"failures", r.failures}};
}

}  // namespace

std::vector<AblationVariant> ablation_variants(const GflConfig& base, const AblationConfig& cfg) {
  const double s = base.segment_rate;
  std::vector<AblationVariant> out = {
      {"dpa_mse", Mechanism::kDpa, LossKind::kMse, base.lambda_mode, s},
      {"hpa_mse", Mechanism::kHpa, LossKind::kMse, base.lambda_mode, s},
      {"dpa_gfl", Mechanism::kDpa, LossKind::kGflStandard, LambdaMode::kLearnable, s},
      {"hpa_gfl", Mechanism::kHpa, LossKind::kGflStandard, LambdaMode::kLearnable, s},
      {"hpa_gfl_fixed_lambda", Mechanism::kHpa, LossKind::kGflStandard, LambdaMode::kFixed, s},
  };
  for (double r : cfg.segment_rates) {
    if (r == s) continue;
    out.push_back({"hpa_gfl_sr_" + rate_tag(r), Mechanism::kHpa, LossKind::kGflStandard, LambdaMode::kLearnable, r});
  }
  return out;
}

json run_ablation(const Dataset& data, const TrainSetup& base, const AblationConfig& cfg,
                  const std::function<void(const std::string&)>& progress) {
  const auto variants = ablation_variants(base.gfl, cfg);
  std::map<std::string, CellResult> results;
  std::map<std::string, const AblationVariant*> by_name;
  for (const auto& v : variants) {
    by_name[v.name] = &v;
    CellResult& cell = results[v.name];
    for (std::uint64_t seed : cfg.seeds) {
      TrainSetup setup = base;
      setup.model.mechanism = v.mechanism;
      setup.train.loss = v.loss;
      setup.train.seed = seed;
      if (cfg.steps > 0) setup.train.steps = cfg.steps;
      setup.train.eval_every = 0;
      setup.gfl.segment_rate = v.segment_rate;
      setup.gfl.lambda_mode = v.lambda_mode;
      setup.gfl.lambda_value = v.lambda_mode == LambdaMode::kFixed ? cfg.fixed_lambda : base.gfl.lambda_value;
      if (progress) progress(v.name + " seed " + std::to_string(seed));
      cell.seeds.push_back(seed);
      try {
        const TrainResult r = train(data, setup);
        if (!r.final_eval) throw ValidationError("no validation trajectories to evaluate");
        cell.rmse1.push_back(r.final_eval->rmse1);
        cell.rmse_k.push_back(r.final_eval->rmse_k);
        cell.rmse_all.push_back(r.final_eval->rmse_all);
        cell.lambda.push_back(r.final_lambda.value_or(std::nan("")));
      } catch (const Error& e) {
        cell.rmse1.push_back(std::nan(""));
        cell.rmse_k.push_back(std::nan(""));
        cell.rmse_all.push_back(std::nan(""));
        cell.lambda.push_back(std::nan(""));
        cell.failures.push_back({{"seed", seed}, {"category", e.category()}, {"message", e.what()}});
      }
    }
  }
  auto cell = [&](const std::string& name) { return cell_json(*by_name.at(name), results.at(name)); };
  auto finite = [](const std::vector<double>& v) {
    std::vector<double> out;
    for (double x : v)
      if (std::isfinite(x)) out.push_back(x);
    return out;
  };

  // Columns are the four attention/loss cells, rows the metrics.
  const std::vector<std::pair<std::string, std::string>> columns = {
      {"neither", "dpa_mse"}, {"hpa_only", "hpa_mse"}, {"gfl_only", "dpa_gfl"}, {"hpa_gfl", "hpa_gfl"}};
  json rows = json::object();
  for (const auto& [metric, pick] :
       std::vector<std::pair<std::string, std::vector<double> CellResult::*>>{
           {"rmse1", &CellResult::rmse1}, {"rmseK", &CellResult::rmse_k}, {"rmseAll", &CellResult::rmse_all}}) {
    json row = json::object();
    for (const auto& [col, name] : columns) row[col] = nan_safe(median(finite(results.at(name).*pick)));
    rows[metric] = row;
  }
  json cells = json::array();
  for (const auto& [col, name] : columns) {
    json c = cell(name);
    c["column"] = col;
    cells.push_back(c);
  }

  const std::string base_sr = "hpa_gfl";
  json sweep = json::array();
  std::vector<double> sweep_medians;
  for (double r : cfg.segment_rates) {
    const std::string name = r == base.gfl.segment_rate ? base_sr : "hpa_gfl_sr_" + rate_tag(r);
    const CellResult& res = results.at(name);
    const double m = median(finite(res.rmse_all));
    if (std::isfinite(m)) sweep_medians.push_back(m);
    json row = cell(name);
    row["segment_rate"] = r;
    sweep.push_back(row);
  }
  json spread = nullptr, rel_spread = nullptr;
  if (!sweep_medians.empty()) {
    const auto [lo, hi] = std::minmax_element(sweep_medians.begin(), sweep_medians.end());
    spread = *hi - *lo;
    rel_spread = (*hi - *lo) / *lo;
  }

  const double hpa_gfl = median(finite(results.at("hpa_gfl").rmse_all));
  const double plain = median(finite(results.at("dpa_mse").rmse_all));
  json soft = {{"description", "HPA+GFL median RMSE-all <= DPA+MSE median RMSE-all"},
               {"hpa_gfl_rmse_all", nan_safe(hpa_gfl)},
               {"dpa_mse_rmse_all", nan_safe(plain)},
               {"holds", std::isfinite(hpa_gfl) && std::isfinite(plain) ? json(hpa_gfl <= plain) : json(nullptr)}};

  json failures = json::array();
  for (const auto& [name, res] : results)
    for (const auto& f : res.failures) {
      json g = f;
      g["variant"] = name;
      failures.push_back(g);
    }

  return {{"seeds", cfg.seeds},
          {"steps", cfg.steps > 0 ? cfg.steps : base.train.steps},
          {"rmse_k", base.train.rmse_k},
          {"grid", {{"columns", {"neither", "hpa_only", "gfl_only", "hpa_gfl"}}, {"rows", rows}, {"cells", cells}}},
          {"attention_comparison", {{"dpa", cell("dpa_gfl")}, {"hpa", cell("hpa_gfl")}}},
          {"lambda_mode_comparison", {{"learnable", cell("hpa_gfl")}, {"fixed", cell("hpa_gfl_fixed_lambda")}}},
          {"segment_rate_sweep", {{"rows", sweep}, {"rmse_all_spread", spread}, {"rmse_all_relative_spread", rel_spread}}},
          {"soft_check", soft},
          {"failures", failures}};
}

}  // namespace mpt
