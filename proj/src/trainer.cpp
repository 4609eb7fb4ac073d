#include "mpt/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mpt/binio.hpp"
#include "mpt/config.hpp"
#include "mpt/error.hpp"
#include "mpt/ops.hpp"

namespace mpt {

namespace {

constexpr std::uint64_t kSamplerSalt = 0x9e3779b97f4a7c15ULL;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

double field_std(const std::vector<Trajectory>& trajs) {
  double sum = 0.0, sq = 0.0;
  double n = 0.0;
  for (const auto& t : trajs) {
    for (const auto& s : t.states) {
      sum += s.sum();
      sq += s.squaredNorm();
      n += static_cast<double>(s.size());
    }
  }
  const double mean = sum / n;
  return std::sqrt(std::max(sq / n - mean * mean, 0.0));
}

}  // namespace

void TrainConfig::validate() const {
  if (steps == 0) throw ConfigError("train.steps must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(lr_init >= 0.0) || !(lr_final > 0.0) || (lr_init > 0.0 && !(lr_init > lr_final))) {
    throw ConfigError("learning rates must satisfy lr_init > lr_final > 0 (lr_init = 0 freezes training)");
  }
  if (!(decay_fraction > 0.0 && decay_fraction <= 1.0)) throw ConfigError("train.decay_fraction must lie in (0, 1]");
  if (rmse_k == 0) throw ConfigError("train.rmse_k must be positive");
}

double lr_schedule(std::size_t step, const TrainConfig& cfg) {
  if (cfg.lr_init == 0.0) return 0.0;
  const double decay_steps = cfg.decay_fraction * static_cast<double>(cfg.steps);
  const double frac = std::min(static_cast<double>(step) / decay_steps, 1.0);
  return cfg.lr_init * std::pow(cfg.lr_final / cfg.lr_init, frac);
}

void Adam::step(const std::vector<NamedTensor>& params, double lr) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    Tensor param = p.tensor;
    auto& mom = moments_[p.name];
    const auto n = param.numel();
    if (mom.m.empty()) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    }
    if (mom.m.size() != n) throw DimensionError("optimizer state for '" + p.name + "' has the wrong size");
    auto g = param.grad();
    auto w = param.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g[i];
      mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      Tensor t = p.tensor;
      for (double& g : t.mutable_grad()) g *= s;
    }
  }
  return norm;
}

double rmse_k(const std::vector<Eigen::MatrixXd>& predicted, const std::vector<Eigen::MatrixXd>& truth, std::size_t k) {
  if (predicted.size() != truth.size()) {
    throw DimensionError("rmse: " + std::to_string(predicted.size()) + " predicted steps vs " +
                         std::to_string(truth.size()) + " truth steps");
  }
  if (k == 0 || k > predicted.size()) {
    throw DimensionError("rmse: k=" + std::to_string(k) + " outside [1, " + std::to_string(predicted.size()) + "]");
  }
  double sq = 0.0;
  double count = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (predicted[i].rows() != truth[i].rows() || predicted[i].cols() != truth[i].cols()) {
      throw DimensionError("rmse: state shape mismatch at step " + std::to_string(i + 1));
    }
    sq += (predicted[i] - truth[i]).squaredNorm();
    count += static_cast<double>(truth[i].size());
  }
  return std::sqrt(sq / count);
}

RolloutMetrics evaluate(const Predictor& predictor, const std::vector<Trajectory>& trajectories, std::size_t k) {
  if (trajectories.empty()) throw ValidationError("evaluation needs at least one trajectory");
  RolloutMetrics sum;
  for (const auto& traj : trajectories) {
    const std::size_t steps = traj.num_steps() - 2;
    const auto pred = rollout(traj, predictor, 1, steps);
    const std::vector<Eigen::MatrixXd> truth(traj.states.begin() + 2, traj.states.end());
    sum.rmse1 += rmse_k(pred, truth, 1);
    sum.rmse_k += rmse_k(pred, truth, std::min(k, steps));
    sum.rmse_all += rmse_k(pred, truth, steps);
  }
  const double n = static_cast<double>(trajectories.size());
  return {sum.rmse1 / n, sum.rmse_k / n, sum.rmse_all / n};
}

std::string metrics_csv_header(bool with_lambda) {
  return with_lambda ? "step,loss,lambda,lr,rmse1,rmseK,rmseAll,wall_ms" : "step,loss,lr,rmse1,rmseK,rmseAll,wall_ms";
}

std::string metrics_csv_row(const MetricsRecord& r, bool with_lambda) {
  std::ostringstream os;
  os << r.step << ',' << fmt(r.loss) << ',';
  if (with_lambda) os << (r.lambda ? fmt(*r.lambda) : "") << ',';
  os << fmt(r.lr) << ',';
  if (r.eval) {
    os << fmt(r.eval->rmse1) << ',' << fmt(r.eval->rmse_k) << ',' << fmt(r.eval->rmse_all) << ',';
  } else {
    os << ",,,";
  }
  if (r.wall_ms) os << fmt(*r.wall_ms);
  return os.str();
}

ModelConfig resolve_model_config(const Dataset& data, ModelConfig cfg) {
  if (data.train.empty()) throw ValidationError("training split is empty");
  const FeatureLayout layout = feature_layout(data.train.front());
  cfg.node_inputs = layout.node_inputs;
  cfg.edge_inputs = layout.edge_inputs;
  cfg.outputs = layout.outputs;
  cfg.validate();
  return cfg;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, values] : ckpt.tensors) tensors.push_back({{"name", name}, {"size", values.size()}});
  nlohmann::json manifest = {{"format", "mpt-checkpoint"},
                             {"version", 1},
                             {"step", ckpt.step},
                             {"model", model_config_to_json(ckpt.model)},
                             {"loss", gfl_config_to_json(ckpt.gfl, ckpt.loss)},
                             {"normalizers", ckpt.normalizers.to_json()},
                             {"rng", ckpt.rng_state},
                             {"adam_t", ckpt.adam_t},
                             {"tensors", tensors},
                             {"blobs", {"params", "adam_m", "adam_v"}}};

  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  {
    std::ofstream os = binio::open_out(tmp / "manifest.json");
    os << manifest.dump(2) << '\n';
  }
  {
    std::ofstream os = binio::open_out(tmp / "params.bin");
    for (const auto& t : ckpt.tensors) binio::write_f64(os, t.second);
    for (const auto& t : ckpt.tensors) {
      const auto it = ckpt.adam.find(t.first);
      binio::write_f64(os, it == ckpt.adam.end() ? std::vector<double>(t.second.size(), 0.0) : it->second.m);
    }
    for (const auto& t : ckpt.tensors) {
      const auto it = ckpt.adam.find(t.first);
      binio::write_f64(os, it == ckpt.adam.end() ? std::vector<double>(t.second.size(), 0.0) : it->second.v);
    }
    if (!os) throw IoError("failed writing " + (tmp / "params.bin").string());
  }
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.json")) {
    throw IoError("no checkpoint at " + dir.string() + "; run the train command first or pass --checkpoint");
  }
  nlohmann::json manifest;
  try {
    std::ifstream is = binio::open_in(dir / "manifest.json");
    manifest = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint manifest: " + std::string(e.what()));
  }
  Checkpoint c;
  try {
    if (manifest.at("format") != "mpt-checkpoint" || manifest.at("version") != 1) {
      throw ParseError("unsupported checkpoint format in " + dir.string());
    }
    c.step = manifest.at("step").get<std::size_t>();
    c.model = model_config_from_json(manifest.at("model"));
    c.gfl = gfl_config_from_json(manifest.at("loss"), &c.loss);
    c.normalizers = Normalizers::from_json(manifest.at("normalizers"));
    c.rng_state = manifest.at("rng").get<std::string>();
    c.adam_t = manifest.at("adam_t").get<std::size_t>();
    for (const auto& t : manifest.at("tensors")) {
      c.tensors.emplace_back(t.at("name").get<std::string>(), std::vector<double>(t.at("size").get<std::size_t>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint manifest: " + std::string(e.what()));
  }
  std::ifstream is = binio::open_in(dir / "params.bin");
  for (auto& t : c.tensors) t.second = binio::read_f64(is, t.second.size(), "checkpoint params");
  for (auto& t : c.tensors) c.adam[t.first].m = binio::read_f64(is, t.second.size(), "checkpoint adam_m");
  for (auto& t : c.tensors) c.adam[t.first].v = binio::read_f64(is, t.second.size(), "checkpoint adam_v");
  if (is.peek() != std::char_traits<char>::eof()) throw ParseError("checkpoint params.bin has trailing bytes");
  return c;
}

namespace {

void load_into(ModelParameters& params, const Checkpoint& ckpt) {
  const auto named = params.named();
  if (named.size() != ckpt.tensors.size()) {
    throw ParseError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                     std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& [name, values] = ckpt.tensors[i];
    if (name != named[i].name || values.size() != named[i].tensor.numel()) {
      throw ParseError("checkpoint tensor '" + name + "' does not match model tensor '" + named[i].name + "'");
    }
    Tensor t = named[i].tensor;
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
  }
}

bool has_lambda(const Checkpoint& ckpt) {
  for (const auto& t : ckpt.tensors)
    if (t.first == "gfl.lambda") return true;
  return false;
}

}  // namespace

MessagePassingTransformer model_from_checkpoint(const Checkpoint& ckpt) {
  MessagePassingTransformer model(ckpt.model, 0);
  if (has_lambda(ckpt)) model.params().lambda = Tensor::full({1}, 0.0, true);
  load_into(model.params(), ckpt);
  return model;
}

TrainResult train(const Dataset& data, const TrainSetup& setup, const TrainOptions& options) {
  namespace fs = std::filesystem;
  const TrainConfig& cfg = setup.train;
  cfg.validate();
  setup.gfl.validate();
  const ModelConfig mc = resolve_model_config(data, setup.model);
  const bool spectral = cfg.loss != LossKind::kMse;
  if (spectral && data.train_bases.size() != data.train.size()) {
    throw CacheMissError("spectral bases are missing for the training split; run the preprocess command first");
  }
  const bool learnable = spectral && setup.gfl.lambda_mode == LambdaMode::kLearnable;

  std::vector<DirectedEdges> edges;
  edges.reserve(data.train.size());
  for (const auto& t : data.train) edges.push_back(directed_edges(t.graph));

  const double noise_rel =
      cfg.noise_rel >= 0.0 ? cfg.noise_rel : (data.train.front().kind == SystemKind::kLagrangian ? 1e-3 : 2e-2);
  const double noise_abs = noise_rel * field_std(data.train);

  TrainResult result{{}, std::nullopt, std::nullopt, 0, MessagePassingTransformer(mc, cfg.seed),
                     Normalizers::fit(data.train)};
  MessagePassingTransformer& model = result.model;
  if (learnable) model.params().lambda = Tensor::full({1}, setup.gfl.lambda_value, true);
  const Tensor fixed_lambda = Tensor::full({1}, setup.gfl.lambda_value);

  Adam adam;
  Rng rng(cfg.seed ^ kSamplerSalt);
  std::size_t start = 0;
  if (options.resume_from) {
    const Checkpoint ckpt = load_checkpoint(*options.resume_from);
    load_into(model.params(), ckpt);
    adam.restore(ckpt.adam_t, ckpt.adam);
    rng.set_state(ckpt.rng_state);
    result.normalizers = ckpt.normalizers;
    start = ckpt.step;
  }

  std::vector<Trajectory> eval_set = data.valid;
  if (cfg.eval_trajectories > 0 && eval_set.size() > cfg.eval_trajectories) eval_set.resize(cfg.eval_trajectories);

  std::ofstream csv;
  fs::path ckpt_dir;
  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    ckpt_dir = *options.out_dir / "checkpoint";
    const fs::path csv_path = *options.out_dir / "metrics.csv";
    std::vector<std::string> kept;
    if (start > 0 && fs::exists(csv_path)) {
      std::ifstream in(csv_path);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (std::stoull(line.substr(0, line.find(','))) <= start) kept.push_back(line);
      }
    }
    csv = binio::open_out(csv_path);
    csv << metrics_csv_header(learnable) << '\n';
    for (const auto& l : kept) csv << l << '\n';
  }

  const Normalizers& norm = result.normalizers;
  const std::size_t stop = options.stop_after ? std::min(*options.stop_after, cfg.steps) : cfg.steps;
  for (std::size_t step = start + 1; step <= stop; ++step) {
    const auto t_begin = std::chrono::steady_clock::now();
    const double lr = lr_schedule(step - 1, cfg);
    double loss_value = 0.0;
    {
      TapeScope scope;
      Tensor total;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const std::size_t idx = rng.index(data.train.size());
        const Trajectory& traj = data.train[idx];
        const std::size_t t = 1 + rng.index(traj.num_steps() - 2);
        Sample sample = make_sample(traj, edges[idx], t, norm, noise_abs, &rng);
        const Tensor pred = model.forward(sample.input, ForwardContext{true, &rng});
        Tensor loss;
        const Tensor& lambda = learnable ? model.params().lambda : fixed_lambda;
        switch (cfg.loss) {
          case LossKind::kMse:
            loss = time_mse(pred, sample.target);
            break;
          case LossKind::kGflStandard:
            loss = gfl_standard(pred, sample.target, data.train_bases[idx], setup.gfl, lambda);
            break;
          case LossKind::kGflDirect:
            loss = gfl_direct(pred, sample.target, data.train_bases[idx], setup.gfl, lambda);
            break;
        }
        total = total.defined() ? add(total, loss) : loss;
      }
      if (cfg.batch_size > 1) total = scale(total, 1.0 / static_cast<double>(cfg.batch_size));
      loss_value = total.item();
      if (!std::isfinite(loss_value)) {
        throw DivergenceError("training loss became non-finite at step " + std::to_string(step) +
                              (options.out_dir ? "; last checkpoint retained in " + ckpt_dir.string() : ""));
      }
      backward(total);
    }
    const auto named = model.params().named();
    if (clip_grad_norm(named, cfg.clip_norm) > cfg.clip_norm && cfg.clip_norm > 0.0) ++result.clipped_updates;
    adam.step(named, lr);
    for (const auto& p : named) {
      Tensor t = p.tensor;
      t.zero_grad();
    }

    MetricsRecord rec;
    rec.step = step;
    rec.loss = loss_value;
    rec.lr = lr;
    if (learnable) rec.lambda = model.params().lambda.item();
    const bool eval_due = (cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps;
    if (eval_due && !eval_set.empty()) {
      rec.eval = evaluate(ModelPredictor(model, norm), eval_set, cfg.rmse_k);
      if (step == cfg.steps) result.final_eval = rec.eval;
    }
    if (cfg.record_wall_time) {
      rec.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_begin).count();
    }
    if (csv.is_open()) csv << metrics_csv_row(rec, learnable) << '\n' << std::flush;
    if (options.on_record) options.on_record(rec);
    result.records.push_back(rec);

    const bool ckpt_due = (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) || step == stop;
    if (options.out_dir && ckpt_due) {
      Checkpoint c;
      c.step = step;
      c.model = mc;
      c.gfl = setup.gfl;
      c.loss = cfg.loss;
      c.normalizers = norm;
      c.rng_state = rng.state();
      c.adam_t = adam.iterations();
      c.adam = adam.state();
      for (const auto& p : named) {
        const auto d = p.tensor.data();
        c.tensors.emplace_back(p.name, std::vector<double>(d.begin(), d.end()));
      }
      save_checkpoint(c, ckpt_dir);
    }
  }
  if (learnable) result.final_lambda = model.params().lambda.item();
  return result;
}

}  // namespace mpt
