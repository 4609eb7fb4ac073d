#include "mpt/config.hpp"

#include <fstream>
#include <set>

#include "mpt/error.hpp"

namespace mpt {

namespace {

using nlohmann::json;

/// Reads an object section, remembering which keys were consumed so that
/// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  void read_path(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    read(key, s);
    out = s;
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }
  std::string where(const std::string& key = "") const {
    const std::string p = path_.empty() ? key : (key.empty() ? path_ : path_ + "." + key);
    return p.empty() ? "config" : "'" + p + "'";
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key " + where(key));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto parse_enum(const std::string& what, Fn fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"node_inputs", c.node_inputs}, {"edge_inputs", c.edge_inputs}, {"outputs", c.outputs},
          {"latent", c.latent},           {"hidden", c.hidden},           {"mp_steps", c.mp_steps},
          {"heads", c.heads},             {"dropout", c.dropout},         {"mechanism", to_string(c.mechanism)},
          {"layer_norm", c.layer_norm},   {"residual", c.residual}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  Section s(j, "model");
  s.read("node_inputs", c.node_inputs);
  s.read("edge_inputs", c.edge_inputs);
  s.read("outputs", c.outputs);
  s.read("latent", c.latent);
  s.read("hidden", c.hidden);
  s.read("mp_steps", c.mp_steps);
  s.read("heads", c.heads);
  s.read("dropout", c.dropout);
  std::string mech = to_string(c.mechanism);
  s.read("mechanism", mech);
  c.mechanism = parse_enum("model.mechanism", [&] { return mechanism_from_string(mech); });
  s.read("layer_norm", c.layer_norm);
  s.read("residual", c.residual);
  s.finish();
  return c;
}

nlohmann::json gfl_config_to_json(const GflConfig& c, LossKind kind) {
  json j = {{"kind", to_string(kind)},
            {"segment_rate", c.segment_rate},
            {"epsilon", c.epsilon},
            {"lambda_mode", to_string(c.lambda_mode)},
            {"lambda", c.lambda_value}};
  if (c.forced_alpha) j["forced_alpha"] = *c.forced_alpha;
  return j;
}

GflConfig gfl_config_from_json(const nlohmann::json& j, LossKind* kind) {
  GflConfig c;
  Section s(j, "loss");
  std::string k = kind ? to_string(*kind) : "gfl_standard";
  s.read("kind", k);
  if (kind) *kind = parse_enum("loss.kind", [&] { return loss_kind_from_string(k); });
  s.read("segment_rate", c.segment_rate);
  s.read("epsilon", c.epsilon);
  std::string mode = to_string(c.lambda_mode);
  s.read("lambda_mode", mode);
  c.lambda_mode = parse_enum("loss.lambda_mode", [&] { return lambda_mode_from_string(mode); });
  s.read("lambda", c.lambda_value);
  if (s.has("forced_alpha")) {
    double a = 0.0;
    s.read("forced_alpha", a);
    c.forced_alpha = a;
  }
  s.finish();
  return c;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  Section root(j, "");
  root.read("seed", c.seed);
  root.read_path("data_dir", c.data_dir);
  root.read_path("cache_dir", c.cache_dir);
  root.read_path("out_dir", c.out_dir);
  if (root.has("checkpoint") && !j.at("checkpoint").is_null()) {
    std::filesystem::path p;
    root.read_path("checkpoint", p);
    c.checkpoint = p;
  }

  if (root.has("task")) {
    Section s(j.at("task"), "task");
    std::string kind = to_string(c.task.kind);
    s.read("kind", kind);
    c.task.kind = parse_enum("task.kind", [&] { return system_kind_from_string(kind); });
    s.read("train_trajectories", c.task.train_trajectories);
    s.read("valid_trajectories", c.task.valid_trajectories);
    if (s.has("heat")) {
      Section h(j.at("task").at("heat"), "task.heat");
      h.read("nx", c.task.heat.nx);
      h.read("ny", c.task.heat.ny);
      h.read("spacing", c.task.heat.spacing);
      h.read("kappa", c.task.heat.kappa);
      h.read("dt", c.task.heat.dt);
      h.read("num_steps", c.task.heat.num_steps);
      h.read("bumps", c.task.heat.bumps);
      h.finish();
    }
    if (s.has("spring")) {
      Section h(j.at("task").at("spring"), "task.spring");
      h.read("num_nodes", c.task.spring.num_nodes);
      h.read("dim", c.task.spring.dim);
      h.read("stiffness", c.task.spring.stiffness);
      h.read("mass", c.task.spring.mass);
      h.read("rest_length", c.task.spring.rest_length);
      h.read("dt", c.task.spring.dt);
      h.read("num_steps", c.task.spring.num_steps);
      h.read("amplitude", c.task.spring.amplitude);
      h.read("substeps", c.task.spring.substeps);
      h.finish();
    }
    s.finish();
  }

  if (root.has("model")) {
    const json& m = j.at("model");
    if (m.is_object() && m.contains("kind")) {
      json rest = m;
      rest.erase("kind");
      if (!m.at("kind").is_string()) throw ConfigError("'model.kind' has the wrong type");
      c.model_kind = m.at("kind").get<std::string>();
      c.model = model_config_from_json(rest);
    } else {
      c.model = model_config_from_json(m);
    }
  }
  if (root.has("loss")) c.gfl = gfl_config_from_json(j.at("loss"), &c.train.loss);

  if (root.has("train")) {
    Section s(j.at("train"), "train");
    s.read("steps", c.train.steps);
    s.read("batch_size", c.train.batch_size);
    s.read("lr_init", c.train.lr_init);
    s.read("lr_final", c.train.lr_final);
    s.read("decay_fraction", c.train.decay_fraction);
    s.read("noise_rel", c.train.noise_rel);
    s.read("clip_norm", c.train.clip_norm);
    s.read("eval_every", c.train.eval_every);
    s.read("eval_trajectories", c.train.eval_trajectories);
    s.read("rmse_k", c.train.rmse_k);
    s.read("checkpoint_every", c.train.checkpoint_every);
    s.read("record_wall_time", c.train.record_wall_time);
    s.finish();
  }
  if (root.has("rollout")) {
    Section s(j.at("rollout"), "rollout");
    s.read("split", c.rollout.split);
    s.read("trajectories", c.rollout.trajectories);
    s.read("rmse_k", c.rollout.rmse_k);
    s.finish();
  }
  if (root.has("ablation")) {
    Section s(j.at("ablation"), "ablation");
    s.read("seeds", c.ablation.seeds);
    s.read("segment_rates", c.ablation.segment_rates);
    s.read("fixed_lambda", c.ablation.fixed_lambda);
    s.read("steps", c.ablation.steps);
    s.finish();
  }
  root.finish();
  c.set_seed(c.seed);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
  json model_json = model_config_to_json(model);
  model_json.erase("node_inputs");
  model_json.erase("edge_inputs");
  model_json.erase("outputs");
  model_json["kind"] = model_kind;
  return {
      {"seed", seed},
      {"data_dir", data_dir.string()},
      {"cache_dir", cache_dir.string()},
      {"out_dir", out_dir.string()},
      {"checkpoint", checkpoint ? json(checkpoint->string()) : json(nullptr)},
      {"task",
       {{"kind", to_string(task.kind)},
        {"train_trajectories", task.train_trajectories},
        {"valid_trajectories", task.valid_trajectories},
        {"heat",
         {{"nx", task.heat.nx},
          {"ny", task.heat.ny},
          {"spacing", task.heat.spacing},
          {"kappa", task.heat.kappa},
          {"dt", task.heat.dt},
          {"num_steps", task.heat.num_steps},
          {"bumps", task.heat.bumps}}},
        {"spring",
         {{"num_nodes", task.spring.num_nodes},
          {"dim", task.spring.dim},
          {"stiffness", task.spring.stiffness},
          {"mass", task.spring.mass},
          {"rest_length", task.spring.rest_length},
          {"dt", task.spring.dt},
          {"num_steps", task.spring.num_steps},
          {"amplitude", task.spring.amplitude},
          {"substeps", task.spring.substeps}}}}},
      {"model", model_json},
      {"loss", gfl_config_to_json(gfl, train.loss)},
      {"train",
       {{"steps", train.steps},
        {"batch_size", train.batch_size},
        {"lr_init", train.lr_init},
        {"lr_final", train.lr_final},
        {"decay_fraction", train.decay_fraction},
        {"noise_rel", train.noise_rel},
        {"clip_norm", train.clip_norm},
        {"eval_every", train.eval_every},
        {"eval_trajectories", train.eval_trajectories},
        {"rmse_k", train.rmse_k},
        {"checkpoint_every", train.checkpoint_every},
        {"record_wall_time", train.record_wall_time}}},
      {"rollout", {{"split", rollout.split}, {"trajectories", rollout.trajectories}, {"rmse_k", rollout.rmse_k}}},
      {"ablation",
       {{"seeds", ablation.seeds},
        {"segment_rates", ablation.segment_rates},
        {"fixed_lambda", ablation.fixed_lambda},
        {"steps", ablation.steps}}},
  };
}

void RunConfig::validate() const {
  try {
    ModelConfig probe = model;
    if (probe.node_inputs == 0) probe.node_inputs = 1;
    if (probe.edge_inputs == 0) probe.edge_inputs = 1;
    if (probe.outputs == 0) probe.outputs = 1;
    probe.validate();
    gfl.validate();
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (model_kind != "mpt" && model_kind != "oracle") {
    throw ConfigError("model.kind must be 'mpt' or 'oracle', got '" + model_kind + "'");
  }
  if (task.train_trajectories == 0) throw ConfigError("task.train_trajectories must be positive");
  if (rollout.split != "train" && rollout.split != "valid") {
    throw ConfigError("rollout.split must be 'train' or 'valid'");
  }
  if (rollout.rmse_k == 0) throw ConfigError("rollout.rmse_k must be positive");
  if (ablation.seeds.empty()) throw ConfigError("ablation.seeds must not be empty");
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
}

}  // namespace mpt
