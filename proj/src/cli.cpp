#include "mpt/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "mpt/ablation.hpp"
#include "mpt/binio.hpp"
#include "mpt/error.hpp"
#include "mpt/spectral.hpp"

namespace mpt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kSplits[] = {"train", "valid"};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

std::uint64_t trajectory_seed(std::uint64_t seed, std::size_t split, std::size_t i) {
  return seed * 1000003ULL + split * 100000ULL + i;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os = binio::open_out(path);
  os << j.dump(2) << '\n';
}

json read_json(const fs::path& path, const std::string& remedy) {
  if (!fs::exists(path)) throw IoError(path.string() + " not found; " + remedy);
  std::ifstream is = binio::open_in(path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

json read_manifest(const RunConfig& cfg) {
  return read_json(cfg.data_dir / "manifest.json", "run the gen command first");
}

std::vector<std::string> manifest_ids(const json& manifest, const std::string& split) {
  std::vector<std::string> ids;
  try {
    for (const auto& e : manifest.at("splits").at(split)) ids.push_back(e.at("id").get<std::string>());
  } catch (const json::exception& e) {
    throw ParseError("dataset manifest: " + std::string(e.what()));
  }
  return ids;
}

std::vector<Trajectory> load_split(const RunConfig& cfg, const json& manifest, const std::string& split) {
  std::vector<Trajectory> out;
  for (const auto& id : manifest_ids(manifest, split)) out.push_back(load_trajectory(cfg.data_dir / split / (id + ".traj")));
  return out;
}

int cmd_gen(const RunConfig& cfg, bool force, std::ostream& out) {
  if (fs::exists(cfg.data_dir) && !fs::is_empty(cfg.data_dir)) {
    if (!force) throw UsageError("output directory " + cfg.data_dir.string() + " is not empty; pass --force to overwrite");
    fs::remove_all(cfg.data_dir);
  }
  const std::size_t counts[] = {cfg.task.train_trajectories, cfg.task.valid_trajectories};
  json splits = json::object();
  for (std::size_t s = 0; s < 2; ++s) {
    json entries = json::array();
    for (std::size_t i = 0; i < counts[s]; ++i) {
      const std::uint64_t seed = trajectory_seed(cfg.seed, s, i);
      Trajectory t = cfg.task.kind == SystemKind::kEulerian ? gen_heat_diffusion(cfg.task.heat, seed)
                                                             : gen_spring_chain(cfg.task.spring, seed);
      std::ostringstream id;
      id << (cfg.task.kind == SystemKind::kEulerian ? "heat" : "spring") << "_s" << cfg.seed << '_' << kSplits[s]
         << '_' << std::setw(4) << std::setfill('0') << i;
      t.id = id.str();
      save_trajectory(t, cfg.data_dir / kSplits[s] / (t.id + ".traj"));
      entries.push_back({{"id", t.id}, {"seed", seed}, {"file", std::string(kSplits[s]) + "/" + t.id + ".traj"}});
    }
    splits[kSplits[s]] = entries;
  }
  const json task = cfg.to_json().at("task");
  write_json(cfg.data_dir / "manifest.json",
             {{"format", "mpt-dataset"}, {"version", 1}, {"seed", cfg.seed}, {"task", task}, {"splits", splits}});
  out << "wrote " << counts[0] << " train and " << counts[1] << " valid trajectories to " << cfg.data_dir.string()
      << '\n';
  return 0;
}

int cmd_preprocess(const RunConfig& cfg, std::ostream& out) {
  const json manifest = read_manifest(cfg);
  const SpectralCache cache(effective_cache_dir(cfg));
  std::size_t built = 0, skipped = 0;
  for (const char* split : kSplits) {
    for (const auto& id : manifest_ids(manifest, split)) {
      const Trajectory t = load_trajectory(cfg.data_dir / split / (id + ".traj"));
      const Eigen::MatrixXd lap = build_laplacian(t.graph);
      if (cache.contains(id)) {
        try {
          const SpectralBasis b = cache.load(id);
          if (b.size() == t.num_nodes()) {
            out << id << " cached residual=" << fmt(reconstruction_residual(lap, b)) << '\n';
            ++skipped;
            continue;
          }
        } catch (const Error&) {
          // unreadable entry: rebuild below
        }
      }
      const SpectralBasis b = eigendecompose(lap);
      cache.store(id, b);
      out << id << " residual=" << fmt(reconstruction_residual(lap, b)) << '\n';
      ++built;
    }
  }
  out << "built " << built << ", reused " << skipped << " entries in " << cache.dir().string() << '\n';
  return 0;
}

TrainSetup setup_from(const RunConfig& cfg) { return {cfg.model, cfg.gfl, cfg.train}; }

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const Dataset data = load_dataset(cfg, cfg.train.loss != LossKind::kMse);
  TrainOptions opts;
  opts.out_dir = cfg.out_dir;
  if (cfg.checkpoint) opts.resume_from = *cfg.checkpoint;
  fs::create_directories(cfg.out_dir);
  write_json(cfg.out_dir / "config.json", cfg.to_json());
  const TrainResult r = train(data, setup_from(cfg), opts);
  json summary = {{"steps", cfg.train.steps}, {"clipped_updates", r.clipped_updates}};
  if (r.final_eval) {
    summary["rmse1"] = r.final_eval->rmse1;
    summary["rmseK"] = r.final_eval->rmse_k;
    summary["rmseAll"] = r.final_eval->rmse_all;
  }
  if (r.final_lambda) summary["lambda"] = *r.final_lambda;
  write_json(cfg.out_dir / "summary.json", summary);
  out << "trained " << cfg.train.steps << " steps";
  if (r.final_eval) out << "; rmseAll=" << fmt(r.final_eval->rmse_all);
  if (r.clipped_updates) out << "; gradient clipping active on " << r.clipped_updates << " updates";
  out << '\n';
  return 0;
}

struct LoadedPredictor {
  std::unique_ptr<MessagePassingTransformer> model;
  Normalizers norm;
  std::unique_ptr<Predictor> predictor;
};

LoadedPredictor load_predictor(const RunConfig& cfg) {
  LoadedPredictor p;
  if (cfg.model_kind == "oracle") {
    p.predictor = std::make_unique<OraclePredictor>();
    return p;
  }
  const fs::path dir = cfg.checkpoint ? *cfg.checkpoint : cfg.out_dir / "checkpoint";
  const Checkpoint ckpt = load_checkpoint(dir);
  p.model = std::make_unique<MessagePassingTransformer>(model_from_checkpoint(ckpt));
  p.norm = ckpt.normalizers;
  p.predictor = std::make_unique<ModelPredictor>(*p.model, p.norm);
  return p;
}

std::vector<Trajectory> eval_split(const RunConfig& cfg) {
  std::vector<Trajectory> trajs = load_split(cfg, read_manifest(cfg), cfg.rollout.split);
  if (trajs.empty()) throw ValidationError("split '" + cfg.rollout.split + "' has no trajectories");
  if (cfg.rollout.trajectories > 0 && trajs.size() > cfg.rollout.trajectories) trajs.resize(cfg.rollout.trajectories);
  return trajs;
}

int cmd_rollout(const RunConfig& cfg, std::ostream& out) {
  const LoadedPredictor p = load_predictor(cfg);
  const fs::path dir = cfg.out_dir / "rollout";
  std::ofstream summary = binio::open_out(dir / "summary.csv");
  summary << "id,rmse1,rmseK,rmseAll\n";
  for (const Trajectory& t : eval_split(cfg)) {
    const std::size_t steps = t.num_steps() - 2;
    const auto pred = rollout(t, *p.predictor, 1, steps);
    const std::vector<Eigen::MatrixXd> truth(t.states.begin() + 2, t.states.end());

    Trajectory predicted = t;
    predicted.id = t.id + "_pred";
    predicted.states.resize(2);
    predicted.states.insert(predicted.states.end(), pred.begin(), pred.end());
    predicted.metadata["source"] = t.id;
    predicted.metadata["rollout_t0"] = 1;
    save_trajectory(predicted, dir / (predicted.id + ".traj"));

    std::ofstream curve = binio::open_out(dir / (t.id + "_rmse.csv"));
    curve << "step,rmse\n";
    for (std::size_t i = 0; i < steps; ++i) {
      curve << (i + 1) << ',' << fmt(std::sqrt((pred[i] - truth[i]).squaredNorm() / static_cast<double>(truth[i].size())))
            << '\n';
    }
    const double r1 = rmse_k(pred, truth, 1), rk = rmse_k(pred, truth, std::min(cfg.rollout.rmse_k, steps)),
                 ra = rmse_k(pred, truth, steps);
    summary << t.id << ',' << fmt(r1) << ',' << fmt(rk) << ',' << fmt(ra) << '\n';
    out << t.id << " rmse1=" << fmt(r1) << " rmseK=" << fmt(rk) << " rmseAll=" << fmt(ra) << '\n';
  }
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const LoadedPredictor p = load_predictor(cfg);
  const RolloutMetrics m = evaluate(*p.predictor, eval_split(cfg), cfg.rollout.rmse_k);
  write_json(cfg.out_dir / "eval.json", {{"split", cfg.rollout.split},
                                         {"rmse_k", cfg.rollout.rmse_k},
                                         {"rmse1", m.rmse1},
                                         {"rmseK", m.rmse_k},
                                         {"rmseAll", m.rmse_all}});
  out << "rmse1=" << fmt(m.rmse1) << " rmseK=" << fmt(m.rmse_k) << " rmseAll=" << fmt(m.rmse_all) << '\n';
  return 0;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  const Dataset data = load_dataset(cfg, true);
  const json report = run_ablation(data, setup_from(cfg), cfg.ablation, [&](const std::string& msg) {
    out << "ablation: " << msg << '\n' << std::flush;
  });
  write_json(cfg.out_dir / "ablation.json", report);
  std::ofstream csv = binio::open_out(cfg.out_dir / "ablation_grid.csv");
  csv << "metric,neither,hpa_only,gfl_only,hpa_gfl\n";
  for (const char* metric : {"rmse1", "rmseK", "rmseAll"}) {
    csv << metric;
    for (const char* col : {"neither", "hpa_only", "gfl_only", "hpa_gfl"}) {
      const json& v = report.at("grid").at("rows").at(metric).at(col);
      csv << ',' << (v.is_null() ? "" : fmt(v.get<double>()));
    }
    csv << '\n';
  }
  out << "wrote " << (cfg.out_dir / "ablation.json").string() << '\n';
  return report.at("failures").empty() ? 0 : 1;
}

}  // namespace

fs::path effective_cache_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv("MPT_CACHE_DIR"); env != nullptr && *env != '\0') return env;
  return cfg.cache_dir;
}

Dataset load_dataset(const RunConfig& cfg, bool with_bases) {
  const json manifest = read_manifest(cfg);
  Dataset d;
  d.train = load_split(cfg, manifest, "train");
  d.valid = load_split(cfg, manifest, "valid");
  if (d.train.empty()) throw ValidationError("dataset has no training trajectories");
  if (with_bases) {
    const SpectralCache cache(effective_cache_dir(cfg));
    for (const auto& t : d.train) {
      SpectralBasis b = cache.load(t.id);
      if (b.size() != t.num_nodes()) {
        throw CacheMissError("cached basis for '" + t.id + "' has the wrong size; rerun the preprocess command");
      }
      d.train_bases.push_back(std::move(b));
    }
  }
  return d;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Message passing transformer with graph Fourier loss"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string checkpoint;
  bool force = false;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "Override the configured seed");
  app.add_option("--out", out_dir, "Output directory (dataset directory for gen)");
  app.add_option("--checkpoint", checkpoint, "Checkpoint directory to resume or evaluate");
  app.add_flag("--force", force, "Overwrite a non-empty output directory");
  const char* const names[] = {"gen", "preprocess", "train", "rollout", "eval", "ablate"};
  const char* const help[] = {"Generate synthetic trajectories",
                              "Cache Laplacian eigenbases",
                              "Train a model",
                              "Roll out a trained model and write predicted trajectories",
                              "Report rollout RMSE of a trained model",
                              "Run the ablation grid"};
  for (std::size_t i = 0; i < 6; ++i) app.add_subcommand(names[i], help[i])->fallthrough();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
      throw UsageError(e.what());
    }
    RunConfig cfg = config_path.empty() ? RunConfig::from_json(json::object()) : RunConfig::load(config_path);
    if (seed) cfg.set_seed(*seed);
    if (!checkpoint.empty()) cfg.checkpoint = fs::path(checkpoint);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (!out_dir.empty()) (cmd == "gen" ? cfg.data_dir : cfg.out_dir) = out_dir;

    if (cmd == "gen") return cmd_gen(cfg, force, out);
    if (cmd == "preprocess") return cmd_preprocess(cfg, out);
    if (cmd != "ablate" && cmd != "train" && cmd != "rollout" && cmd != "eval") throw UsageError("unknown command");
    if ((cmd == "train" || cmd == "ablate") && !force && cfg.checkpoint == std::nullopt && fs::exists(cfg.out_dir) &&
        !fs::is_empty(cfg.out_dir)) {
      throw UsageError("output directory " + cfg.out_dir.string() + " is not empty; pass --force to overwrite");
    }
    if ((cmd == "train" || cmd == "ablate") && force && !cfg.checkpoint) fs::remove_all(cfg.out_dir);
    if (cmd == "train") return cmd_train(cfg, out);
    if (cmd == "rollout") return cmd_rollout(cfg, out);
    if (cmd == "eval") return cmd_eval(cfg, out);
    return cmd_ablate(cfg, out);
  } catch (const Error& e) {
    err << "error[" << e.category() << "]: " << one_line(e.what()) << '\n';
    // Bad flags and bad config values are both caller mistakes.
    return e.category() == "usage" || e.category() == "config" ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error[internal]: " << one_line(e.what()) << '\n';
    return 1;
  }
}

}  // namespace mpt
