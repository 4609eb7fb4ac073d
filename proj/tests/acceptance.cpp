// Acceptance checks. Prints one PASS/FAIL line per criterion; `--only N`
// runs a single criterion. Exit status is nonzero if any criterion fails.

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "mpt/ablation.hpp"
#include "mpt/cli.hpp"
#include "mpt/gfl.hpp"
#include "mpt/graph.hpp"
#include "mpt/model.hpp"
#include "mpt/spectral.hpp"
#include "mpt/trainer.hpp"
#include "testing.hpp"

using namespace mpt;
using mpt::testing::gradcheck;
using mpt::testing::probe_loss;
using mpt::testing::randn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

Graph random_graph(std::size_t n, double p, Rng& rng) {
  Graph g{n, {}};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.uniform() < p) g.edges.emplace_back(i, j);
  return g;
}

// ---------------------------------------------------------------------------

Outcome spectral_identities() {
  const auto t0 = Clock::now();
  Rng rng(1001);
  double worst_res = 0.0, worst_orth = 0.0, worst_trip = 0.0, worst_parseval = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(63);
    const Eigen::MatrixXd lap = build_laplacian(random_graph(n, 0.05 + 0.45 * rng.uniform(), rng));
    const SpectralBasis b = eigendecompose(lap);
    worst_res = std::max(worst_res, reconstruction_residual(lap, b) / std::max(lap.norm(), 1e-300));
    worst_orth = std::max(worst_orth, orthonormality_error(b));
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const Eigen::MatrixXd xh = gft(b, x);
    worst_trip = std::max(worst_trip, (igft(b, xh) - x).cwiseAbs().maxCoeff());
    worst_parseval = std::max(worst_parseval, std::abs(xh.squaredNorm() - x.squaredNorm()) / x.squaredNorm());
  }
  const SpectralBasis p3 = eigendecompose(build_laplacian(path_graph(3)));
  const double p3_err = std::max({std::abs(p3.values(0)), std::abs(p3.values(1) - 1.0), std::abs(p3.values(2) - 3.0)});
  const double secs = seconds_since(t0);
  const bool pass = worst_res < 1e-8 && worst_orth < 1e-10 && worst_trip < 1e-10 && worst_parseval < 1e-10 &&
                    p3_err < 1e-9 && secs < 30.0;
  return {pass, "residual/|L|=" + fmt(worst_res) + " orth=" + fmt(worst_orth) + " roundtrip=" + fmt(worst_trip) +
                    " parseval=" + fmt(worst_parseval) + " P3=" + fmt(p3_err) + " time=" + fmt(secs) + "s"};
}

Outcome score_identity() {
  Rng rng(1002);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = 1 + rng.index(4), s = 1 + rng.index(8), d = 1 + rng.index(32);
    const Tensor q = randn({b, d}, rng), k = randn({b, s, d}, rng);
    const Tensor logits = sum(hpa_scores(q, k), 2);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < s; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * k[(i * s + j) * d + c];
        worst = std::max(worst, std::abs(logits[i * s + j] - dot / std::sqrt(static_cast<double>(d))));
      }
  }
  return {worst < 1e-12, "max |sum_d S - QK^T/sqrt(d)| = " + fmt(worst) + " over 1000 draws"};
}

Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  double ops = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(2000 + seed);
    Tensor a = randn({3, 4}, rng, true), b = randn({3, 4}, rng, true);
    Tensor row = randn({1, 4}, rng, true), col = randn({3, 1}, rng, true);
    Tensor c3 = randn({2, 3, 4}, rng, true);
    Tensor m = randn({4, 5}, rng, true);
    Tensor nz = randn({3, 4}, rng, true), pos = randn({3, 4}, rng, true);
    for (double& x : nz.mutable_data()) x += x >= 0 ? 0.2 : -0.2;
    for (double& x : pos.mutable_data()) x = 0.5 + std::abs(x);
    Tensor gain = randn({4}, rng, true), bias = randn({4}, rng, true);
    const Tensor w34 = randn({3, 4}, rng), w234 = randn({2, 3, 4}, rng), w35 = randn({3, 5}, rng);
    const Tensor w24 = randn({2, 4}, rng), w44 = randn({4, 4}, rng), w54 = randn({5, 4}, rng);
    const Tensor w231 = randn({2, 3, 1}, rng), w232 = randn({2, 3, 2}, rng), w26 = randn({2, 6}, rng);
    const Tensor w38 = randn({3, 8}, rng), w44r = randn({4, 4}, rng);
    const std::vector<std::pair<std::function<Tensor()>, std::vector<Tensor>>> cases = {
        {[&] { return probe_loss(add(add(a, row), col), w34); }, {a, row, col}},
        {[&] { return probe_loss(sub(row, a), w34); }, {a, row}},
        {[&] { return probe_loss(hadamard(c3, row), w234); }, {c3, row}},
        {[&] { return probe_loss(div(a, nz), w34); }, {a, nz}},
        {[&] { return probe_loss(add_scalar(scale(a, -1.7), 0.3), w34); }, {a}},
        {[&] { return probe_loss(relu(nz), w34); }, {nz}},
        {[&] { return probe_loss(square(a), w34); }, {a}},
        {[&] { return probe_loss(sqrt(pos), w34); }, {pos}},
        {[&] { return probe_loss(matmul(a, m), w35); }, {a, m}},
        {[&] { return add(sum(hadamard(a, w34)), mean(square(b))); }, {a, b}},
        {[&] { return probe_loss(sum(c3, 1), w24); }, {c3}},
        {[&] { return probe_loss(sum(c3, 2, true), w231); }, {c3}},
        {[&] { return probe_loss(softmax_axis(c3, 2), w234); }, {c3}},
        {[&] { return probe_loss(softmax_axis(c3, 1), w234); }, {c3}},
        {[&] { return probe_loss(reshape(a, {2, 6}), w26); }, {a}},
        {[&] { return probe_loss(concat({a, b}, 1), w38); }, {a, b}},
        {[&] { return probe_loss(concat({a, row}, 0), w44r); }, {a, row}},
        {[&] { return probe_loss(narrow(c3, 2, 1, 2), w232); }, {c3}},
        {[&] { return probe_loss(scatter_add_rows(a, {1, 1, 4}, 5), w54); }, {a}},
        {[&] { return probe_loss(gather_rows(a, {2, 0, 2, 1}), w44); }, {a}},
        {[&] { return probe_loss(layernorm(a, gain, bias), w34); }, {a, gain, bias}},
    };
    for (const auto& [loss, inputs] : cases) ops = std::max(ops, gradcheck(loss, inputs).max_rel);
  }

  // Full model, dropout off, both attention mechanisms.
  double model_err = 0.0;
  std::size_t model_checked = 0;
  for (Mechanism mech : {Mechanism::kHpa, Mechanism::kDpa}) {
    Rng rng(2100);
    ModelConfig cfg;
    cfg.node_inputs = 4;
    cfg.edge_inputs = 3;
    cfg.outputs = 2;
    cfg.latent = 8;
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.mp_steps = 3;
    cfg.dropout = 0.0;
    cfg.mechanism = mech;
    const MessagePassingTransformer model(cfg, 17);
    const Graph g = grid_mesh(3, 2);
    const DirectedEdges edges = directed_edges(g);
    GraphInput in;
    in.num_nodes = g.num_nodes;
    in.edges = &edges;
    in.node_features = randn({g.num_nodes, 4}, rng);
    in.edge_features = randn({edges.size(), 3}, rng);
    const Tensor w = randn({g.num_nodes, 2}, rng);
    std::vector<Tensor> params;
    for (const auto& p : model.params().named()) params.push_back(p.tensor);
    const auto r = gradcheck([&] { return probe_loss(model.forward(in, ForwardContext{}), w); }, params, 1e-6, 150, &rng);
    model_err = std::max(model_err, r.max_rel);
    model_checked += r.checked;
  }

  // Both GFL variants through the prediction and a learnable lambda.
  double gfl_err = 0.0;
  const SpectralBasis basis = eigendecompose(build_laplacian(grid_mesh(4, 4)));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(2200 + seed);
    Tensor p = randn({16, 2}, rng, true);
    const Tensor y = randn({16, 2}, rng);
    Tensor lambda = Tensor::full({1}, 0.5 + rng.uniform(), true);
    GflConfig cfg;
    gfl_err = std::max(gfl_err, gradcheck([&] { return gfl_standard(p, y, basis, cfg, lambda); }, {p, lambda}).max_rel);
    gfl_err = std::max(gfl_err, gradcheck([&] { return gfl_direct(p, y, basis, cfg, lambda); }, {p, lambda}).max_rel);
  }
  const double secs = seconds_since(t0);
  const bool pass = ops < 1e-5 && model_err < 1e-4 && model_checked >= 100 && gfl_err < 1e-5 && secs < 300.0;
  return {pass, "ops=" + fmt(ops) + " model=" + fmt(model_err) + " (" + std::to_string(model_checked) +
                    " params) gfl=" + fmt(gfl_err) + " time=" + fmt(secs) + "s"};
}

Outcome gfl_consistency() {
  Rng rng(1004);
  const SpectralBasis basis = eigendecompose(build_laplacian(grid_mesh(5, 4)));
  GflConfig cfg;
  cfg.forced_alpha = 1.0;
  const Tensor lambda = Tensor::full({1}, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor p = randn({20, 3}, rng), y = randn({20, 3}, rng);
    const double mse = time_mse(p, y).item();
    worst = std::max(worst, std::abs(gfl_standard(p, y, basis, cfg, lambda).item() - mse));
    worst = std::max(worst, std::abs(gfl_direct(p, y, basis, cfg, lambda).item() - mse));
  }
  const double alpha = adjustment_factor(EnergySplit{{4.0, 1.0}, {0}, {1}}, 1.0, 1e-8);
  return {worst < 1e-9 && std::abs(alpha - 0.5) < 1e-8,
          "max |GFL(alpha=1) - MSE| = " + fmt(worst) + ", worked alpha = " + std::to_string(alpha)};
}

Outcome padding_neutrality() {
  Rng rng(1005);
  const ModelConfig cfg;  // latent 128, 4 heads, M = 15
  const std::size_t d = cfg.head_dim(), max_tokens = cfg.max_tokens(), b = 3;
  const Tensor flat = randn({max_tokens * d, d}, rng);
  const Tensor q = randn({b, d}, rng);
  double worst = 0.0;
  for (std::size_t k = 0; k < cfg.mp_steps; ++k) {
    const std::size_t s = 2 * (k + 1);
    const Tensor kk = randn({b, s, d}, rng), v = randn({b, s, d}, rng);
    const Tensor out = hpa(q, kk, v, flat, max_tokens);
    if (s == max_tokens) continue;
    const Tensor z = Tensor::zeros({b, max_tokens - s, d});
    const Tensor padded = hpa(q, concat({kk, z}, 1), concat({v, z}, 1), flat, max_tokens);
    for (std::size_t i = 0; i < out.numel(); ++i) worst = std::max(worst, std::abs(out[i] - padded[i]));
  }
  return {worst < 1e-12, "max deviation over k in [0, " + std::to_string(cfg.mp_steps) + ") = " + fmt(worst)};
}

// ---------------------------------------------------------------------------
// Training-based criteria share the heat-diffusion desk setup.

Dataset heat_dataset(std::size_t train, std::size_t valid) {
  Dataset d;
  const HeatSpec spec;  // 10 x 10 grid, 50 steps
  for (std::size_t i = 0; i < train + valid; ++i) {
    Trajectory t = gen_heat_diffusion(spec, 7000 + i);
    t.id = "heat_" + std::to_string(i);
    if (i < train) {
      d.train_bases.push_back(eigendecompose(build_laplacian(t.graph)));
      d.train.push_back(std::move(t));
    } else {
      d.valid.push_back(std::move(t));
    }
  }
  return d;
}

TrainSetup desk_setup(std::uint64_t seed, std::size_t steps) {
  TrainSetup s;
  s.model.latent = 32;
  s.model.hidden = 32;
  s.model.mp_steps = 5;
  s.model.heads = 4;
  s.train.steps = steps;
  s.train.seed = seed;
  s.train.eval_every = 0;
  return s;
}

double untrained_rmse_all(const Dataset& data, const TrainSetup& s) {
  const MessagePassingTransformer model(resolve_model_config(data, s.model), s.train.seed);
  const Normalizers norm = Normalizers::fit(data.train);
  return evaluate(ModelPredictor(model, norm), data.valid, s.train.rmse_k).rmse_all;
}

Outcome learning_capacity() {
  const Dataset data = heat_dataset(20, 4);
  std::size_t ok = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TrainSetup s = desk_setup(seed, 20000);
    const double before = untrained_rmse_all(data, s);
    const auto t0 = Clock::now();
    const TrainResult r = train(data, s);
    const double secs = seconds_since(t0);
    const double after = r.final_eval->rmse_all;
    const bool good = secs < 1800.0 && after * 10.0 <= before;
    ok += good;
    detail += " seed" + std::to_string(seed) + ": " + fmt(before) + "->" + fmt(after) + " (" + fmt(before / after) +
              "x, " + fmt(secs) + "s)";
    std::cout << "  criterion 6 seed " << seed << ":" << detail.substr(detail.rfind(':') + 1) << std::endl;
  }
  return {ok == 3, "RMSE-all untrained->trained:" + detail};
}

Outcome lambda_phenomenon() {
  const Dataset data = heat_dataset(20, 4);
  std::size_t standard_ok = 0, direct_ok = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    double lam[2] = {0.0, 0.0};
    for (int v = 0; v < 2; ++v) {
      TrainSetup s = desk_setup(seed, 20000);
      s.train.loss = v == 0 ? LossKind::kGflStandard : LossKind::kGflDirect;
      s.train.eval_trajectories = 1;
      lam[v] = *train(data, s).final_lambda;
    }
    standard_ok += std::abs(lam[0]) > 0.1;
    direct_ok += std::abs(lam[1]) < 0.1;
    detail += " seed" + std::to_string(seed) + ": standard=" + fmt(lam[0]) + " direct=" + fmt(lam[1]);
    std::cout << "  criterion 7 seed " << seed << ": standard lambda=" << lam[0] << " direct lambda=" << lam[1]
              << std::endl;
  }
  return {standard_ok >= 2 && direct_ok >= 2, "final lambda:" + detail + " (standard |l|>0.1 in " +
                                                   std::to_string(standard_ok) + "/3, direct |l|<0.1 in " +
                                                   std::to_string(direct_ok) + "/3)"};
}

Outcome ablation_grid() {
  const Dataset data = heat_dataset(20, 4);
  AblationConfig cfg;  // seeds {0,1,2}, s_r {0.3,0.5,0.7}
  cfg.steps = 400;
  const TrainSetup base = desk_setup(0, cfg.steps);
  const auto report = run_ablation(data, base, cfg, [](const std::string& m) { std::cout << "  " << m << std::endl; });
  bool shape = report.at("failures").empty();
  for (const char* metric : {"rmse1", "rmseK", "rmseAll"})
    for (const char* col : {"neither", "hpa_only", "gfl_only", "hpa_gfl"})
      shape = shape && report.at("grid").at("rows").at(metric).at(col).is_number();
  for (const auto& c : report.at("grid").at("cells")) shape = shape && c.at("seeds").size() == 3;
  shape = shape && report.at("attention_comparison").contains("dpa") && report.at("attention_comparison").contains("hpa");
  shape = shape && report.at("lambda_mode_comparison").contains("learnable") &&
          report.at("lambda_mode_comparison").contains("fixed");
  const auto& sweep = report.at("segment_rate_sweep");
  shape = shape && sweep.at("rows").size() == 3 && sweep.at("rmse_all_spread").is_number();
  std::cout << "  grid rmseAll: " << report.at("grid").at("rows").at("rmseAll").dump() << std::endl;
  std::cout << "  s_r sweep RMSE-all spread: " << sweep.at("rmse_all_spread").dump()
            << " (relative " << sweep.at("rmse_all_relative_spread").dump() << ")" << std::endl;
  const auto& soft = report.at("soft_check");
  std::cout << "  soft check (HPA+GFL <= DPA+MSE): " << soft.at("holds").dump() << " ("
            << soft.at("hpa_gfl_rmse_all").dump() << " vs " << soft.at("dpa_mse_rmse_all").dump() << ")" << std::endl;
  return {shape, "grid complete over 3 seeds; s_r spread=" + sweep.at("rmse_all_spread").dump() +
                     "; soft check holds=" + soft.at("holds").dump()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mpt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, std::cerr);
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "mpt_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream os(root / "config.json");
    os << R"({"seed": 11, "data_dir": ")" << (root / "data").string() << R"(", "cache_dir": ")"
       << (root / "cache").string() << R"(",
  "task": {"train_trajectories": 4, "valid_trajectories": 2, "heat": {"nx": 6, "ny": 5, "num_steps": 20}},
  "model": {"latent": 16, "hidden": 16, "mp_steps": 3, "heads": 2},
  "train": {"steps": 60, "eval_every": 20}})";
  }
  const std::string cfg = (root / "config.json").string();
  std::vector<std::string> diffs;
  auto same = [&](const std::string& what, const fs::path& a, const fs::path& b) {
    if (!fs::exists(a) || slurp(a) != slurp(b)) diffs.push_back(what);
  };
  bool ok = cli({"gen", "--config", cfg}) == 0;
  const std::string traj = slurp(root / "data/train/heat_s11_train_0003.traj");
  const std::string manifest = slurp(root / "data/manifest.json");
  ok = ok && cli({"gen", "--config", cfg, "--force"}) == 0;
  if (traj != slurp(root / "data/train/heat_s11_train_0003.traj") || manifest != slurp(root / "data/manifest.json")) {
    diffs.push_back("gen");
  }
  ok = ok && cli({"preprocess", "--config", cfg}) == 0;
  for (const char* run : {"a", "b"}) {
    const std::string out = (root / run).string();
    ok = ok && cli({"train", "--config", cfg, "--out", out}) == 0;
    ok = ok && cli({"rollout", "--config", cfg, "--out", out}) == 0;
    ok = ok && cli({"eval", "--config", cfg, "--out", out}) == 0;
  }
  same("train metrics.csv", root / "a/metrics.csv", root / "b/metrics.csv");
  same("checkpoint params", root / "a/checkpoint/params.bin", root / "b/checkpoint/params.bin");
  same("rollout summary.csv", root / "a/rollout/summary.csv", root / "b/rollout/summary.csv");
  same("eval.json", root / "a/eval.json", root / "b/eval.json");
  const std::string metrics = slurp(root / "a/metrics.csv");
  const auto rows = static_cast<std::size_t>(std::count(metrics.begin(), metrics.end(), '\n'));
  fs::remove_all(root);
  std::string detail = ok ? "gen, train, rollout and eval outputs byte-identical on repeat (" +
                                std::to_string(rows - 1) + " metric rows)"
                          : "a command failed";
  if (!diffs.empty()) {
    detail = "differs:";
    for (const auto& d : diffs) detail += " " + d;
  }
  return {ok && diffs.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: mpt_acceptance [--only N]\n";
      return 2;
    }
  }
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria = {
      {"spectral identities", spectral_identities},
      {"HPA/DPA score identity", score_identity},
      {"gradient integrity", gradient_integrity},
      {"GFL consistency", gfl_consistency},
      {"padding neutrality", padding_neutrality},
      {"learning capacity", learning_capacity},
      {"learnable lambda phenomenon", lambda_phenomenon},
      {"ablation harness", ablation_grid},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (only != 0 && only != n) continue;
    Outcome o{false, ""};
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
