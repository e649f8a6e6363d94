#include "rkbf/cli_app.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "rkbf/eval.hpp"

namespace rkbf {

namespace {

using nlohmann::json;

// Configuration problems (bad flags, unreadable or malformed files,
// invalid model) exit 2; failures during the run exit 3.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object: " + path);
  return j;
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> known,
                         const std::string& scope) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("unknown config field '" + scope + it.key() + "'");
  }
}

Eigen::VectorXd vector_from(const json& j, const std::string& field) {
  if (j.is_number()) return Eigen::VectorXd::Constant(1, j.get<double>());
  if (!j.is_array()) throw ConfigError("field '" + field + "' must be a number or array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError("field '" + field + "' has a non-numeric entry");
    v(i) = j[i].get<double>();
  }
  return v;
}

Eigen::MatrixXd matrix_from(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw ConfigError("field '" + field + "' must be an array of rows");
  Eigen::MatrixXd a(j.size(), j[0].size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != j[0].size()) throw ConfigError("field '" + field + "' has ragged rows");
    for (std::size_t c = 0; c < j[i].size(); ++c) a(i, c) = j[i][c].get<double>();
  }
  return a;
}

ThetaPolicy policy_from(const json& j, const ModelSpec& spec, const std::string& scope) {
  if (!j.is_object()) throw ConfigError("'" + scope + "' must be an object");
  reject_unknown_keys(j, {"type", "value", "values", "scale", "clamp"}, scope + ".");
  if (!j.contains("type")) throw ConfigError("missing field '" + scope + ".type'");
  const std::string type = j["type"].get<std::string>();
  const bool clamp = j.value("clamp", false);
  if (type == "constant") {
    if (!j.contains("value")) throw ConfigError("missing field '" + scope + ".value'");
    return ThetaPolicy::constant(vector_from(j["value"], scope + ".value"), clamp);
  }
  if (type == "table") {
    if (!j.contains("values")) throw ConfigError("missing field '" + scope + ".values'");
    return ThetaPolicy::table(matrix_from(j["values"], scope + ".values"), clamp);
  }
  if (type == "sign_feedback") {
    const double scale = j.value("scale", spec.mu.size() ? spec.mu.maxCoeff() : 0.0);
    return ThetaPolicy::feedback(
        [scale](int, double, const Eigen::Ref<const Eigen::MatrixXd>& m_history) {
          const Eigen::VectorXd last = m_history.col(m_history.cols() - 1);
          Eigen::VectorXd out(last.size());
          for (int i = 0; i < last.size(); ++i)
            out(i) = last(i) > 0 ? scale : (last(i) < 0 ? -scale : 0.0);
          return out;
        },
        clamp);
  }
  throw ConfigError("'" + scope + ".type' must be constant, table or sign_feedback");
}

EstimatorSpec estimator_from(const json& j, const ModelSpec& spec, const std::string& scope) {
  if (!j.is_object()) throw ConfigError("'" + scope + "' must be an object");
  reject_unknown_keys(j, {"type", "theta", "u"}, scope + ".");
  if (!j.contains("type")) throw ConfigError("missing field '" + scope + ".type'");
  const std::string type = j["type"].get<std::string>();
  if (type == "classical") return classical_estimator(spec);
  if (type == "filter_induced") {
    if (!j.contains("theta")) throw ConfigError("missing field '" + scope + ".theta'");
    const ThetaPolicy policy = policy_from(j["theta"], spec, scope + ".theta");
    return FilterInduced{resolve_deterministic(policy, spec)};
  }
  if (type == "shifted") {
    if (!j.contains("u")) throw ConfigError("missing field '" + scope + ".u'");
    const json& u = j["u"];
    if (u.is_object() && u.contains("values"))
      return ShiftedFilter{matrix_from(u["values"], scope + ".u.values")};
    const Eigen::VectorXd v = vector_from(u.is_object() ? u["value"] : u, scope + ".u");
    return ShiftedFilter{v * Eigen::RowVectorXd::Ones(spec.grid.n_steps)};
  }
  throw ConfigError("'" + scope + ".type' must be classical, filter_induced or shifted");
}

struct CommonConfig {
  json j;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int threads = 1;
  std::string model_path;
  ModelSpec spec;

  std::string out_path(const std::string& name) const {
    return (std::filesystem::path(out_dir) / name).string();
  }
};

CommonConfig load_common(const std::string& config_path, bool needs_model,
                         const std::optional<std::uint64_t>& seed_override,
                         const std::optional<std::string>& out_override,
                         const std::optional<int>& threads_override) {
  CommonConfig c;
  c.j = load_json(config_path);
  if (seed_override) {
    c.seed = *seed_override;
  } else {
    if (!c.j.contains("seed"))
      throw ConfigError("missing mandatory field 'seed' (no wall-clock default; set it in the config or pass --seed)");
    c.seed = c.j["seed"].get<std::uint64_t>();
  }
  c.out_dir = out_override ? *out_override : c.j.value("out_dir", std::string("."));
  c.threads = threads_override ? *threads_override : c.j.value("threads", 1);
  if (c.threads < 1) throw ConfigError("'threads' must be >= 1");
  if (needs_model) {
    if (!c.j.contains("model")) throw ConfigError("missing mandatory field 'model'");
    c.model_path = c.j["model"].get<std::string>();
    try {
      c.spec = load_spec(c.model_path);
    } catch (const Error& e) {
      throw ConfigError(std::string("model file: ") + e.what());
    }
    const ValidationReport report = validate(c.spec);
    if (!report.ok()) throw ConfigError("model failed validation:\n" + report.summary());
  }
  return c;
}

int default_t_index(const CommonConfig& c) {
  const int t = c.j.value("t_index", c.spec.grid.n_steps);
  if (t < 0 || t > c.spec.grid.n_steps)
    throw ConfigError("'t_index' outside [0, " + std::to_string(c.spec.grid.n_steps) + "]");
  return t;
}

// ---------------------------------------------------------------------------
// simulate

int cmd_simulate(const CommonConfig& c) {
  reject_unknown_keys(c.j, {"model", "seed", "out_dir", "threads", "n_paths", "theta"}, "");
  const int n_paths = c.j.value("n_paths", 10);
  PathBundle bundle;
  if (c.j.contains("theta")) {
    const ThetaPolicy policy = policy_from(c.j["theta"], c.spec, "theta");
    bundle = simulate_theta(c.spec, policy, n_paths, c.seed, c.threads);
  } else {
    bundle = simulate_p(c.spec, n_paths, c.seed, c.threads);
  }
  paths_to_csv(c.spec, bundle).write(c.out_path("paths.csv"));
  return 0;
}

// ---------------------------------------------------------------------------
// filter

int cmd_filter(const CommonConfig& c, bool decompose_check, bool plot_data) {
  reject_unknown_keys(c.j, {"model", "seed", "out_dir", "threads", "n_paths", "theta"}, "");
  const ModelSpec& spec = c.spec;
  const int n_paths = c.j.value("n_paths", 1);
  const int K = spec.grid.n_steps;

  ThetaPolicy policy = ThetaPolicy::zero();
  bool has_theta = c.j.contains("theta");
  if (has_theta) policy = policy_from(c.j["theta"], spec, "theta");
  if (has_theta && !policy.is_deterministic())
    throw ConfigError("the filter command needs a deterministic theta");
  const Eigen::MatrixXd theta = resolve_deterministic(policy, spec);

  const VariancePath variance = solve_riccati(spec);
  const FilterEngine engine(spec, variance);
  const PathBundle bundle = has_theta ? simulate_theta(spec, policy, n_paths, c.seed, c.threads)
                                      : simulate_p(spec, n_paths, c.seed, c.threads);
  const Eigen::MatrixXd correction =
      decompose_check ? decompose_correction(spec, variance, theta) : Eigen::MatrixXd();

  std::vector<std::string> header{"path_id", "k", "t"};
  for (int i = 0; i < spec.n; ++i) header.push_back("x_true_" + std::to_string(i));
  for (int i = 0; i < spec.n; ++i) header.push_back("xbar_" + std::to_string(i));
  for (int i = 0; i < spec.n; ++i) header.push_back("xhat_" + std::to_string(i));
  for (int i = 0; i < spec.n; ++i) header.push_back("P_" + std::to_string(i));
  for (int i = 0; i < spec.m; ++i) header.push_back("innov_" + std::to_string(i));
  if (decompose_check)
    for (int i = 0; i < spec.n; ++i) header.push_back("xdec_" + std::to_string(i));
  CsvWriter csv(std::move(header));
  CsvWriter long_csv({"path_id", "k", "t", "series", "component", "value"});

  double max_gap = 0.0;
  for (const Path& path : bundle.paths) {
    const FilterOutput classical = engine.classical(path.m);
    const FilterOutput corrected = engine.with_drift(path.m, theta);
    Eigen::MatrixXd xdec;
    if (decompose_check) {
      xdec = classical.estimate - correction;
      max_gap = std::max(max_gap, (corrected.estimate - xdec).cwiseAbs().maxCoeff());
    }
    for (int k = 0; k <= K; ++k) {
      csv.begin_row();
      csv.add(static_cast<std::int64_t>(path.path_id));
      csv.add(static_cast<std::int64_t>(k));
      csv.add(spec.grid.node(k));
      for (int i = 0; i < spec.n; ++i) csv.add(path.x(i, k));
      for (int i = 0; i < spec.n; ++i) csv.add(classical.estimate(i, k));
      for (int i = 0; i < spec.n; ++i) csv.add(corrected.estimate(i, k));
      for (int i = 0; i < spec.n; ++i) csv.add(variance.at_node(k)(i, i));
      for (int i = 0; i < spec.m; ++i) {
        if (k < K)
          csv.add(corrected.innovation(i, k));
        else
          csv.add_empty();
      }
      if (decompose_check)
        for (int i = 0; i < spec.n; ++i) csv.add(xdec(i, k));
      csv.end_row();
    }
    if (plot_data) {
      auto emit = [&](const std::string& series, int component, int k, double value) {
        long_csv.begin_row();
        long_csv.add(static_cast<std::int64_t>(path.path_id));
        long_csv.add(static_cast<std::int64_t>(k));
        long_csv.add(spec.grid.node(k));
        long_csv.add(series);
        long_csv.add(static_cast<std::int64_t>(component));
        long_csv.add(value);
        long_csv.end_row();
      };
      for (int k = 0; k <= K; ++k) {
        for (int i = 0; i < spec.n; ++i) emit("x_true", i, k, path.x(i, k));
        for (int i = 0; i < spec.n; ++i) emit("xbar", i, k, classical.estimate(i, k));
        for (int i = 0; i < spec.n; ++i) emit("xhat", i, k, corrected.estimate(i, k));
        for (int i = 0; i < spec.n; ++i) emit("P", i, k, variance.at_node(k)(i, i));
        if (k < K)
          for (int i = 0; i < spec.m; ++i) emit("innov", i, k, corrected.innovation(i, k));
      }
    }
  }
  csv.write(c.out_path("filter.csv"));
  if (plot_data) long_csv.write(c.out_path("filter_long.csv"));
  if (decompose_check)
    std::cout << "decompose_check max_gap=" << format_double(max_gap)
              << " bound=" << format_double(10.0 * spec.grid.dt()) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// robust

int cmd_robust(const CommonConfig& c) {
  reject_unknown_keys(c.j, {"model", "seed", "out_dir", "threads", "t_index", "mc_check"}, "");
  const ModelSpec& spec = c.spec;
  const int t_index = default_t_index(c);
  const VariancePath variance = solve_riccati(spec);
  const MinimaxSolution sol = minimax_deterministic(spec, variance, t_index);
  if (!(sol.value >= sol.trace_p))
    fail(ErrorCode::InvalidSpec, "minimax value below the variance floor; refusing to write");

  CsvWriter csv({"t_index", "t", "value", "trace_p", "bias_sup", "n_corners"});
  csv.begin_row();
  csv.add(static_cast<std::int64_t>(t_index));
  csv.add(spec.grid.node(t_index));
  csv.add(sol.value);
  csv.add(sol.trace_p);
  csv.add(sol.bias_sup);
  csv.add(static_cast<std::int64_t>(sol.theta_corners.size()));
  csv.end_row();
  csv.write(c.out_path("minimax.csv"));

  if (!sol.theta_corners.empty()) {
    std::vector<std::string> header{"k", "t"};
    for (int i = 0; i < spec.m; ++i) header.push_back("theta_star_" + std::to_string(i));
    CsvWriter corner({std::move(header)});
    for (int k = 0; k < spec.grid.n_steps; ++k) {
      corner.begin_row();
      corner.add(static_cast<std::int64_t>(k));
      corner.add(spec.grid.node(k));
      for (int i = 0; i < spec.m; ++i) corner.add(sol.theta_corners.front()(i, k));
      corner.end_row();
    }
    corner.write(c.out_path("theta_star.csv"));
  }

  if (c.j.contains("mc_check")) {
    const json& mc = c.j["mc_check"];
    reject_unknown_keys(mc, {"candidates", "n_paths", "estimator"}, "mc_check.");
    if (!mc.contains("candidates")) throw ConfigError("missing field 'mc_check.candidates'");
    std::vector<ThetaPolicy> candidates;
    for (std::size_t i = 0; i < mc["candidates"].size(); ++i)
      candidates.push_back(policy_from(mc["candidates"][i], spec,
                                       "mc_check.candidates[" + std::to_string(i) + "]"));
    const int n_paths = mc.value("n_paths", 10000);
    const EstimatorSpec estimator = mc.contains("estimator")
                                        ? estimator_from(mc["estimator"], spec, "mc_check.estimator")
                                        : classical_estimator(spec);
    const McWorstCase wc =
        mc_worst_case(spec, t_index, estimator, candidates, n_paths, c.seed, c.threads);
    CsvWriter cand({"candidate_id", "theta_desc", "mse", "stderr"});
    for (std::size_t i = 0; i < wc.candidates.size(); ++i) {
      cand.begin_row();
      cand.add(static_cast<std::int64_t>(i));
      cand.add(wc.candidates[i].description);
      cand.add(wc.candidates[i].mse);
      cand.add(wc.candidates[i].stderr_);
      cand.end_row();
    }
    cand.write(c.out_path("candidates.csv"));
    std::cout << "mc_worst_case argmax=" << wc.argmax << " mse=" << format_double(wc.max_mse)
              << "\n";
  }
  std::cout << "minimax value=" << format_double(sol.value)
            << " trace_p=" << format_double(sol.trace_p) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// game

int cmd_game(const CommonConfig& c) {
  reject_unknown_keys(c.j, {"seed", "out_dir", "threads", "game"}, "");
  if (!c.j.contains("game")) throw ConfigError("missing mandatory field 'game'");
  const json& g = c.j["game"];
  reject_unknown_keys(g,
                      {"n_steps", "dt", "F", "f", "G", "g", "Q", "R", "x0", "mu", "alphabet",
                       "budget", "tol", "max_iters", "open_loop"},
                      "game.");
  GameSpec game;
  if (!g.contains("mu")) throw ConfigError("missing mandatory field 'game.mu'");
  game.mu = g["mu"].get<double>();
  game.n_steps = g.value("n_steps", 1);
  game.dt = g.value("dt", 0.04);
  game.F = g.value("F", 0.0);
  game.f = g.value("f", 0.0);
  game.G = g.value("G", 1.0);
  game.g = g.value("g", 0.0);
  game.Q = g.value("Q", 1.0);
  game.R = g.value("R", 1.0);
  game.x0 = g.value("x0", 0.0);
  if (g.contains("alphabet")) game.alphabet = g["alphabet"].get<std::vector<double>>();
  game.budget = g.value("budget", game.budget);
  game.tol = g.value("tol", game.tol);
  game.max_iters = g.value("max_iters", game.max_iters);
  game.open_loop = g.value("open_loop", false);

  const GameSolution sol = discrete_game_oracle(game);
  CsvWriter csv({"game_id", "minimax", "maximin", "gap"});
  csv.begin_row();
  csv.add(static_cast<std::int64_t>(0));
  csv.add(sol.minimax);
  csv.add(sol.maximin);
  csv.add(sol.gap);
  csv.end_row();
  csv.write(c.out_path("game.csv"));
  std::cout << "minimax=" << format_double(sol.minimax) << " maximin=" << format_double(sol.maximin)
            << " gap=" << format_double(sol.gap) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const CommonConfig& c) {
  reject_unknown_keys(
      c.j, {"model", "seed", "out_dir", "threads", "n_paths", "t_index", "theta", "estimator",
            "method"},
      "");
  const ModelSpec& spec = c.spec;
  const int t_index = default_t_index(c);
  const int n_paths = c.j.value("n_paths", 10000);
  const ThetaPolicy policy = c.j.contains("theta") ? policy_from(c.j["theta"], spec, "theta")
                                                   : ThetaPolicy::zero();
  const EstimatorSpec estimator = c.j.contains("estimator")
                                      ? estimator_from(c.j["estimator"], spec, "estimator")
                                      : classical_estimator(spec);
  const std::string method = c.j.value("method", std::string("both"));
  if (method != "direct" && method != "importance" && method != "both")
    throw ConfigError("'method' must be direct, importance or both");

  CsvWriter csv({"run_id", "method", "theta_desc", "estimator_desc", "t", "mse", "stderr", "ess"});
  int run_id = 0;
  auto emit = [&](const char* name, const McEstimate& est) {
    csv.begin_row();
    csv.add(static_cast<std::int64_t>(run_id++));
    csv.add(std::string(name));
    csv.add(describe(policy));
    csv.add(describe(estimator));
    csv.add(spec.grid.node(t_index));
    csv.add(est.mean);
    csv.add(est.stderr_);
    csv.add(est.ess);
    csv.end_row();
    if (est.low_ess)
      std::cerr << "warning: importance weights degenerate, ess=" << format_double(est.ess)
                << " of " << est.n_paths << " paths\n";
  };
  if (method == "direct" || method == "both")
    emit("direct", mc_mse(spec, policy, estimator, t_index, n_paths, c.seed, c.threads));
  if (method == "importance" || method == "both")
    emit("importance", is_mse(spec, policy, estimator, t_index, n_paths, c.seed, c.threads));
  csv.write(c.out_path("eval.csv"));
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Kalman-Bucy filtering under observation-drift ambiguity"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  bool decompose_check = false;
  bool plot_data = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration (JSON)")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_option("--threads", threads, "worker thread cap");
  };
  CLI::App* simulate = app.add_subcommand("simulate", "simulate signal/observation paths");
  add_common(simulate);
  CLI::App* filter = app.add_subcommand("filter", "run the filters along simulated paths");
  add_common(filter);
  filter->add_flag("--decompose-check", decompose_check,
                   "report the drift-corrected vs decomposed filter discrepancy");
  filter->add_flag("--plot-data", plot_data, "also write tidy long-format output");
  CLI::App* robust = app.add_subcommand("robust", "deterministic minimax report");
  add_common(robust);
  CLI::App* game = app.add_subcommand("game", "finite estimation game oracle");
  add_common(game);
  CLI::App* eval_cmd = app.add_subcommand("eval", "Monte Carlo MSE measurements");
  add_common(eval_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    const bool needs_model = !game->parsed();
    const CommonConfig c = load_common(config_path, needs_model, seed, out_dir, threads);
    try {
      if (simulate->parsed()) return cmd_simulate(c);
      if (filter->parsed()) return cmd_filter(c, decompose_check, plot_data);
      if (robust->parsed()) return cmd_robust(c);
      if (game->parsed()) return cmd_game(c);
      if (eval_cmd->parsed()) return cmd_eval(c);
    } catch (const ConfigError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 3;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.push_back("rkbf");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const auto& s : full) argv.push_back(s.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace rkbf
