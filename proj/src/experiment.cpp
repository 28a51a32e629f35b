#include "dlqr/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dlqr/errors.hpp"
#include "dlqr/riccati.hpp"
#include "dlqr/stability.hpp"

namespace dlqr {

namespace {

using nlohmann::json;

const json& need(const json& obj, const char* key, const std::string& ctx) {
  if (!obj.is_object() || !obj.contains(key))
    throw input_error("config: missing field '" + ctx + "'");
  return obj.at(key);
}

double need_number(const json& obj, const char* key, const std::string& ctx) {
  const json& v = need(obj, key, ctx);
  if (!v.is_number())
    throw input_error("config: field '" + ctx + "' must be a number");
  return v.get<double>();
}

int need_int(const json& obj, const char* key, const std::string& ctx) {
  const json& v = need(obj, key, ctx);
  if (!v.is_number_integer())
    throw input_error("config: field '" + ctx + "' must be an integer");
  return v.get<int>();
}

Mat parse_matrix(const json& v, const std::string& ctx) {
  if (!v.is_array() || v.empty() || !v[0].is_array())
    throw input_error("config: field '" + ctx +
                      "' must be a non-empty array of rows");
  const int rows = static_cast<int>(v.size());
  const int cols = static_cast<int>(v[0].size());
  if (cols == 0)
    throw input_error("config: field '" + ctx + "' has an empty row");
  Mat out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (!v[i].is_array() || static_cast<int>(v[i].size()) != cols) {
      std::ostringstream msg;
      msg << "config: field '" << ctx << "' row " << i + 1 << " expects "
          << cols << " entries";
      throw input_error(msg.str());
    }
    for (int j = 0; j < cols; ++j) {
      if (!v[i][j].is_number())
        throw input_error("config: field '" + ctx + "' has a non-numeric entry");
      out(i, j) = v[i][j].get<double>();
    }
  }
  return out;
}

Vec parse_vector(const json& v, const std::string& ctx) {
  if (!v.is_array() || v.empty())
    throw input_error("config: field '" + ctx + "' must be a non-empty array");
  Vec out(static_cast<int>(v.size()));
  for (int i = 0; i < out.size(); ++i) {
    if (!v[i].is_number())
      throw input_error("config: field '" + ctx + "' has a non-numeric entry");
    out[i] = v[i].get<double>();
  }
  return out;
}

json matrix_to_json(const Mat& a) {
  json rows = json::array();
  for (int i = 0; i < a.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Vec& v) {
  json out = json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

std::vector<std::string> gain_headers(int m, int n) {
  std::vector<std::string> names;
  for (int i = 1; i <= m; ++i)
    for (int j = 1; j <= n; ++j)
      names.push_back("k_" + std::to_string(i) + "_" + std::to_string(j));
  return names;
}

void append_gain(std::vector<std::string>& row, const Mat& K) {
  for (int i = 0; i < K.rows(); ++i)
    for (int j = 0; j < K.cols(); ++j) row.push_back(format_float(K(i, j)));
}

void write_stability(const std::string& path, const StabilityVerdict& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << "spectral_radius " << format_float(v.spectral_radius) << "\n"
      << "verdict " << (v.stabilizing ? "stabilizing" : "not_stabilizing")
      << "\n";
  if (!out) throw io_error("write failed for " + path);
}

void write_p_stack(const std::string& path, const LyapunovStack& stack) {
  const int n = static_cast<int>(stack.P[0].rows());
  std::vector<std::string> header;
  std::vector<std::string> row;
  for (std::size_t i = 0; i < stack.P.size(); ++i)
    for (int r = 1; r <= n; ++r)
      for (int c = 1; c <= n; ++c) {
        header.push_back("p" + std::to_string(i) + "_" + std::to_string(r) +
                         "_" + std::to_string(c));
        row.push_back(format_float(stack.P[i](r - 1, c - 1)));
      }
  write_csv(path, header, {row});
}

std::vector<std::string> gains_header(int m, int n) {
  std::vector<std::string> header = {"source", "iteration"};
  for (auto& name : gain_headers(m, n)) header.push_back(name);
  header.push_back("residual");
  header.push_back("rank");
  header.push_back("condition");
  return header;
}

std::vector<std::string> solve_row(int iteration, const Mat& K,
                                   double residual) {
  std::vector<std::string> row = {"solve", std::to_string(iteration)};
  append_gain(row, K);
  row.push_back(format_float(residual));
  row.push_back("0");
  row.push_back("0");
  return row;
}

std::vector<std::string> learn_row(int iteration, const Mat& K,
                                   const LearnIteration& it) {
  std::vector<std::string> row = {"learn", std::to_string(iteration)};
  append_gain(row, K);
  row.push_back(format_float(it.residual_norm));
  row.push_back(std::to_string(it.theta_rank));
  row.push_back(format_float(it.condition));
  return row;
}

LearnConfig effective_learn_config(const ExperimentConfig& config) {
  LearnConfig lc = config.learn;
  lc.K0 = config.gain;
  lc.seed = config.seed;
  return lc;
}

void require_initial(const ExperimentConfig& config) {
  if (config.init.x0.size() == 0)
    throw input_error(
        "config: missing field 'initial' (required for learn and simulate)");
}

json gain_json(const Mat& K) { return matrix_to_json(K); }

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::solve: return "solve";
    case Mode::learn: return "learn";
    case Mode::simulate: return "simulate";
    case Mode::check_stability: return "check-stability";
    case Mode::paper_example: return "paper-example";
  }
  throw input_error("config: unknown mode value");
}

Mode mode_from_string(const std::string& name) {
  if (name == "solve") return Mode::solve;
  if (name == "learn") return Mode::learn;
  if (name == "simulate") return Mode::simulate;
  if (name == "check-stability") return Mode::check_stability;
  if (name == "paper-example") return Mode::paper_example;
  throw input_error("config: field 'mode' must be one of solve, learn, "
                    "simulate, check-stability, paper-example (got '" +
                    name + "')");
}

std::string format_float(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  for (std::size_t i = 0; i < header.size(); ++i)
    out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i)
      out << (i ? "," : "") << row[i];
    out << "\n";
  }
  if (!out) throw io_error("write failed for " + path);
}

ExperimentConfig config_from_json(const json& root) {
  ExperimentConfig config;
  config.mode =
      mode_from_string(need(root, "mode", "mode").get<std::string>());
  if (root.contains("seed")) {
    const json& s = root.at("seed");
    if (!s.is_number_integer() || s.get<std::int64_t>() < 0)
      throw input_error("config: field 'seed' must be a non-negative integer");
    config.seed = s.get<std::uint64_t>();
  }
  if (root.contains("output_dir"))
    config.output_dir = root.at("output_dir").get<std::string>();

  const json& model = need(root, "model", "model");
  config.model.A = parse_matrix(need(model, "A", "model.A"), "model.A");
  config.model.Abar =
      parse_matrix(need(model, "Abar", "model.Abar"), "model.Abar");
  config.model.B = parse_matrix(need(model, "B", "model.B"), "model.B");
  config.model.Bbar =
      parse_matrix(need(model, "Bbar", "model.Bbar"), "model.Bbar");
  config.model.d = need_int(model, "delay", "model.delay");

  const json& weights = need(root, "weights", "weights");
  config.weights.Q = parse_matrix(need(weights, "Q", "weights.Q"), "weights.Q");
  config.weights.R = parse_matrix(need(weights, "R", "weights.R"), "weights.R");
  require_valid(config.model, config.weights);

  config.gain = parse_matrix(need(root, "gain", "gain"), "gain");
  if (config.gain.rows() != config.model.m() ||
      config.gain.cols() != config.model.n()) {
    std::ostringstream msg;
    msg << "config: field 'gain' must be " << config.model.m() << "x"
        << config.model.n() << " for this model";
    throw input_error(msg.str());
  }

  if (root.contains("initial")) {
    const json& init = root.at("initial");
    config.init.x0 = parse_vector(need(init, "x0", "initial.x0"), "initial.x0");
    const json& hist = need(init, "u_history", "initial.u_history");
    if (!hist.is_array() ||
        static_cast<int>(hist.size()) != config.model.d)
      throw input_error(
          "config: field 'initial.u_history' must list exactly delay inputs");
    config.init.u_hist.clear();
    for (std::size_t i = 0; i < hist.size(); ++i)
      config.init.u_hist.push_back(parse_vector(
          hist[i], "initial.u_history[" + std::to_string(i) + "]"));
  }

  if (root.contains("solve")) {
    const json& s = root.at("solve");
    if (s.contains("tol")) config.solve.tol = need_number(s, "tol", "solve.tol");
    if (s.contains("max_iters"))
      config.solve.max_iters = need_int(s, "max_iters", "solve.max_iters");
  }
  if (root.contains("learn")) {
    const json& l = root.at("learn");
    if (l.contains("exploration_variance"))
      config.learn.exploration_variance =
          need_number(l, "exploration_variance", "learn.exploration_variance");
    if (l.contains("rollouts"))
      config.learn.rollouts = need_int(l, "rollouts", "learn.rollouts");
    if (l.contains("window")) {
      const json& w = l.at("window");
      if (!w.is_array() || w.size() != 2 || !w[0].is_number_integer() ||
          !w[1].is_number_integer())
        throw input_error(
            "config: field 'learn.window' must be two integers [k1, k2]");
      config.learn.k1 = w[0].get<int>();
      config.learn.k2 = w[1].get<int>();
    }
    if (l.contains("tol")) config.learn.tol = need_number(l, "tol", "learn.tol");
    if (l.contains("max_policy_iters"))
      config.learn.max_policy_iters =
          need_int(l, "max_policy_iters", "learn.max_policy_iters");
    if (l.contains("ridge"))
      config.learn.ridge = need_number(l, "ridge", "learn.ridge");
    if (l.contains("reuse_single_batch")) {
      if (!l.at("reuse_single_batch").is_boolean())
        throw input_error(
            "config: field 'learn.reuse_single_batch' must be a boolean");
      config.learn.reuse_single_batch = l.at("reuse_single_batch").get<bool>();
    }
  }
  if (root.contains("sim")) {
    const json& s = root.at("sim");
    if (s.contains("horizon"))
      config.sim.horizon = need_int(s, "horizon", "sim.horizon");
  }
  return config;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read config file " + path);
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw input_error(std::string("config: ") + e.what());
  }
  return config_from_json(root);
}

json serialize(const ExperimentConfig& config) {
  json root;
  root["mode"] = to_string(config.mode);
  root["seed"] = config.seed;
  root["output_dir"] = config.output_dir;
  root["model"] = {{"A", matrix_to_json(config.model.A)},
                   {"Abar", matrix_to_json(config.model.Abar)},
                   {"B", matrix_to_json(config.model.B)},
                   {"Bbar", matrix_to_json(config.model.Bbar)},
                   {"delay", config.model.d}};
  root["weights"] = {{"Q", matrix_to_json(config.weights.Q)},
                     {"R", matrix_to_json(config.weights.R)}};
  root["gain"] = matrix_to_json(config.gain);
  if (config.init.x0.size() > 0) {
    json hist = json::array();
    for (const auto& u : config.init.u_hist) hist.push_back(vector_to_json(u));
    root["initial"] = {{"x0", vector_to_json(config.init.x0)},
                       {"u_history", std::move(hist)}};
  }
  root["solve"] = {{"tol", config.solve.tol},
                   {"max_iters", config.solve.max_iters}};
  root["learn"] = {{"exploration_variance", config.learn.exploration_variance},
                   {"rollouts", config.learn.rollouts},
                   {"window", {config.learn.k1, config.learn.k2}},
                   {"tol", config.learn.tol},
                   {"max_policy_iters", config.learn.max_policy_iters},
                   {"ridge", config.learn.ridge},
                   {"reuse_single_batch", config.learn.reuse_single_batch}};
  root["sim"] = {{"horizon", config.sim.horizon}};
  return root;
}

ExperimentConfig paper_example_config() {
  ExperimentConfig config;
  config.mode = Mode::paper_example;
  config.seed = 1;
  config.output_dir = "out";
  config.model.A = Mat(2, 2);
  config.model.A << 1.1, -0.3, 1.0, 0.0;
  config.model.Abar = Mat(2, 2);
  config.model.Abar << 0.0, 0.0, -0.18, 0.0;
  config.model.B = Mat(2, 1);
  config.model.B << 1.0, 0.0;
  config.model.Bbar = Mat(2, 1);
  config.model.Bbar << -0.1, 0.08;
  config.model.d = 2;
  config.weights.Q = Mat(2, 2);
  config.weights.Q << 1.0, 0.5, 0.5, 1.0;
  config.weights.R = Mat::Identity(1, 1);
  config.gain = Mat::Zero(1, 2);
  config.init.x0 = Vec(2);
  config.init.x0 << 0.4, 0.6;
  Vec um2(1), um1(1);
  um2 << -0.2;
  um1 << -0.45;
  config.init.u_hist = {um2, um1};
  config.learn.exploration_variance = 2.5;
  config.learn.rollouts = 400;
  config.learn.k1 = 0;
  config.learn.k2 = 40;
  config.learn.tol = 5e-3;
  config.learn.max_policy_iters = 30;
  config.sim.horizon = 60;
  return config;
}

RunResult run(const ExperimentConfig& config) {
  const auto started = std::chrono::steady_clock::now();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec)
    throw io_error("cannot create output directory " + config.output_dir +
                   ": " + ec.message());
  const std::string dir = config.output_dir + "/";

  RunResult result;
  json final;
  const int n = config.model.n(), m = config.model.m();

  switch (config.mode) {
    case Mode::solve: {
      auto sol = solve_optimal(config.model, config.weights, config.gain,
                               config.solve.tol, config.solve.max_iters);
      // Row j's residual is how far K_j sits from the update its own
      // evaluation implies, which is the next iterate's gain step; the
      // converged row reports the final equation defect instead.
      std::vector<std::vector<std::string>> rows;
      for (std::size_t j = 1; j < sol.history.size(); ++j)
        rows.push_back(solve_row(static_cast<int>(j), sol.history[j].K,
                                 j + 1 < sol.history.size()
                                     ? sol.history[j + 1].gain_step
                                     : sol.residual));
      write_csv(dir + "gains.csv", gains_header(m, n), rows);
      result.artifacts.push_back(dir + "gains.csv");
      write_p_stack(dir + "p_stack.csv", sol.stack);
      result.artifacts.push_back(dir + "p_stack.csv");
      auto verdict = is_ms_stabilizing(config.model, sol.K);
      write_stability(dir + "stability.txt", verdict);
      result.artifacts.push_back(dir + "stability.txt");
      final = {{"gain", gain_json(sol.K)},
               {"iterations", sol.iterations},
               {"residual", sol.residual},
               {"spectral_radius", verdict.spectral_radius}};
      break;
    }
    case Mode::learn: {
      require_initial(config);
      SimulatedPlant plant(config.model, config.init, config.seed);
      KnownDynamics known{config.model.A, config.model.B, config.model.d};
      auto report =
          learn(plant, known, config.weights, effective_learn_config(config));
      std::vector<std::vector<std::string>> rows;
      for (std::size_t j = 0; j < report.iterations.size(); ++j)
        rows.push_back(learn_row(static_cast<int>(j) + 1, report.gains[j + 1],
                                 report.iterations[j]));
      write_csv(dir + "gains.csv", gains_header(m, n), rows);
      result.artifacts.push_back(dir + "gains.csv");
      write_p_stack(dir + "p_stack.csv", report.final_eval.stack);
      result.artifacts.push_back(dir + "p_stack.csv");
      auto verdict = is_ms_stabilizing(config.model, report.K);
      write_stability(dir + "stability.txt", verdict);
      result.artifacts.push_back(dir + "stability.txt");
      final = {{"gain", gain_json(report.K)},
               {"converged", report.converged},
               {"policy_iterations", report.policy_iterations},
               {"stability_probe", report.stability_probe},
               {"spectral_radius", verdict.spectral_radius}};
      break;
    }
    case Mode::simulate: {
      require_initial(config);
      auto traj = simulate(config.model, config.init, config.gain,
                           config.sim.horizon, NoiseSpec{.seed = config.seed});
      std::vector<std::string> header = {"k"};
      for (int i = 1; i <= n; ++i) header.push_back("x_" + std::to_string(i));
      for (int i = 1; i <= m; ++i) header.push_back("u_" + std::to_string(i));
      std::vector<std::vector<std::string>> rows;
      for (std::size_t k = 0; k < traj.states.size(); ++k) {
        std::vector<std::string> row = {std::to_string(k)};
        for (int i = 0; i < n; ++i)
          row.push_back(format_float(traj.states[k][i]));
        for (int i = 0; i < m; ++i)
          row.push_back(format_float(traj.inputs[k][i]));
        rows.push_back(std::move(row));
      }
      write_csv(dir + "trajectory.csv", header, rows);
      result.artifacts.push_back(dir + "trajectory.csv");
      auto verdict = is_ms_stabilizing(config.model, config.gain);
      write_stability(dir + "stability.txt", verdict);
      result.artifacts.push_back(dir + "stability.txt");
      final = {{"horizon", config.sim.horizon},
               {"terminal_state_norm", traj.states.back().norm()},
               {"spectral_radius", verdict.spectral_radius}};
      break;
    }
    case Mode::check_stability: {
      auto verdict = is_ms_stabilizing(config.model, config.gain);
      write_stability(dir + "stability.txt", verdict);
      result.artifacts.push_back(dir + "stability.txt");
      final = {{"spectral_radius", verdict.spectral_radius},
               {"stabilizing", verdict.stabilizing}};
      break;
    }
    case Mode::paper_example: {
      ExperimentConfig ref = paper_example_config();
      ref.seed = config.seed;
      ref.output_dir = config.output_dir;

      auto sol = solve_optimal(ref.model, ref.weights, ref.gain, ref.solve.tol,
                               ref.solve.max_iters);
      SimulatedPlant plant(ref.model, ref.init, ref.seed);
      KnownDynamics known{ref.model.A, ref.model.B, ref.model.d};
      auto report = learn(plant, known, ref.weights, effective_learn_config(ref));

      std::vector<std::vector<std::string>> rows;
      rows.push_back(solve_row(sol.iterations, sol.K, sol.residual));
      for (std::size_t j = 0; j < report.iterations.size(); ++j)
        rows.push_back(learn_row(static_cast<int>(j) + 1, report.gains[j + 1],
                                 report.iterations[j]));
      write_csv(dir + "gains.csv", gains_header(m, n), rows);
      result.artifacts.push_back(dir + "gains.csv");
      write_p_stack(dir + "p_stack.csv", sol.stack);
      result.artifacts.push_back(dir + "p_stack.csv");
      auto verdict = is_ms_stabilizing(ref.model, report.K);
      write_stability(dir + "stability.txt", verdict);
      result.artifacts.push_back(dir + "stability.txt");
      final = {{"solve_gain", gain_json(sol.K)},
               {"learned_gain", gain_json(report.K)},
               {"gain_gap", (report.K - sol.K).cwiseAbs().maxCoeff()},
               {"converged", report.converged},
               {"policy_iterations", report.policy_iterations},
               {"spectral_radius", verdict.spectral_radius}};
      break;
    }
  }

  const auto finished = std::chrono::steady_clock::now();
  const double seconds =
      std::chrono::duration<double>(finished - started).count();
  result.summary = {{"mode", to_string(config.mode)},
                    {"seed", config.seed},
                    {"timings", {{"total_seconds", seconds}}},
                    {"final", std::move(final)},
                    {"effective_config", serialize(config)}};
  std::ofstream out(dir + "summary.json", std::ios::binary);
  if (!out) throw io_error("cannot write " + dir + "summary.json");
  out << result.summary.dump(2) << "\n";
  if (!out) throw io_error("write failed for " + dir + "summary.json");
  result.artifacts.push_back(dir + "summary.json");
  return result;
}

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"delayed LQR with multiplicative noise: solve, learn, simulate"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  double tol = 0;
  int rollouts = 0, horizon = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "configuration file");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "random seed override");
    sub->add_option("--tol", tol, "convergence tolerance override");
    sub->add_option("--rollouts", rollouts, "rollout count override");
    sub->add_option("--horizon", horizon, "simulation horizon");
  };
  add_common(app.add_subcommand(
      "solve", "compute the optimal gain by offline policy iteration"));
  add_common(app.add_subcommand(
      "learn", "estimate the optimal gain from simulated rollouts"));
  add_common(app.add_subcommand(
      "simulate", "roll the closed loop forward under a fixed gain"));
  add_common(app.add_subcommand(
      "check-stability", "report the mean-square stability of a gain"));
  add_common(app.add_subcommand(
      "paper-example", "run the built-in benchmark, solver and learner"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const Mode mode = mode_from_string(sub->get_name());

    ExperimentConfig config;
    if (sub->count("--config")) {
      config = parse_config(config_path);
    } else if (mode == Mode::paper_example) {
      config = paper_example_config();
    } else {
      throw input_error("a config file is required: pass --config PATH");
    }
    config.mode = mode;
    if (sub->count("--out")) config.output_dir = out_dir;
    if (sub->count("--seed")) config.seed = seed;
    if (sub->count("--tol")) {
      if (mode == Mode::learn || mode == Mode::paper_example)
        config.learn.tol = tol;
      else
        config.solve.tol = tol;
    }
    if (sub->count("--rollouts")) config.learn.rollouts = rollouts;
    if (sub->count("--horizon")) config.sim.horizon = horizon;

    auto result = run(config);
    for (const auto& path : result.artifacts) std::cout << path << "\n";
    return 0;
  } catch (const input_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const numerical_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace dlqr
