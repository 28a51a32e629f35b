#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dlqr/errors.hpp"
#include "dlqr/experiment.hpp"
#include "dlqr/riccati.hpp"

namespace fs = std::filesystem;
using dlqr::Mat;
using dlqr::Vec;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::vector<std::vector<std::string>> table;
  std::istringstream in(slurp(path));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::istringstream fields(line);
    std::string field;
    while (std::getline(fields, field, ',')) row.push_back(field);
    table.push_back(std::move(row));
  }
  return table;
}

std::string fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("dlqr_test_" + tag);
  fs::remove_all(dir);
  return dir.string();
}

std::string shipped_config() {
  return std::string(CONFIG_DIR) + "/paper_example.json";
}

double field(const std::vector<std::string>& row, std::size_t i) {
  return std::strtod(row.at(i).c_str(), nullptr);
}

}  // namespace

TEST_CASE("format_float: lossless and stable") {
  for (double v : {1.0 / 3.0, 2.0763994651577558, -0.1, 0.0, 1e300,
                   0.85571464275192053}) {
    const std::string text = dlqr::format_float(v);
    CHECK(std::strtod(text.c_str(), nullptr) == v);
  }
  CHECK(dlqr::format_float(0.0) == "0");
  CHECK(dlqr::format_float(1.0) == "1");
}

TEST_CASE("write_csv: header always present, empty input gives header only") {
  const std::string dir = fresh_dir("csv");
  fs::create_directories(dir);
  const std::string path = dir + "/empty.csv";
  dlqr::write_csv(path, {"a", "b"}, {});
  CHECK(slurp(path) == "a,b\n");

  dlqr::write_csv(path, {"a", "b"}, {{"1", "2"}, {"3", "4"}});
  CHECK(slurp(path) == "a,b\n1,2\n3,4\n");

  CHECK_THROWS_AS(dlqr::write_csv(dir + "/no_such_dir/x.csv", {"a"}, {}),
                  dlqr::io_error);
}

TEST_CASE("parse_config: shipped file equals the built-in experiment") {
  auto parsed = dlqr::parse_config(shipped_config());
  auto builtin = dlqr::paper_example_config();
  CHECK(parsed.mode == builtin.mode);
  CHECK(parsed.seed == builtin.seed);
  CHECK((parsed.model.A - builtin.model.A).cwiseAbs().maxCoeff() == 0.0);
  CHECK((parsed.model.Abar - builtin.model.Abar).cwiseAbs().maxCoeff() == 0.0);
  CHECK((parsed.model.B - builtin.model.B).cwiseAbs().maxCoeff() == 0.0);
  CHECK((parsed.model.Bbar - builtin.model.Bbar).cwiseAbs().maxCoeff() == 0.0);
  CHECK(parsed.model.d == builtin.model.d);
  CHECK((parsed.weights.Q - builtin.weights.Q).cwiseAbs().maxCoeff() == 0.0);
  CHECK((parsed.weights.R - builtin.weights.R).cwiseAbs().maxCoeff() == 0.0);
  CHECK((parsed.gain - builtin.gain).cwiseAbs().maxCoeff() == 0.0);
  CHECK((parsed.init.x0 - builtin.init.x0).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(parsed.init.u_hist.size() == builtin.init.u_hist.size());
  CHECK(parsed.learn.exploration_variance ==
        builtin.learn.exploration_variance);
  CHECK(parsed.learn.rollouts == builtin.learn.rollouts);
  CHECK(parsed.learn.k2 == builtin.learn.k2);
  CHECK(parsed.learn.tol == builtin.learn.tol);
  CHECK(parsed.solve.tol == builtin.solve.tol);
  CHECK(parsed.sim.horizon == builtin.sim.horizon);
}

TEST_CASE("serialize: round trip is bit-exact") {
  auto config = dlqr::paper_example_config();
  config.seed = 99;
  config.learn.ridge = 1.0 / 3.0;
  auto text = dlqr::serialize(config).dump(2);
  auto back = dlqr::config_from_json(nlohmann::json::parse(text));
  CHECK(back.mode == config.mode);
  CHECK(back.seed == config.seed);
  CHECK((back.model.A - config.model.A).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.model.Bbar - config.model.Bbar).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.weights.Q - config.weights.Q).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.gain - config.gain).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.learn.ridge == config.learn.ridge);
  CHECK(back.learn.tol == config.learn.tol);
  CHECK(back.init.u_hist[0][0] == config.init.u_hist[0][0]);
  // And serialize again: identical documents.
  CHECK(dlqr::serialize(back).dump(2) == text);
}

TEST_CASE("config_from_json: errors name the offending field") {
  auto base = dlqr::serialize(dlqr::paper_example_config());

  auto broken = base;
  broken["model"].erase("A");
  CHECK_THROWS_WITH_AS(dlqr::config_from_json(broken),
                       doctest::Contains("model.A"), dlqr::input_error);

  broken = base;
  broken["model"]["Abar"] = {{1.0, 2.0, 3.0}, {4.0, 5.0}};
  CHECK_THROWS_WITH_AS(dlqr::config_from_json(broken),
                       doctest::Contains("model.Abar"), dlqr::input_error);

  // Wrong shape for the model: caught by validation with the field named.
  broken = base;
  broken["model"]["A"] = {{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}};
  CHECK_THROWS_WITH_AS(dlqr::config_from_json(broken), doctest::Contains("A"),
                       dlqr::input_error);

  broken = base;
  broken["gain"] = {{1.0, 2.0, 3.0}};
  CHECK_THROWS_WITH_AS(dlqr::config_from_json(broken),
                       doctest::Contains("gain"), dlqr::input_error);

  broken = base;
  broken["mode"] = "optimize";
  CHECK_THROWS_WITH_AS(dlqr::config_from_json(broken),
                       doctest::Contains("mode"), dlqr::input_error);

  broken = base;
  broken["initial"]["u_history"] = {{-0.2}};
  CHECK_THROWS_WITH_AS(dlqr::config_from_json(broken),
                       doctest::Contains("u_history"), dlqr::input_error);
}

TEST_CASE("run: solve mode artifacts") {
  auto config = dlqr::parse_config(shipped_config());
  config.mode = dlqr::Mode::solve;
  config.output_dir = fresh_dir("solve");
  auto result = dlqr::run(config);
  REQUIRE(result.artifacts.size() == 4);

  auto gains = read_csv(config.output_dir + "/gains.csv");
  REQUIRE(gains.size() >= 2);
  CHECK(gains[0][0] == "source");
  CHECK(gains[0][1] == "iteration");
  CHECK(gains[0][2] == "k_1_1");
  const auto& last = gains.back();
  CHECK(last[0] == "solve");
  CHECK(std::abs(field(last, 2) - 0.8557146428) < 1e-8);
  CHECK(std::abs(field(last, 3) - (-0.2243436077)) < 1e-8);

  auto p_stack = read_csv(config.output_dir + "/p_stack.csv");
  REQUIRE(p_stack.size() == 2);
  CHECK(p_stack[0].size() == 12);  // (d+1) * n^2 value columns
  CHECK(p_stack[0][0] == "p0_1_1");
  CHECK(std::abs(field(p_stack[1], 0) - 8.8763784529) < 1e-6);

  const std::string stability = slurp(config.output_dir + "/stability.txt");
  CHECK(stability.find("verdict stabilizing") != std::string::npos);
  std::istringstream parse_radius(stability);
  std::string word;
  double radius = 0;
  parse_radius >> word >> radius;
  CHECK(word == "spectral_radius");
  CHECK(std::abs(radius - 0.2730734972) < 1e-6);

  auto summary = nlohmann::json::parse(slurp(config.output_dir + "/summary.json"));
  CHECK(summary["mode"] == "solve");
  CHECK(summary["final"]["iterations"].get<int>() <= 20);
  CHECK(summary["final"]["residual"].get<double>() < 1e-8);
  CHECK(summary["effective_config"]["model"]["delay"] == 2);
  CHECK(summary["timings"]["total_seconds"].get<double>() >= 0.0);
}

TEST_CASE("run: check-stability of the zero gain") {
  auto config = dlqr::parse_config(shipped_config());
  config.mode = dlqr::Mode::check_stability;
  config.output_dir = fresh_dir("checkstab");
  auto result = dlqr::run(config);
  REQUIRE(result.artifacts.size() == 2);
  const std::string stability = slurp(config.output_dir + "/stability.txt");
  CHECK(stability.find("verdict stabilizing") != std::string::npos);
  std::istringstream in(stability);
  std::string word;
  double radius = 0;
  in >> word >> radius;
  CHECK(std::abs(radius - 0.4405929170) < 1e-6);
  CHECK(result.summary["final"]["stabilizing"].get<bool>());
}

TEST_CASE("run: simulate mode writes a replayable trajectory") {
  auto config = dlqr::parse_config(shipped_config());
  config.mode = dlqr::Mode::simulate;
  config.sim.horizon = 25;
  config.output_dir = fresh_dir("sim_a");
  dlqr::run(config);

  auto table = read_csv(config.output_dir + "/trajectory.csv");
  REQUIRE(table.size() == 27);  // header + k = 0..25
  CHECK(table[0] == std::vector<std::string>{"k", "x_1", "x_2", "u_1"});
  CHECK(table[1][0] == "0");
  CHECK(field(table[1], 1) == 0.4);
  CHECK(field(table[1], 2) == 0.6);
  CHECK(field(table[1], 3) == -0.2);  // u applied at k = 0 is the oldest queued
  CHECK(table.back()[0] == "25");

  auto again = config;
  again.output_dir = fresh_dir("sim_b");
  dlqr::run(again);
  CHECK(slurp(config.output_dir + "/trajectory.csv") ==
        slurp(again.output_dir + "/trajectory.csv"));
}

TEST_CASE("run: learn mode converges and replays byte for byte") {
  auto config = dlqr::parse_config(shipped_config());
  config.mode = dlqr::Mode::learn;
  config.seed = 2;
  config.learn.rollouts = 150;
  config.learn.tol = 0.02;
  config.learn.max_policy_iters = 15;
  config.output_dir = fresh_dir("learn_a");
  auto result = dlqr::run(config);

  auto model = config.model;
  auto sol = dlqr::solve_optimal(model, config.weights, Mat::Zero(1, 2));
  auto gains = read_csv(config.output_dir + "/gains.csv");
  REQUIRE(gains.size() >= 2);
  const auto& last = gains.back();
  CHECK(last[0] == "learn");
  CHECK(std::abs(field(last, 2) - sol.K(0, 0)) < 0.1);
  CHECK(std::abs(field(last, 3) - sol.K(0, 1)) < 0.1);
  CHECK(result.summary["final"]["converged"].get<bool>());

  auto again = config;
  again.output_dir = fresh_dir("learn_b");
  dlqr::run(again);
  CHECK(slurp(config.output_dir + "/gains.csv") ==
        slurp(again.output_dir + "/gains.csv"));
  CHECK(slurp(config.output_dir + "/p_stack.csv") ==
        slurp(again.output_dir + "/p_stack.csv"));
}

TEST_CASE("run: paper-example mixes the solved and learned gains") {
  auto config = dlqr::paper_example_config();
  config.output_dir = fresh_dir("paperex");
  auto result = dlqr::run(config);

  auto gains = read_csv(config.output_dir + "/gains.csv");
  REQUIRE(gains.size() >= 3);
  CHECK(gains[1][0] == "solve");
  CHECK(std::abs(field(gains[1], 2) - 0.8557146428) < 1e-8);
  CHECK(std::abs(field(gains[1], 3) - (-0.2243436077)) < 1e-8);
  const auto& last = gains.back();
  CHECK(last[0] == "learn");
  CHECK(std::abs(field(last, 2) - 0.8557146428) <= 0.05);
  CHECK(std::abs(field(last, 3) - (-0.2243436077)) <= 0.05);

  auto p_stack = read_csv(config.output_dir + "/p_stack.csv");
  CHECK(p_stack[0].size() == 12);
  CHECK(result.summary["final"]["converged"].get<bool>());
  CHECK(result.summary["final"]["gain_gap"].get<double>() <= 0.05);
  const std::string stability = slurp(config.output_dir + "/stability.txt");
  CHECK(stability.find("verdict stabilizing") != std::string::npos);
}

TEST_CASE("cli_main: exit codes and overrides") {
  auto code = [](std::vector<const char*> args) {
    args.insert(args.begin(), "delaylqr");
    return dlqr::cli_main(static_cast<int>(args.size()), args.data());
  };

  CHECK(code({}) == 2);                    // missing subcommand
  CHECK(code({"solve"}) == 2);             // missing --config
  CHECK(code({"solve", "--config", "/no/such/file.json"}) == 4);

  const std::string dir = fresh_dir("cli");
  fs::create_directories(dir);

  const std::string bad_json = dir + "/broken.json";
  std::ofstream(bad_json) << "{ \"mode\": ";
  CHECK(code({"solve", "--config", bad_json.c_str()}) == 2);

  // A gain that cannot stabilize an explosive scalar plant: numerical exit.
  const std::string unstable = dir + "/unstable.json";
  std::ofstream(unstable) << R"({
    "mode": "solve",
    "model": {"A": [[2.0]], "Abar": [[0.0]], "B": [[1.0]], "Bbar": [[0.0]],
              "delay": 1},
    "weights": {"Q": [[1.0]], "R": [[1.0]]},
    "gain": [[0.0]],
    "output_dir": ")" << dir << R"(/unstable_out"
  })";
  CHECK(code({"solve", "--config", unstable.c_str()}) == 3);

  const std::string cfg = shipped_config();
  const std::string out1 = fresh_dir("cli_ok");
  CHECK(code({"check-stability", "--config", cfg.c_str(), "--out",
              out1.c_str()}) == 0);
  CHECK(fs::exists(out1 + "/stability.txt"));

  const std::string out2 = fresh_dir("cli_sim");
  CHECK(code({"simulate", "--config", cfg.c_str(), "--out", out2.c_str(),
              "--horizon", "5"}) == 0);
  CHECK(read_csv(out2 + "/trajectory.csv").size() == 7);  // header + 6 rows

  // The seed override reaches the summary and the effective config echo.
  const std::string out3 = fresh_dir("cli_seed");
  CHECK(code({"simulate", "--config", cfg.c_str(), "--out", out3.c_str(),
              "--seed", "77", "--horizon", "5"}) == 0);
  auto summary = nlohmann::json::parse(slurp(out3 + "/summary.json"));
  CHECK(summary["seed"].get<std::uint64_t>() == 77);
  CHECK(summary["effective_config"]["seed"].get<std::uint64_t>() == 77);
}
