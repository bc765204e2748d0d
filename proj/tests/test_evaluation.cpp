#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sdda/evaluation.hpp"

using namespace sdda;
namespace fs = std::filesystem;

namespace {

Json tiny_config() {
  return Json::parse(R"({
    "data": {"synth": {"trials_per_class": 10, "samples": 64}},
    "train": {"epochs": 1, "batch_size": 8, "labeled_target": 8},
    "seeds": [0],
    "variants": ["CE"]
  })");
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "sdda_test_evaluation";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("accuracy examples") {
  const std::vector<int> t{0, 1, 1, 0};
  CHECK(accuracy(t, t) == 100.0);
  CHECK(accuracy(std::vector<int>{1, 0, 0, 1}, t) == 0.0);
  CHECK(accuracy(std::vector<int>{0, 1, 1, 1}, t) == 75.0);
  CHECK_THROWS_AS(accuracy(std::vector<int>{}, std::vector<int>{}), EvaluationError);
  CHECK_THROWS_AS(accuracy(std::vector<int>{0}, t), EvaluationError);
}

TEST_CASE("accuracy and error rate sum to exactly 100") {
  for (int n = 1; n <= 60; ++n) {
    std::vector<int> truth(static_cast<std::size_t>(n), 1);
    for (int k = 0; k <= n; ++k) {
      std::vector<int> pred(static_cast<std::size_t>(n), 0);
      for (int i = 0; i < k; ++i) pred[static_cast<std::size_t>(i)] = 1;
      CHECK(accuracy(pred, truth) + error_rate(pred, truth) == 100.0);
    }
  }
}

TEST_CASE("auc examples") {
  CHECK(auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{1, 1, 0, 0}) == 1.0);
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{1, 1, 0, 0}) == 0.0);
  CHECK(auc(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}) == 0.5);
  CHECK_THROWS_AS(auc(std::vector<double>{0.5, 0.7}, std::vector<int>{1, 1}), EvaluationError);
  CHECK_THROWS_AS(auc(std::vector<double>{0.5, 0.7}, std::vector<int>{1, 2}), EvaluationError);
  CHECK_THROWS_AS(auc(std::vector<double>{0.5, NAN}, std::vector<int>{1, 0}), EvaluationError);
}

TEST_CASE("rank auc equals the all-pairs count, with ties") {
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    const std::size_t n = 2 + rng.below(30);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.below(6)) / 5.0;
      labels[i] = static_cast<int>(rng.below(2));
    }
    labels[0] = 0;
    labels[1] = 1;
    CHECK(std::abs(auc(scores, labels) - oracle::auc_pairs(scores, labels)) <= 1e-12);
  }
}

TEST_CASE("variants mask the configured weights") {
  LossWeights w;
  w.alpha = 0.5;
  w.beta = 2.0;
  w.gamma = 3.0;
  const auto ce = variant_from_name("CE").apply(w);
  CHECK(ce.alpha == 0.0);
  CHECK(ce.beta == 0.0);
  CHECK(ce.gamma == 0.0);
  const auto macl = variant_from_name("CE+MA+CL").apply(w);
  CHECK(macl.alpha == 0.0);
  CHECK(macl.beta == 2.0);
  CHECK(macl.gamma == 3.0);
  CHECK(variant_from_name("SDDA").apply(w).alpha == 0.5);
  CHECK(standard_variants().size() == 6);
  CHECK_THROWS_AS(variant_from_name("CE+XX"), ConfigError);
}

TEST_CASE("config parsing") {
  auto c = experiment_config_from_json(tiny_config());
  REQUIRE(c.data.synth.has_value());
  CHECK(c.data.synth->trials_per_class == 10);
  CHECK(c.data.synth->source_channels == 8);
  CHECK(c.train.epochs == 1);
  CHECK(c.train.batch_size == 8);
  CHECK(c.train.adam.learning_rate == 1e-3);
  CHECK(c.scenarios == std::vector<Scenario>{Scenario::UDA});
  // to_json -> from_json is a fixed point
  CHECK(to_json(experiment_config_from_json(to_json(c))) == to_json(c));

  auto j = tiny_config();
  j["train"]["kernel"] = {{"mode", "fixed"}, {"bandwidths", {1.0, 2.0}}};
  const auto k = experiment_config_from_json(j).train.kernel;
  CHECK(k.mode == KernelSpec::Bandwidth::Fixed);
  CHECK(k.weights == std::vector<double>{0.5, 0.5});

  auto paths = experiment_config_from_json(Json::parse(R"({"data":{"source":"a.sdda","target":"b.sdda"}})"), "/data");
  CHECK(paths.data.source_path == fs::path("/data/a.sdda"));
  CHECK_FALSE(paths.data.synth.has_value());
}

TEST_CASE("unknown and malformed config keys are rejected by path") {
  auto j = tiny_config();
  j["train"]["learnng_rate"] = 0.1;
  CHECK_THROWS_WITH_AS(experiment_config_from_json(j), doctest::Contains("train.learnng_rate"), ConfigError);
  j = tiny_config();
  j["data"]["synth"]["chanels"] = 3;
  CHECK_THROWS_WITH_AS(experiment_config_from_json(j), doctest::Contains("synth.chanels"), ConfigError);
  j = tiny_config();
  j["extra"] = true;
  CHECK_THROWS_AS(experiment_config_from_json(j), ConfigError);
  j = tiny_config();
  j["train"]["epochs"] = -3;
  CHECK_THROWS_AS(experiment_config_from_json(j), ConfigError);
  j = tiny_config();
  j["train"]["gamma"] = "one";
  CHECK_THROWS_AS(experiment_config_from_json(j), ConfigError);
  j = tiny_config();
  j["data"]["synth"]["common_channels"] = 20;
  CHECK_THROWS_AS(experiment_config_from_json(j), ConfigError);
  j = tiny_config();
  j["scenarios"] = {"offline"};
  CHECK_THROWS_AS(experiment_config_from_json(j), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(Json::parse(R"({"train":{}})")), ConfigError);
}

TEST_CASE("one seed, one variant gives one cell") {
  const auto report = run_experiment(experiment_config_from_json(tiny_config()));
  CHECK(report["cells"].size() == 1);
  CHECK(report["cells"][0]["status"] == "ok");
  CHECK(report["summary"].size() == 1);
  CHECK(report["summary"][0]["accuracy"]["std"].is_null());
  CHECK(report["format_version"] == kReportFormatVersion);
  CHECK(report["design"]["confusion_normalization"] == "none");
  CHECK(report["design"]["probability_floor"] == "1e-12");
  CHECK(report["cells"][0]["history"].size() == 1);
  CHECK_FALSE(report.contains("wall_clock_seconds"));
}

TEST_CASE("summary statistics are recomputable from the cells") {
  auto j = tiny_config();
  j["seeds"] = {0, 1, 2, 3, 4};
  j["scenarios"] = {"uda", "sda"};
  const auto report = run_experiment(experiment_config_from_json(j));
  CHECK(report["cells"].size() == 10);
  for (const auto& row : report["summary"]) {
    std::vector<double> values;
    for (const auto& cell : report["cells"]) {
      if (cell["scenario"] == row["scenario"] && cell["variant"] == row["variant"]) {
        values.push_back(cell["metrics"]["accuracy"].get<double>());
      }
    }
    REQUIRE(values.size() == 5);
    double mean = 0.0;
    for (double v : values) mean += v / 5.0;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    CHECK(std::abs(row["accuracy"]["mean"].get<double>() - mean) < 1e-6);
    CHECK(std::abs(row["accuracy"]["std"].get<double>() - std::sqrt(ss / 4.0)) < 1e-6);
    CHECK(std::abs(row["auc"]["mean"].get<double>()) <= 1.0);
  }
}

TEST_CASE("failing cells are recorded and the sweep continues") {
  auto j = tiny_config();
  j["scenarios"] = {"sda", "uda"};
  j["train"]["labeled_target"] = 500;
  const auto report = run_experiment(experiment_config_from_json(j));
  CHECK(report["cells"][0]["status"] == "error");
  CHECK(report["cells"][0]["error"]["kind"] == "data");
  CHECK(report["cells"][1]["status"] == "ok");
  CHECK(report["summary"][0]["failed_seeds"] == 1);
  CHECK(report["summary"][0]["accuracy"]["mean"].is_null());
}

TEST_CASE("reports are deterministic and canonical") {
  const auto cfg = scratch("cfg.json");
  {
    std::ofstream out(cfg);
    out << tiny_config().dump();
  }
  run_experiment(cfg, scratch("a"));
  run_experiment(cfg, scratch("b"));
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  const auto a = slurp(scratch("a") / "report.json");
  CHECK(a == slurp(scratch("b") / "report.json"));
  CHECK(canonical_dump(Json::parse(a)) == a);
}

TEST_CASE("canonical form rounds floats and clears negative zero") {
  const Json j{{"b", 0.12345678}, {"a", -0.0000001}, {"c", {1.0, 2.5e-7}}, {"d", std::nan("")}};
  CHECK(canonical_dump(j) == "{\n  \"a\": 0.0,\n  \"b\": 0.123457,\n  \"c\": [\n    1.0,\n    0.0\n  ],\n  \"d\": null\n}\n");
}

TEST_CASE("errors map to exit codes") {
  CHECK(classify_error(ConfigError("x")).exit_code == 1);
  CHECK(classify_error(TrainConfigError("x")).exit_code == 1);
  CHECK(classify_error(LossError("x")).exit_code == 1);
  CHECK(classify_error(DataError("x")).exit_code == 2);
  CHECK(classify_error(TrainingError("x")).exit_code == 2);
  CHECK(classify_error(ModelError("x")).exit_code == 2);
  CHECK(classify_error(NumericalError("x")).exit_code == 3);
  CHECK(classify_error(AlignmentError("x")).exit_code == 3);
}

TEST_CASE("record_timing adds wall-clock fields") {
  auto j = tiny_config();
  j["record_timing"] = true;
  const auto report = run_experiment(experiment_config_from_json(j));
  CHECK(report.contains("wall_clock_seconds"));
  CHECK(report["cells"][0].contains("wall_clock_seconds"));
}
