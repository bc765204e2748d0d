#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "sdda/alignment.hpp"
#include "sdda/diagnostics.hpp"
#include "sdda/evaluation.hpp"

namespace fs = std::filesystem;
using namespace sdda;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

int cmd_synth(const std::string& spec_path, const fs::path& out_dir) {
  SynthSpec spec;
  if (!spec_path.empty()) spec = synth_spec_from_json(read_json_file(spec_path));
  const auto [source, target] = synth_generate(spec);
  fs::create_directories(out_dir);
  save_dataset(source, out_dir / "source.sdda");
  save_dataset(target, out_dir / "target.sdda");
  std::cout << "source: " << source.trial_count() << " trials, " << source.channel_names.size() << " channels\n"
            << "target: " << target.trial_count() << " trials, " << target.channel_names.size() << " channels\n";
  return 0;
}

int cmd_align(const fs::path& in, const fs::path& out) {
  Domain d = load_dataset(in);
  for (auto& s : d.sessions) s = euclidean_align_session(s);
  save_dataset(d, out);
  return 0;
}

int cmd_train(const fs::path& config_path, const fs::path& out_dir, const std::string& variant) {
  const ExperimentConfig config = load_experiment_config(config_path);
  TrainConfig tc = config.train;
  tc.seed = config.seeds.front();
  if (!variant.empty()) tc.weights = variant_from_name(variant).apply(tc.weights);
  const auto [source, target] = resolve_domains(config.data);
  const TrainResult result = train_sdda(tc, source, target);
  fs::create_directories(out_dir);
  save_checkpoint(result.student, out_dir / "student.ckpt");
  save_checkpoint(result.teacher, out_dir / "teacher.ckpt");
  write_text(out_dir / "history.json", canonical_dump(history_to_json(result.history, tc.scenario)));
  const bool labelled = std::all_of(result.target.test.begin(), result.target.test.end(), [](const Session& s) {
    return std::all_of(s.trials.begin(), s.trials.end(), [](const Trial& t) { return t.label.has_value(); });
  });
  if (labelled) {
    const Json metrics = evaluate_student(result.student, result.target, target.classes);
    write_text(out_dir / "metrics.json", canonical_dump(metrics));
    std::cout << "target accuracy: " << metrics["accuracy"].get<double>() << "%\n";
  }
  return 0;
}

int cmd_eval(const fs::path& student_path, const fs::path& data_path, const std::string& scenario,
             std::size_t labeled_target, const std::string& report) {
  const Network<float> student = load_checkpoint(student_path);
  const Domain target = load_dataset(data_path, DomainRole::Target);
  const TargetSplit split = split_target(target, scenario_from_string(scenario), labeled_target);
  const std::string text = canonical_dump(evaluate_student(student, split, target.classes));
  std::cout << text;
  if (!report.empty()) write_text(report, text);
  return 0;
}

int cmd_run(const fs::path& config_path, const fs::path& out_dir) {
  const Json report = run_experiment(config_path, out_dir);
  std::cout << std::left << std::setw(6) << "scen" << std::setw(10) << "variant" << "accuracy (mean +- std)\n";
  for (const auto& row : report["summary"]) {
    std::cout << std::setw(6) << row["scenario"].get<std::string>() << std::setw(10)
              << row["variant"].get<std::string>();
    const auto& acc = row["accuracy"];
    if (acc["mean"].is_null()) {
      std::cout << "failed";
    } else {
      std::cout << std::fixed << std::setprecision(2) << acc["mean"].get<double>();
      if (!acc["std"].is_null()) std::cout << " +- " << acc["std"].get<double>();
    }
    std::cout << '\n';
  }
  std::size_t failed = 0;
  for (const auto& cell : report["cells"]) failed += cell["status"] == "ok" ? 0 : 1;
  if (failed) std::cerr << failed << " cell(s) failed; see report.json\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tol) {
  bool ok = true;
  auto show = [&](const std::vector<NamedCheck>& checks) {
    for (const auto& c : checks) {
      double worst = 0.0;
      for (const auto& leaf : c.report.leaves) worst = std::max(worst, leaf.max_error);
      std::cout << (c.report.passed ? "ok   " : "FAIL ") << c.name << " max_err=" << std::scientific
                << std::setprecision(2) << worst << '\n';
      if (!c.report.passed) std::cout << c.report.summary();
      ok = ok && c.report.passed;
    }
  };
  show(primitive_grad_checks(seed, tol));
  show(objective_grad_checks(seed, tol));
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-headset EEG domain adaptation with spatial distillation"};
  app.require_subcommand(1);

  std::string spec, config, variant, scenario = "UDA", report;
  fs::path out, in, student, data;
  std::size_t labeled_target = 32;
  std::uint64_t seed = 0;
  double tol = 1e-5;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic source/target dataset pair");
  synth->add_option("--spec", spec, "JSON generator settings (defaults if omitted)")->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output directory")->required();

  auto* align = app.add_subcommand("align", "Whiten every session of a dataset");
  align->add_option("--in", in, "Input dataset")->required();
  align->add_option("--out", out, "Output dataset")->required();

  auto* train = app.add_subcommand("train", "Train one teacher/student pair");
  train->add_option("--config", config, "Experiment config")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--variant", variant, "Ablation variant applied to the configured weights");

  auto* eval = app.add_subcommand("eval", "Score a student checkpoint on a target dataset");
  eval->add_option("--student", student, "Student checkpoint")->required();
  eval->add_option("--data", data, "Target dataset")->required();
  eval->add_option("--scenario", scenario, "UDA or SDA");
  eval->add_option("--labeled-target", labeled_target, "Calibration trials (SDA)");
  eval->add_option("--report", report, "Also write the metrics to this file");

  auto* run = app.add_subcommand("run", "Run the seeds x variants x scenarios sweep");
  run->add_option("--config", config, "Experiment config")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "Output directory")->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of all primitives and objectives");
  grad->add_option("--seed", seed, "Random seed");
  grad->add_option("--tol", tol, "Relative tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(spec, out);
    if (*align) return cmd_align(in, out);
    if (*train) return cmd_train(config, out, variant);
    if (*eval) return cmd_eval(student, data, scenario, labeled_target, report);
    if (*run) return cmd_run(config, out);
    if (*grad) return cmd_gradcheck(seed, tol);
  } catch (const std::exception& e) {
    const ErrorClass c = classify_error(e);
    std::cerr << "error (" << c.kind << "): " << e.what() << '\n';
    return c.exit_code;
  }
  return 1;
}
