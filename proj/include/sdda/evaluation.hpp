#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdda/training.hpp"

namespace sdda {

using Json = nlohmann::json;

class EvaluationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or unknown configuration content.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// 100 * correct / n.
double accuracy(std::span<const int> predicted, std::span<const int> truth);
// 100 - accuracy, so the pair sums to exactly 100.
double error_rate(std::span<const int> predicted, std::span<const int> truth);

// Rank-based (Mann-Whitney) AUC; label 1 is the positive class, tied scores count one half.
double auc(std::span<const double> scores, std::span<const int> labels);

// Ablation variants: each toggles which of the configured alpha, beta, gamma stay on.
struct Variant {
  std::string name;
  bool sd = false;
  bool ma = false;
  bool cl = false;

  LossWeights apply(LossWeights weights) const;
};
const std::vector<Variant>& standard_variants();
Variant variant_from_name(const std::string& name);

struct DataSource {
  std::optional<SynthSpec> synth;
  std::filesystem::path source_path, target_path;  // binary datasets when synth is empty
};

struct ExperimentConfig {
  DataSource data;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<std::string> variants{"CE", "CE+SD", "CE+MA", "CE+CL", "CE+MA+CL", "SDDA"};
  std::vector<Scenario> scenarios{Scenario::UDA};
  bool record_timing = false;  // wall-clock in the report breaks byte-identical reruns
};

// JSON <-> config. Unknown keys are rejected with ConfigError naming the key path.
SynthSpec synth_spec_from_json(const Json& j);
Json to_json(const SynthSpec& spec);
TrainConfig train_config_from_json(const Json& j);
Json to_json(const TrainConfig& config);
ExperimentConfig experiment_config_from_json(const Json& j, const std::filesystem::path& base_dir = {});
Json to_json(const ExperimentConfig& config);
Json read_json_file(const std::filesystem::path& path);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Source and target domains a data block resolves to.
std::pair<Domain, Domain> resolve_domains(const DataSource& data);

// Metrics of a trained student on the held-out target trials.
Json evaluate_student(const Network<float>& student, const TargetSplit& split, std::size_t classes);
// ce_target appears for SDA only.
Json history_to_json(const TrainHistory& history, Scenario scenario);

// Implementation choices recorded in every report.
Json design_flags();

// Seeds x variants x scenarios sweep. A failing cell is recorded and the rest continue.
Json run_experiment(const ExperimentConfig& config);
Json run_experiment(const std::filesystem::path& config_path, const std::filesystem::path& out_dir);

// Sorted keys, floats rounded to 1e-6, two-space indent, trailing newline.
std::string canonical_dump(const Json& report);
Json canonicalize(const Json& value);

// Exception -> (category, process exit code): config 1, data 2, numerical 3.
struct ErrorClass {
  std::string kind;
  int exit_code;
};
ErrorClass classify_error(const std::exception& e);

inline constexpr int kReportFormatVersion = 1;

}  // namespace sdda
