#include "sdda/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace sdda {

// ---------------------------------------------------------------------------
// Metrics

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw EvaluationError("accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                          std::to_string(truth.size()) + " labels");
  }
  if (truth.empty()) throw EvaluationError("accuracy of an empty set is undefined");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i] ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(truth.size());
}

double error_rate(std::span<const int> predicted, std::span<const int> truth) {
  return 100.0 - accuracy(predicted, truth);
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw EvaluationError("auc: " + std::to_string(scores.size()) + " scores for " + std::to_string(labels.size()) +
                          " labels");
  }
  std::size_t positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw EvaluationError("auc needs binary labels (0 or 1)");
    if (!std::isfinite(scores[i])) throw EvaluationError("auc: non-finite score at index " + std::to_string(i));
    positives += static_cast<std::size_t>(labels[i]);
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) throw EvaluationError("auc needs both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of 1-based ranks of the positives, ties sharing their average rank.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double shared = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum += shared;
    }
    i = j;
  }
  const double np = static_cast<double>(positives), nn = static_cast<double>(negatives);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

// ---------------------------------------------------------------------------
// Variants

LossWeights Variant::apply(LossWeights weights) const {
  if (!sd) weights.alpha = 0.0;
  if (!ma) weights.beta = 0.0;
  if (!cl) weights.gamma = 0.0;
  return weights;
}

const std::vector<Variant>& standard_variants() {
  static const std::vector<Variant> variants{
      {"CE", false, false, false},     {"CE+SD", true, false, false},   {"CE+MA", false, true, false},
      {"CE+CL", false, false, true},   {"CE+MA+CL", false, true, true}, {"SDDA", true, true, true},
  };
  return variants;
}

Variant variant_from_name(const std::string& name) {
  std::string known;
  for (const auto& v : standard_variants()) {
    if (v.name == name) return v;
    known += (known.empty() ? "" : ", ") + v.name;
  }
  throw ConfigError("unknown variant '" + name + "' (expected one of " + known + ")");
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

bool non_negative_integer(const Json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Reads members of one JSON object and rejects any member nobody asked for.
class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) {
    known_.insert(key);
    return j_.contains(key);
  }

  const Json& raw(const std::string& key) {
    known_.insert(key);
    return j_.at(key);
  }

  void count(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const Json& v = j_.at(key);
    if (!non_negative_integer(v)) throw ConfigError(at(key) + " must be a non-negative integer");
    out = v.get<std::size_t>();
  }

  void seed(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const Json& v = j_.at(key);
    if (!non_negative_integer(v)) throw ConfigError(at(key) + " must be a non-negative integer");
    out = v.get<std::uint64_t>();
  }

  void real(const std::string& key, double& out) {
    if (!has(key)) return;
    const Json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(at(key) + " must be a number");
    out = v.get<double>();
  }

  void flag(const std::string& key, bool& out) {
    if (!has(key)) return;
    const Json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(at(key) + " must be true or false");
    out = v.get<bool>();
  }

  void text(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const Json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(at(key) + " must be a string");
    out = v.get<std::string>();
  }

  void reals(const std::string& key, std::vector<double>& out) {
    if (!has(key)) return;
    const Json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(at(key) + " must be an array of numbers");
    out.clear();
    for (const auto& x : v) {
      if (!x.is_number()) throw ConfigError(at(key) + " must be an array of numbers");
      out.push_back(x.get<double>());
    }
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!known_.contains(key)) throw ConfigError("unknown config key '" + at(key) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }
  const Json& j_;
  std::string path_;
  std::set<std::string> known_;
};

template <typename F>
auto rethrow_as_config(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace

SynthSpec synth_spec_from_json(const Json& j) {
  SynthSpec s;
  Fields f(j, "synth");
  f.count("source_channels", s.source_channels);
  f.count("common_channels", s.common_channels);
  f.count("samples", s.samples);
  f.count("classes", s.classes);
  f.count("trials_per_class", s.trials_per_class);
  f.count("source_sessions", s.source_sessions);
  f.count("target_sessions", s.target_sessions);
  f.real("sampling_rate", s.sampling_rate);
  f.real("snr", s.snr);
  f.real("session_jitter", s.session_jitter);
  f.real("domain_shift", s.domain_shift);
  f.real("class_ratio", s.class_ratio);
  f.seed("seed", s.seed);
  f.finish();
  rethrow_as_config("synth", [&] {
    s.validate();
    return 0;
  });
  return s;
}

Json to_json(const SynthSpec& s) {
  return Json{{"source_channels", s.source_channels},
              {"common_channels", s.common_channels},
              {"samples", s.samples},
              {"classes", s.classes},
              {"trials_per_class", s.trials_per_class},
              {"source_sessions", s.source_sessions},
              {"target_sessions", s.target_sessions},
              {"sampling_rate", s.sampling_rate},
              {"snr", s.snr},
              {"session_jitter", s.session_jitter},
              {"domain_shift", s.domain_shift},
              {"class_ratio", s.class_ratio},
              {"seed", s.seed}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  Fields f(j, "train");
  std::string scenario = to_string(c.scenario);
  f.text("scenario", scenario);
  c.scenario = rethrow_as_config("train.scenario", [&] { return scenario_from_string(scenario); });
  f.count("epochs", c.epochs);
  f.count("batch_size", c.batch_size);
  f.real("learning_rate", c.adam.learning_rate);
  f.real("beta1", c.adam.beta1);
  f.real("beta2", c.adam.beta2);
  f.real("eps", c.adam.eps);
  f.seed("seed", c.seed);
  f.count("labeled_target", c.labeled_target);
  f.real("alpha", c.weights.alpha);
  f.real("beta", c.weights.beta);
  f.real("gamma", c.weights.gamma);
  f.real("distill_temperature", c.weights.distill_temperature);
  f.real("confusion_temperature", c.weights.confusion_temperature);
  if (f.has("kernel")) {
    Fields k(f.raw("kernel"), "train.kernel");
    std::string mode = "median";
    k.text("mode", mode);
    if (mode == "median") {
      c.kernel.mode = KernelSpec::Bandwidth::MedianScaled;
    } else if (mode == "fixed") {
      c.kernel.mode = KernelSpec::Bandwidth::Fixed;
    } else {
      throw ConfigError("train.kernel.mode must be \"median\" or \"fixed\", got \"" + mode + "\"");
    }
    const bool has_weights = k.has("weights");
    k.reals("bandwidths", c.kernel.bandwidths);
    k.reals("weights", c.kernel.weights);
    if (!has_weights) {
      c.kernel.weights.assign(c.kernel.bandwidths.size(),
                              c.kernel.bandwidths.empty() ? 0.0 : 1.0 / static_cast<double>(c.kernel.bandwidths.size()));
    }
    k.finish();
  }
  if (f.has("arch")) {
    Fields a(f.raw("arch"), "train.arch");
    a.count("temporal_filters", c.arch.temporal_filters);
    a.count("depth_multiplier", c.arch.depth_multiplier);
    a.count("pointwise_filters", c.arch.pointwise_filters);
    a.count("temporal_length", c.arch.temporal_length);
    a.count("separable_length", c.arch.separable_length);
    a.count("pool1", c.arch.pool1);
    a.count("pool2", c.arch.pool2);
    a.real("dropout", c.arch.dropout);
    a.finish();
  }
  f.finish();
  rethrow_as_config("train", [&] {
    c.weights.validate();
    c.kernel.validate();
    if (c.epochs == 0) throw ConfigError("train.epochs must be positive");
    if (c.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (!(c.adam.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
    return 0;
  });
  return c;
}

Json to_json(const TrainConfig& c) {
  return Json{{"scenario", to_string(c.scenario)},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.adam.learning_rate},
              {"beta1", c.adam.beta1},
              {"beta2", c.adam.beta2},
              {"eps", c.adam.eps},
              {"seed", c.seed},
              {"labeled_target", c.labeled_target},
              {"alpha", c.weights.alpha},
              {"beta", c.weights.beta},
              {"gamma", c.weights.gamma},
              {"distill_temperature", c.weights.distill_temperature},
              {"confusion_temperature", c.weights.confusion_temperature},
              {"kernel",
               {{"mode", c.kernel.mode == KernelSpec::Bandwidth::Fixed ? "fixed" : "median"},
                {"bandwidths", c.kernel.bandwidths},
                {"weights", c.kernel.weights}}},
              {"arch",
               {{"temporal_filters", c.arch.temporal_filters},
                {"depth_multiplier", c.arch.depth_multiplier},
                {"pointwise_filters", c.arch.pointwise_filters},
                {"temporal_length", c.arch.temporal_length},
                {"separable_length", c.arch.separable_length},
                {"pool1", c.arch.pool1},
                {"pool2", c.arch.pool2},
                {"dropout", c.arch.dropout}}}};
}

ExperimentConfig experiment_config_from_json(const Json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  Fields f(j, "");
  if (!f.has("data")) throw ConfigError("config needs a 'data' block");
  {
    Fields d(f.raw("data"), "data");
    if (d.has("synth")) {
      if (d.has("source") || d.has("target")) throw ConfigError("data takes either 'synth' or 'source'/'target'");
      c.data.synth = synth_spec_from_json(d.raw("synth"));
    } else {
      std::string source, target;
      d.text("source", source);
      d.text("target", target);
      if (source.empty() || target.empty()) throw ConfigError("data needs 'synth' or both 'source' and 'target'");
      c.data.source_path = base_dir / source;
      c.data.target_path = base_dir / target;
    }
    d.finish();
  }
  if (f.has("train")) c.train = train_config_from_json(f.raw("train"));
  if (f.has("seeds")) {
    const Json& s = f.raw("seeds");
    if (!s.is_array() || s.empty()) throw ConfigError("seeds must be a non-empty array");
    c.seeds.clear();
    for (const auto& x : s) {
      if (!non_negative_integer(x)) throw ConfigError("seeds must be non-negative integers");
      c.seeds.push_back(x.get<std::uint64_t>());
    }
  }
  if (f.has("variants")) {
    const Json& v = f.raw("variants");
    if (!v.is_array() || v.empty()) throw ConfigError("variants must be a non-empty array");
    c.variants.clear();
    for (const auto& x : v) {
      if (!x.is_string()) throw ConfigError("variants must be strings");
      c.variants.push_back(variant_from_name(x.get<std::string>()).name);
    }
  }
  if (f.has("scenarios")) {
    const Json& v = f.raw("scenarios");
    if (!v.is_array() || v.empty()) throw ConfigError("scenarios must be a non-empty array");
    c.scenarios.clear();
    for (const auto& x : v) {
      if (!x.is_string()) throw ConfigError("scenarios must be strings");
      c.scenarios.push_back(rethrow_as_config("scenarios", [&] { return scenario_from_string(x.get<std::string>()); }));
    }
  }
  f.flag("record_timing", c.record_timing);
  f.finish();
  return c;
}

Json to_json(const ExperimentConfig& c) {
  Json data;
  if (c.data.synth) {
    data["synth"] = to_json(*c.data.synth);
  } else {
    data["source"] = c.data.source_path.generic_string();
    data["target"] = c.data.target_path.generic_string();
  }
  Json scenarios = Json::array();
  for (auto s : c.scenarios) scenarios.push_back(to_string(s));
  return Json{{"data", data},     {"train", to_json(c.train)},          {"seeds", c.seeds},
              {"variants", c.variants}, {"scenarios", scenarios}, {"record_timing", c.record_timing}};
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return experiment_config_from_json(read_json_file(path), path.parent_path());
}

std::pair<Domain, Domain> resolve_domains(const DataSource& data) {
  if (data.synth) return synth_generate(*data.synth);
  return {load_dataset(data.source_path, DomainRole::Source), load_dataset(data.target_path, DomainRole::Target)};
}

// ---------------------------------------------------------------------------
// Reports

namespace {

double round6(double v) {
  const double r = std::round(v * 1e6) / 1e6;
  return r == 0.0 ? 0.0 : r;
}

Json number_or_null(std::optional<double> v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return round6(*v);
}

Json domain_summary(const Domain& d) {
  Json sessions = Json::array();
  for (const auto& s : d.sessions) sessions.push_back(s.size());
  return Json{{"channels", d.channel_names},
              {"classes", d.classes},
              {"samples", d.sessions.empty() ? 0 : d.sessions.front().samples()},
              {"sampling_rate", d.sessions.empty() ? 0.0 : d.sessions.front().sampling_rate},
              {"session_trials", sessions}};
}

std::optional<double> safe_auc(std::span<const double> scores, std::span<const int> labels) {
  const bool both = std::find(labels.begin(), labels.end(), 0) != labels.end() &&
                    std::find(labels.begin(), labels.end(), 1) != labels.end();
  if (!both) return std::nullopt;
  return auc(scores, labels);
}

Json mean_std(const std::vector<double>& values) {
  Json out{{"values", values}, {"mean", nullptr}, {"std", nullptr}};
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  out["mean"] = round6(mean);
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    out["std"] = round6(std::sqrt(ss / (n - 1.0)));
  }
  return out;
}

}  // namespace

Json evaluate_student(const Network<float>& student, const TargetSplit& split, std::size_t classes) {
  std::vector<int> all_pred, all_true;
  std::vector<double> all_scores;
  Json sessions = Json::array();
  for (std::size_t s = 0; s < split.test.size(); ++s) {
    const Session& session = split.test[s];
    if (session.empty()) continue;
    std::vector<int> truth;
    for (const auto& t : session.trials) {
      if (!t.label) throw EvaluationError("target test trials must be labelled to be scored");
      truth.push_back(*t.label);
    }
    const Prediction pred = predict(student, session, split.test_alignment);
    std::vector<double> positive;
    if (classes == 2) {
      for (std::size_t i = 0; i < session.size(); ++i) positive.push_back(pred.scores(i, 1));
    }
    Json entry{{"session", s}, {"trials", session.size()}, {"accuracy", round6(accuracy(pred.labels, truth))}};
    entry["auc"] = classes == 2 ? number_or_null(safe_auc(positive, truth)) : Json(nullptr);
    sessions.push_back(entry);
    all_pred.insert(all_pred.end(), pred.labels.begin(), pred.labels.end());
    all_true.insert(all_true.end(), truth.begin(), truth.end());
    all_scores.insert(all_scores.end(), positive.begin(), positive.end());
  }
  if (all_true.empty()) throw EvaluationError("no target test trials to score");
  Json out{{"accuracy", round6(accuracy(all_pred, all_true))}, {"trials", all_true.size()}, {"sessions", sessions}};
  out["auc"] = classes == 2 ? number_or_null(safe_auc(all_scores, all_true)) : Json(nullptr);
  return out;
}

Json history_to_json(const TrainHistory& history, Scenario scenario) {
  Json out = Json::array();
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& h = history[e];
    Json row{{"epoch", e},
             {"ce_source", round6(h.ce_source)},
             {"sd", round6(h.sd)},
             {"ma", round6(h.ma)},
             {"cl", round6(h.cl)},
             {"student_total", round6(h.student_total)},
             {"teacher_total", round6(h.teacher_total)},
             {"target_accuracy", number_or_null(h.target_accuracy)}};
    if (scenario == Scenario::SDA) row["ce_target"] = round6(h.ce_target);
    out.push_back(std::move(row));
  }
  return out;
}

Json design_flags() {
  // tiny constants as text so the 1e-6 rounding keeps them
  auto exact = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  return Json{{"argmax_tie_break", "lowest_index"},
              {"auc_method", "average_rank"},
              {"batch_norm_running_stats", "source_batches_only"},
              {"common_source_alignment", "subset_then_align"},
              {"confusion_normalization", "none"},
              {"confusion_probabilities", "softened"},
              {"distill_kl_direction", "student_to_teacher"},
              {"distill_softening", "both_sides"},
              {"ea_granularity", "per_session"},
              {"ea_ridge", exact(kCovarianceRidge)},
              {"loss_reduction", {{"cross_entropy", "batch_mean"}, {"sd", "batch_mean"}, {"confusion", "sum"}}},
              {"mmd_bandwidth_gradient", "constant"},
              {"mmd_estimator", "biased_v_statistic"},
              {"probability_floor", exact(kProbabilityFloor)},
              {"sda_calibration", "first_n_l_trials_of_first_target_session"},
              {"sda_test_alignment", "frozen_calibration_reference"},
              {"seed_std", "sample"},
              {"target_pairing", "cycled_equal_size"},
              {"teacher_logits", "constant"},
              {"teacher_student_order", "teacher_first"},
              {"uda_test_alignment", "per_session"}};
}

ErrorClass classify_error(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const LossError*>(&e)) return {"config", 1};
  if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const AlignmentError*>(&e)) return {"numerical", 3};
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const TrainingError*>(&e) ||
      dynamic_cast<const ModelError*>(&e) || dynamic_cast<const EvaluationError*>(&e) ||
      dynamic_cast<const std::filesystem::filesystem_error*>(&e)) {
    return {"data", 2};
  }
  if (dynamic_cast<const std::invalid_argument*>(&e)) return {"config", 1};
  return {"internal", 3};
}

Json run_experiment(const ExperimentConfig& config) {
  using Clock = std::chrono::steady_clock;
  const auto started = Clock::now();
  const auto [source, target] = resolve_domains(config.data);

  Json report{{"format_version", kReportFormatVersion},
              {"config", to_json(config)},
              {"design", design_flags()},
              {"data", {{"source", domain_summary(source)}, {"target", domain_summary(target)}}}};
  Json cells = Json::array();
  struct Key {
    std::string scenario, variant;
    auto operator<=>(const Key&) const = default;
  };
  std::map<Key, std::vector<double>> accuracies, aucs;
  std::map<Key, std::size_t> failures;
  std::vector<Key> order;

  for (Scenario scenario : config.scenarios) {
    for (const auto& name : config.variants) {
      const Variant variant = variant_from_name(name);
      const Key key{to_string(scenario), variant.name};
      order.push_back(key);
      for (std::uint64_t seed : config.seeds) {
        const auto cell_start = Clock::now();
        Json cell{{"scenario", key.scenario}, {"variant", key.variant}, {"seed", seed}};
        try {
          TrainConfig tc = config.train;
          tc.scenario = scenario;
          tc.seed = seed;
          tc.weights = variant.apply(config.train.weights);
          const TrainResult result = train_sdda(tc, source, target);
          Json metrics = evaluate_student(result.student, result.target, target.classes);
          cell["status"] = "ok";
          cell["metrics"] = metrics;
          cell["history"] = history_to_json(result.history, scenario);
          accuracies[key].push_back(metrics["accuracy"].get<double>());
          if (!metrics["auc"].is_null()) aucs[key].push_back(metrics["auc"].get<double>());
        } catch (const std::exception& e) {
          const auto kind = classify_error(e);
          cell["status"] = "error";
          cell["error"] = {{"kind", kind.kind}, {"message", e.what()}};
          ++failures[key];
        }
        if (config.record_timing) {
          cell["wall_clock_seconds"] = std::chrono::duration<double>(Clock::now() - cell_start).count();
        }
        cells.push_back(std::move(cell));
      }
    }
  }
  Json summary = Json::array();
  for (const auto& key : order) {
    summary.push_back(Json{{"scenario", key.scenario},
                           {"variant", key.variant},
                           {"failed_seeds", failures[key]},
                           {"accuracy", mean_std(accuracies[key])},
                           {"auc", mean_std(aucs[key])}});
  }
  report["cells"] = std::move(cells);
  report["summary"] = std::move(summary);
  if (config.record_timing) {
    report["wall_clock_seconds"] = std::chrono::duration<double>(Clock::now() - started).count();
  }
  return canonicalize(report);
}

Json run_experiment(const std::filesystem::path& config_path, const std::filesystem::path& out_dir) {
  const ExperimentConfig config = load_experiment_config(config_path);
  Json report = run_experiment(config);
  std::filesystem::create_directories(out_dir);
  const auto path = out_dir / "report.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << canonical_dump(report);
  if (!out) throw DataError("failed writing " + path.string());
  return report;
}

Json canonicalize(const Json& value) {
  switch (value.type()) {
    case Json::value_t::object: {
      Json out = Json::object();
      for (const auto& [k, v] : value.items()) out[k] = canonicalize(v);
      return out;
    }
    case Json::value_t::array: {
      Json out = Json::array();
      for (const auto& v : value) out.push_back(canonicalize(v));
      return out;
    }
    case Json::value_t::number_float: {
      const double v = value.get<double>();
      if (!std::isfinite(v)) return nullptr;
      return round6(v);
    }
    default:
      return value;
  }
}

std::string canonical_dump(const Json& report) { return canonicalize(report).dump(2) + "\n"; }

}  // namespace sdda
