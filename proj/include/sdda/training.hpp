#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdda/alignment.hpp"
#include "sdda/data.hpp"
#include "sdda/losses.hpp"
#include "sdda/model.hpp"

namespace sdda {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyperparameters.
class TrainConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite loss or gradient during optimization.
class NumericalError : public TrainingError {
 public:
  using TrainingError::TrainingError;
};

enum class Scenario { UDA, SDA };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment optimizer with bias correction; state is keyed by parameter name.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {});
  // Rejects the whole step if any gradient is non-finite.
  void step(std::map<std::string, Tensor<T>>& params, const std::map<std::string, Tensor<T>>& grads);
  std::size_t steps() const { return t_; }
  const Tensor<T>& first_moment(const std::string& name) const { return m_.at(name); }
  const Tensor<T>& second_moment(const std::string& name) const { return v_.at(name); }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor<T>> m_, v_;
};

struct TrainConfig {
  Scenario scenario = Scenario::UDA;
  LossWeights weights;
  KernelSpec kernel = KernelSpec::median_heuristic();
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::size_t labeled_target = 32;  // n_l, SDA only
  ArchConfig arch;

  void validate(std::size_t classes) const;
};

struct EpochRecord {
  double ce_source = 0.0;
  double ce_target = 0.0;  // SDA only
  double sd = 0.0;
  double ma = 0.0;
  double cl = 0.0;
  double student_total = 0.0;
  double teacher_total = 0.0;
  std::optional<double> target_accuracy;  // when target labels exist (never used for training in UDA)
};

using TrainHistory = std::vector<EpochRecord>;

// How target trials are whitened before inference.
struct AlignmentPolicy {
  enum class Kind { PerSession, Frozen, None };
  Kind kind = Kind::PerSession;
  std::optional<ReferenceMatrix> reference;  // Frozen only

  static AlignmentPolicy per_session() { return {}; }
  static AlignmentPolicy frozen(ReferenceMatrix ref) { return {Kind::Frozen, std::move(ref)}; }
  static AlignmentPolicy none() { return {Kind::None, std::nullopt}; }
};

// Target trials split for one scenario: what training may see, and what is held out for testing.
// UDA trains on every target trial with labels stripped and tests on all of them, each session
// whitened by its own reference. SDA trains on the first n_l trials (labelled) and tests on the
// rest, all whitened by the reference frozen from those n_l calibration trials.
struct TargetSplit {
  std::vector<Session> train;  // raw
  std::vector<Session> test;   // raw, labels kept for scoring
  AlignmentPolicy test_alignment;
};

TargetSplit split_target(const Domain& target, Scenario scenario, std::size_t labeled_target);

struct TrainResult {
  Network<float> student;
  Network<float> teacher;
  TrainHistory history;
  TargetSplit target;
};

// Loss graph of one teacher step (cross-entropy on full-montage source trials).
template <typename T>
struct TeacherObjective {
  Var<T> loss;
  Bindings<T> bindings;
};

template <typename T>
TeacherObjective<T> build_teacher_objective(Graph<T>& graph, Network<T>& teacher, const Tensor<T>& batch,
                                            std::span<const int> labels, std::uint64_t seed);

template <typename T>
struct StudentBatch {
  Tensor<T> source;                 // N x C_t x T, common channels
  std::vector<int> source_labels;
  Tensor<T> teacher_logits;         // N x classes, constants
  Tensor<T> target;                 // M x C_t x T
  std::vector<int> target_labels;   // SDA only
};

template <typename T>
struct StudentObjective {
  Var<T> ce_source, sd, ma, cl, total;
  std::optional<Var<T>> ce_target;
  Bindings<T> bindings;
};

// Student loss graph for one step. Target batches pass in train mode without touching running statistics.
template <typename T>
StudentObjective<T> build_student_objective(Graph<T>& graph, Network<T>& student, const StudentBatch<T>& batch,
                                            const TrainConfig& config, std::uint64_t seed);

// Observer for the student inputs of every step (channels of source and target batches).
using StudentInputProbe = std::function<void(const Shape& source_batch, const Shape& target_batch)>;

TrainResult train_sdda(const TrainConfig& config, const Domain& source, const Domain& target,
                       const StudentInputProbe& probe = {});

struct Prediction {
  std::vector<int> labels;
  Tensor<double> scores;  // n x C softmax probabilities
};

Prediction predict(const Network<float>& student, const Session& session, const AlignmentPolicy& policy);

// Stacks trials into an N x C x T tensor.
Tensor<float> stack_trials(const std::vector<const Trial*>& trials);

// Lowest index wins ties.
std::vector<int> argmax_rows(const Tensor<double>& scores);

}  // namespace sdda
