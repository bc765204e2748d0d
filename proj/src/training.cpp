#include "sdda/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sdda/random.hpp"

namespace sdda {

std::string to_string(Scenario s) { return s == Scenario::UDA ? "uda" : "sda"; }

Scenario scenario_from_string(const std::string& s) {
  if (s == "uda" || s == "UDA") return Scenario::UDA;
  if (s == "sda" || s == "SDA") return Scenario::SDA;
  throw std::invalid_argument("unknown scenario '" + s + "' (expected uda or sda)");
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
Adam<T>::Adam(AdamConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0)) throw TrainingError("learning rate must be positive");
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0) || !(config_.beta2 >= 0.0 && config_.beta2 < 1.0)) {
    throw TrainingError("Adam betas must lie in [0, 1)");
  }
  if (!(config_.eps > 0.0)) throw TrainingError("Adam eps must be positive");
}

template <typename T>
void Adam<T>::step(std::map<std::string, Tensor<T>>& params, const std::map<std::string, Tensor<T>>& grads) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw TrainingError("gradient for unknown parameter '" + name + "'");
    if (g.shape() != it->second.shape()) {
      throw TrainingError("gradient of '" + name + "' has shape " + shape_string(g.shape()) + ", parameter has " +
                          shape_string(it->second.shape()));
    }
    for (T v : g.data()) {
      if (!std::isfinite(v)) throw NumericalError("non-finite gradient for parameter '" + name + "'");
    }
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    auto& p = params.at(name);
    auto [mit, fresh] = m_.try_emplace(name, g.shape(), T{0});
    auto& m = mit->second;
    auto& v = v_.try_emplace(name, g.shape(), T{0}).first->second;
    (void)fresh;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * g[i]);
      v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * g[i] * g[i]);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] = static_cast<T>(p[i] - config_.learning_rate * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

// ---------------------------------------------------------------------------
// Config and target split

void TrainConfig::validate(std::size_t classes) const {
  if (epochs == 0) throw TrainConfigError("epochs must be positive");
  if (batch_size == 0) throw TrainConfigError("batch size must be positive");
  if (!(adam.learning_rate > 0.0)) throw TrainConfigError("learning rate must be positive");
  weights.validate();
  kernel.validate();
  if (scenario == Scenario::SDA && labeled_target < classes) {
    throw TrainConfigError("SDA needs at least one labelled target trial per class (n_l >= " + std::to_string(classes) +
                        ")");
  }
}

TargetSplit split_target(const Domain& target, Scenario scenario, std::size_t labeled_target) {
  if (target.sessions.empty() || target.trial_count() == 0) throw TrainingError("target domain has no trials");
  TargetSplit split;
  if (scenario == Scenario::UDA) {
    for (const auto& session : target.sessions) {
      if (session.empty()) continue;
      Session unlabeled = session;
      for (auto& t : unlabeled.trials) t.label.reset();
      split.train.push_back(std::move(unlabeled));
      split.test.push_back(session);
    }
    split.test_alignment = AlignmentPolicy::per_session();
    return split;
  }
  // Calibration trials come first in recording order; the rest of the target is unseen.
  const Session& first = target.sessions.front();
  if (labeled_target == 0) throw TrainingError("SDA needs labelled target trials (n_l = 0)");
  if (first.size() <= labeled_target) {
    throw TrainingError("first target session has " + std::to_string(first.size()) +
                        " trials, SDA needs more than n_l = " + std::to_string(labeled_target));
  }
  Session calibration{{}, first.channel_names, first.sampling_rate};
  Session rest{{}, first.channel_names, first.sampling_rate};
  for (std::size_t i = 0; i < first.size(); ++i) {
    (i < labeled_target ? calibration : rest).trials.push_back(first.trials[i]);
  }
  for (const auto& t : calibration.trials) {
    if (!t.label) throw TrainingError("SDA calibration trials must be labelled");
  }
  split.test_alignment = AlignmentPolicy::frozen(mean_covariance(calibration));
  split.train.push_back(std::move(calibration));
  split.test.push_back(std::move(rest));
  for (std::size_t s = 1; s < target.sessions.size(); ++s) split.test.push_back(target.sessions[s]);
  return split;
}

// ---------------------------------------------------------------------------
// Objectives

namespace {

template <typename T>
Tensor<T> as_network_input(const Tensor<T>& batch) {
  if (batch.rank() != 3) throw TrainingError("batch must be N x C x T, got " + shape_string(batch.shape()));
  return batch.reshaped({batch.dim(0), 1, batch.dim(1), batch.dim(2)});
}

template <typename T>
void check_channels(const Network<T>& net, const Tensor<T>& batch, const char* what) {
  if (batch.rank() != 3 || batch.dim(1) != net.channels() || batch.dim(2) != net.samples()) {
    throw TrainingError(std::string(what) + " batch " + shape_string(batch.shape()) + " does not match a " +
                        std::to_string(net.channels()) + "-channel, " + std::to_string(net.samples()) +
                        "-sample network");
  }
}

}  // namespace

template <typename T>
TeacherObjective<T> build_teacher_objective(Graph<T>& graph, Network<T>& teacher, const Tensor<T>& batch,
                                            std::span<const int> labels, std::uint64_t seed) {
  check_channels(teacher, batch, "teacher");
  auto leaves = teacher.bind(graph, "teacher.");
  auto input = graph.input("source_full");
  auto out = teacher.apply(leaves, input, Mode::Train, seed);
  TeacherObjective<T> obj{cross_entropy(out.logits, labels), {}};
  obj.bindings.emplace("source_full", as_network_input(batch));
  return obj;
}

template <typename T>
StudentObjective<T> build_student_objective(Graph<T>& graph, Network<T>& student, const StudentBatch<T>& batch,
                                            const TrainConfig& config, std::uint64_t seed) {
  check_channels(student, batch.source, "student source");
  check_channels(student, batch.target, "student target");
  auto leaves = student.bind(graph, "student.");
  auto src_in = graph.input("source_common");
  auto tgt_in = graph.input("target");
  auto src = student.apply(leaves, src_in, Mode::Train, mix_seed(seed, 0), true);
  auto tgt = student.apply(leaves, tgt_in, Mode::Train, mix_seed(seed, 1), false);

  const auto& w = config.weights;
  StudentObjective<T> obj;
  obj.ce_source = cross_entropy(src.logits, std::span<const int>(batch.source_labels));
  obj.sd = sd_loss(src.logits, batch.teacher_logits, static_cast<T>(w.distill_temperature));
  obj.ma = mk_mmd(src.features, tgt.features, config.kernel);
  obj.cl = confusion_loss(tgt.logits, static_cast<T>(w.confusion_temperature));
  if (config.scenario == Scenario::SDA) {
    obj.ce_target = cross_entropy(tgt.logits, std::span<const int>(batch.target_labels));
    obj.total = student_loss_sda(obj.ce_source, *obj.ce_target, obj.sd, obj.ma, obj.cl, w);
  } else {
    obj.total = student_loss_uda(obj.ce_source, obj.sd, obj.ma, obj.cl, w);
  }
  obj.bindings.emplace("source_common", as_network_input(batch.source));
  obj.bindings.emplace("target", as_network_input(batch.target));
  return obj;
}

template TeacherObjective<float> build_teacher_objective(Graph<float>&, Network<float>&, const Tensor<float>&,
                                                         std::span<const int>, std::uint64_t);
template TeacherObjective<double> build_teacher_objective(Graph<double>&, Network<double>&, const Tensor<double>&,
                                                          std::span<const int>, std::uint64_t);
template StudentObjective<float> build_student_objective(Graph<float>&, Network<float>&, const StudentBatch<float>&,
                                                         const TrainConfig&, std::uint64_t);
template StudentObjective<double> build_student_objective(Graph<double>&, Network<double>&,
                                                          const StudentBatch<double>&, const TrainConfig&,
                                                          std::uint64_t);

// ---------------------------------------------------------------------------
// Training loop

Tensor<float> stack_trials(const std::vector<const Trial*>& trials) {
  if (trials.empty()) throw TrainingError("cannot stack zero trials");
  const auto c = static_cast<std::size_t>(trials.front()->channels());
  const auto t = static_cast<std::size_t>(trials.front()->samples());
  Tensor<float> out({trials.size(), c, t});
  auto dst = out.data();
  std::size_t k = 0;
  for (const Trial* trial : trials) {
    if (static_cast<std::size_t>(trial->channels()) != c || static_cast<std::size_t>(trial->samples()) != t) {
      throw TrainingError("cannot stack trials of different shapes");
    }
    for (std::size_t r = 0; r < c; ++r)
      for (std::size_t s = 0; s < t; ++s) {
        dst[k++] = static_cast<float>(trial->data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s)));
      }
  }
  return out;
}

namespace {

struct Pool {
  std::vector<Trial> trials;

  std::vector<const Trial*> pick(const std::vector<std::size_t>& idx) const {
    std::vector<const Trial*> out;
    for (auto i : idx) out.push_back(&trials[i]);
    return out;
  }
  std::vector<int> labels(const std::vector<std::size_t>& idx) const {
    std::vector<int> out;
    for (auto i : idx) out.push_back(trials[i].label.value());
    return out;
  }
};

void append(Pool& pool, const Session& session) {
  pool.trials.insert(pool.trials.end(), session.trials.begin(), session.trials.end());
}

double accuracy_on(const Network<float>& student, const TargetSplit& split) {
  std::size_t correct = 0, total = 0;
  for (const auto& session : split.test) {
    const auto pred = predict(student, session, split.test_alignment);
    for (std::size_t i = 0; i < session.size(); ++i) {
      if (!session.trials[i].label) return std::nan("");
      correct += pred.labels[i] == *session.trials[i].label ? 1 : 0;
      ++total;
    }
  }
  return total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : std::nan("");
}

}  // namespace

TrainResult train_sdda(const TrainConfig& config, const Domain& source, const Domain& target,
                       const StudentInputProbe& probe) {
  validate_domain(source);
  validate_domain(target);
  if (source.classes != target.classes) throw TrainingError("source and target disagree on the class count");
  for (const auto& session : target.sessions) {
    if (session.sampling_rate != source.sessions.front().sampling_rate) {
      throw TrainingError("source and target sampling rates differ");
    }
  }
  config.validate(source.classes);
  const std::set<std::string> source_names(source.channel_names.begin(), source.channel_names.end());
  for (const auto& name : target.channel_names) {
    if (!source_names.contains(name)) {
      throw TrainingError("target channel '" + name + "' is not part of the source montage");
    }
  }
  const auto& common = target.channel_names;

  // Step 1: session-wise alignment. The common-channel source copy is subset first, then aligned.
  Pool source_full, source_common, target_train;
  for (const auto& session : source.sessions) {
    if (session.empty()) continue;
    for (const auto& t : session.trials) {
      if (!t.label) throw TrainingError("source trials must be labelled");
    }
    append(source_full, euclidean_align_session(session));
    append(source_common, euclidean_align_session(subset_channels(session, common)));
  }
  if (source_full.trials.empty()) throw TrainingError("source domain has no trials");
  const auto samples = static_cast<std::size_t>(source_full.trials.front().samples());
  ArchConfig arch = config.arch;
  arch.sampling_rate = source.sessions.front().sampling_rate;  // temporal kernel follows the recording rate
  TrainResult result{build_network<float>(common.size(), samples, source.classes, arch, mix_seed(config.seed, 2)),
                     build_network<float>(source.channel_names.size(), samples, source.classes, arch,
                                          mix_seed(config.seed, 1)),
                     {},
                     split_target(target, config.scenario, config.labeled_target)};
  Network<float>& teacher = result.teacher;
  Network<float>& student = result.student;
  const TargetSplit& split = result.target;
  for (const auto& session : split.train) {
    append(target_train, config.scenario == Scenario::SDA
                             ? apply_whitening(inv_sqrt_sym(*split.test_alignment.reference), session)
                             : euclidean_align_session(session));
  }

  Adam<float> teacher_opt(config.adam), student_opt(config.adam);
  BatchIterator source_batches(source_full.trials.size(), config.batch_size, mix_seed(config.seed, 3));
  CyclingSampler target_stream(target_train.trials.size(), mix_seed(config.seed, 4));
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochRecord record;
    std::size_t batches = 0;
    auto where = [&] { return " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches); };
    auto step_or_explain = [&](Adam<float>& opt, std::map<std::string, Tensor<float>>& params,
                               const std::map<std::string, Tensor<float>>& grads, const char* who) {
      try {
        opt.step(params, grads);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(who) + ": " + e.what() + where());
      }
    };
    for (const auto& idx : source_batches.next_epoch()) {
      const std::uint64_t step_seed = mix_seed(config.seed, 1000 + step++);
      const auto labels = source_full.labels(idx);
      const Tensor<float> full = stack_trials(source_full.pick(idx));

      // Step 3a: teacher update on the full montage.
      double teacher_loss = 0.0;
      {
        Graph<float> graph;
        auto obj = build_teacher_objective(graph, teacher, full, labels, mix_seed(step_seed, 0));
        teacher_loss = graph.forward(obj.loss, obj.bindings).item();
        if (!std::isfinite(teacher_loss)) throw NumericalError("non-finite teacher loss" + where());
        auto grads = graph.backward();
        std::map<std::string, Tensor<float>> named;
        for (auto& [name, g] : grads) named.emplace(name.substr(8), std::move(g));  // strip "teacher."
        auto params = teacher.parameters();
        step_or_explain(teacher_opt, params, named, "teacher");
        for (auto& [name, p] : params) teacher.parameter(name) = std::move(p);
      }

      // Step 3b: student update against the just-updated teacher.
      StudentBatch<float> batch;
      batch.source = stack_trials(source_common.pick(idx));
      batch.source_labels = labels;
      batch.teacher_logits = teacher.eval_logits(full);
      const auto tidx = target_stream.next(idx.size());
      batch.target = stack_trials(target_train.pick(tidx));
      if (config.scenario == Scenario::SDA) batch.target_labels = target_train.labels(tidx);
      if (probe) probe(batch.source.shape(), batch.target.shape());

      Graph<float> graph;
      auto obj = build_student_objective(graph, student, batch, config, mix_seed(step_seed, 1));
      const float total = graph.forward(obj.total, obj.bindings).item();
      if (!std::isfinite(total)) throw NumericalError("non-finite student loss" + where());
      auto grads = graph.backward();
      std::map<std::string, Tensor<float>> named;
      for (auto& [name, g] : grads) named.emplace(name.substr(8), std::move(g));  // strip "student."
      auto params = student.parameters();
      step_or_explain(student_opt, params, named, "student");
      for (auto& [name, p] : params) student.parameter(name) = std::move(p);

      record.ce_source += graph.value(obj.ce_source).item();
      if (obj.ce_target) record.ce_target += graph.value(*obj.ce_target).item();
      record.sd += graph.value(obj.sd).item();
      record.ma += graph.value(obj.ma).item();
      record.cl += graph.value(obj.cl).item();
      record.student_total += total;
      record.teacher_total += teacher_loss;
      ++batches;
    }
    const double k = 1.0 / static_cast<double>(std::max<std::size_t>(batches, 1));
    record.ce_source *= k;
    record.ce_target *= k;
    record.sd *= k;
    record.ma *= k;
    record.cl *= k;
    record.student_total *= k;
    record.teacher_total *= k;
    const double acc = accuracy_on(student, split);
    if (std::isfinite(acc)) record.target_accuracy = acc;
    result.history.push_back(record);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference

std::vector<int> argmax_rows(const Tensor<double>& scores) {
  std::vector<int> out;
  for (std::size_t i = 0; i < scores.dim(0); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.dim(1); ++j) {
      if (scores(i, j) > scores(i, best)) best = j;
    }
    out.push_back(static_cast<int>(best));
  }
  return out;
}

Prediction predict(const Network<float>& student, const Session& session, const AlignmentPolicy& policy) {
  if (static_cast<std::size_t>(session.channels()) != student.channels()) {
    throw TrainingError("session has " + std::to_string(session.channels()) + " channels, student expects " +
                        std::to_string(student.channels()));
  }
  if (session.empty()) return {{}, Tensor<double>({1, student.classes()})};
  Session aligned;
  switch (policy.kind) {
    case AlignmentPolicy::Kind::PerSession: aligned = euclidean_align_session(session); break;
    case AlignmentPolicy::Kind::Frozen:
      if (!policy.reference) throw TrainingError("frozen alignment policy without a reference");
      aligned = apply_whitening(inv_sqrt_sym(*policy.reference), session);
      break;
    case AlignmentPolicy::Kind::None: aligned = session; break;
  }
  const std::size_t n = aligned.size(), classes = student.classes();
  Tensor<double> scores({n, classes});
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < n; start += kChunk) {
    std::vector<const Trial*> chunk;
    for (std::size_t i = start; i < std::min(n, start + kChunk); ++i) chunk.push_back(&aligned.trials[i]);
    const Tensor<float> logits = student.eval_logits(stack_trials(chunk));
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      double peak = logits(r, 0);
      for (std::size_t j = 1; j < classes; ++j) peak = std::max(peak, static_cast<double>(logits(r, j)));
      double total = 0.0;
      for (std::size_t j = 0; j < classes; ++j) total += std::exp(static_cast<double>(logits(r, j)) - peak);
      for (std::size_t j = 0; j < classes; ++j) {
        scores(start + r, j) = std::exp(static_cast<double>(logits(r, j)) - peak) / total;
      }
    }
  }
  return {argmax_rows(scores), std::move(scores)};
}

}  // namespace sdda
