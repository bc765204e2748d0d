#include "sdda/diagnostics.hpp"

#include <cmath>
#include <functional>

#include "sdda/losses.hpp"
#include "sdda/random.hpp"
#include "sdda/training.hpp"

namespace sdda {

namespace {

using D = double;
using V = Var<D>;

Tensor<D> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<D> t(std::move(shape));
  for (auto& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for kinked or singular primitives.
Tensor<D> away_from_zero(Rng& rng, Shape shape) {
  Tensor<D> t(std::move(shape));
  for (auto& x : t.data()) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 1.5);
  return t;
}

struct Case {
  std::string name;
  // Builds a (possibly non-scalar) output from parameter leaves it creates itself.
  std::function<V(Graph<D>&, Rng&)> build;
};

NamedCheck run_case(const Case& c, std::uint64_t seed, double tol) {
  Rng rng(seed);
  Graph<D> g;
  V out = c.build(g, rng);
  // Random projection turns any output into a scalar with a non-degenerate gradient.
  g.forward(out);
  Shape shape = g.value(out).shape();
  V root = ops::sum(ops::mul(out, g.constant(random_tensor(rng, shape, 0.5, 1.5))));
  return {c.name, grad_check(g, root, {}, kGradCheckStep, tol)};
}

V param(Graph<D>& g, Rng& rng, const std::string& name, Shape shape) {
  return g.parameter(name, random_tensor(rng, std::move(shape)));
}

std::vector<Case> primitive_cases() {
  using namespace ops;
  std::vector<Case> cases;
  auto add_case = [&](std::string name, std::function<V(Graph<D>&, Rng&)> f) {
    cases.push_back({std::move(name), std::move(f)});
  };
  add_case("add", [](Graph<D>& g, Rng& r) { return add(param(g, r, "a", {3, 4}), param(g, r, "b", {3, 4})); });
  add_case("add_broadcast", [](Graph<D>& g, Rng& r) { return add(param(g, r, "a", {3, 4}), param(g, r, "b", {1, 4})); });
  add_case("sub_broadcast", [](Graph<D>& g, Rng& r) { return sub(param(g, r, "a", {3, 4}), param(g, r, "b", {3, 1})); });
  add_case("mul_broadcast", [](Graph<D>& g, Rng& r) { return mul(param(g, r, "a", {2, 3, 4}), param(g, r, "b", {2, 1, 4})); });
  add_case("scale", [](Graph<D>& g, Rng& r) { return scale(param(g, r, "a", {5}), -1.7); });
  add_case("add_scalar", [](Graph<D>& g, Rng& r) { return add_scalar(param(g, r, "a", {5}), 0.3); });
  add_case("square", [](Graph<D>& g, Rng& r) { return square(param(g, r, "a", {2, 3})); });
  add_case("dot", [](Graph<D>& g, Rng& r) { return dot(param(g, r, "a", {6}), param(g, r, "b", {6})); });
  add_case("matmul", [](Graph<D>& g, Rng& r) { return matmul(param(g, r, "a", {3, 4}), param(g, r, "b", {4, 2})); });
  add_case("transpose", [](Graph<D>& g, Rng& r) { return transpose(param(g, r, "a", {3, 4})); });
  add_case("reshape", [](Graph<D>& g, Rng& r) { return reshape(param(g, r, "a", {3, 4}), Shape{2, 6}); });
  add_case("flatten", [](Graph<D>& g, Rng& r) { return flatten(param(g, r, "a", {2, 3, 2, 2})); });
  add_case("concat_axis0", [](Graph<D>& g, Rng& r) { return concat(std::vector<V>{param(g, r, "a", {2, 3}), param(g, r, "b", {1, 3})}, 0); });
  add_case("concat_axis1", [](Graph<D>& g, Rng& r) { return concat(std::vector<V>{param(g, r, "a", {2, 3}), param(g, r, "b", {2, 2})}, 1); });
  add_case("sum", [](Graph<D>& g, Rng& r) { return sum(param(g, r, "a", {3, 4})); });
  add_case("sum_axis", [](Graph<D>& g, Rng& r) { return sum(param(g, r, "a", {3, 4}), 1, false); });
  add_case("mean", [](Graph<D>& g, Rng& r) { return mean(param(g, r, "a", {3, 4})); });
  add_case("mean_axis", [](Graph<D>& g, Rng& r) { return mean(param(g, r, "a", {3, 4}), 0, true); });
  add_case("exp", [](Graph<D>& g, Rng& r) { return exp(param(g, r, "a", {2, 3})); });
  add_case("log", [](Graph<D>& g, Rng& r) {
    return log(g.parameter("a", random_tensor(r, {2, 3}, 0.5, 2.0)));
  });
  add_case("log_floored", [](Graph<D>& g, Rng& r) {
    return log(g.parameter("a", random_tensor(r, {2, 3}, 0.5, 2.0)), 1e-12);
  });
  add_case("softmax", [](Graph<D>& g, Rng& r) { return softmax(param(g, r, "a", {3, 5})); });
  add_case("log_softmax", [](Graph<D>& g, Rng& r) { return log_softmax(param(g, r, "a", {3, 5})); });
  add_case("elu", [](Graph<D>& g, Rng& r) { return elu(g.parameter("a", away_from_zero(r, {3, 4}))); });
  add_case("conv2d_valid", [](Graph<D>& g, Rng& r) {
    return conv2d(param(g, r, "x", {2, 3, 5, 6}), param(g, r, "w", {4, 3, 2, 3}), Padding::Valid);
  });
  add_case("conv2d_same", [](Graph<D>& g, Rng& r) {
    return conv2d(param(g, r, "x", {2, 1, 3, 7}), param(g, r, "w", {3, 1, 1, 4}), Padding::Same);
  });
  add_case("conv2d_grouped", [](Graph<D>& g, Rng& r) {
    return conv2d(param(g, r, "x", {2, 4, 3, 5}), param(g, r, "w", {4, 2, 2, 2}), Padding::Same, 2);
  });
  add_case("depthwise_conv2d", [](Graph<D>& g, Rng& r) {
    return depthwise_conv2d(param(g, r, "x", {2, 2, 4, 5}), param(g, r, "w", {4, 1, 4, 1}), Padding::Valid);
  });
  add_case("depthwise_conv2d_same", [](Graph<D>& g, Rng& r) {
    return depthwise_conv2d(param(g, r, "x", {2, 2, 1, 6}), param(g, r, "w", {2, 1, 1, 3}), Padding::Same);
  });
  add_case("avg_pool2d", [](Graph<D>& g, Rng& r) { return avg_pool2d(param(g, r, "x", {2, 2, 4, 7}), 2, 3); });
  add_case("batch_norm_train", [](Graph<D>& g, Rng& r) {
    return batch_norm(param(g, r, "x", {4, 3, 1, 5}), param(g, r, "gamma", {3}), param(g, r, "beta", {3}),
                      static_cast<BatchNormStats<D>*>(nullptr), Mode::Train);
  });
  add_case("batch_norm_eval", [](Graph<D>& g, Rng& r) {
    static thread_local BatchNormStats<D> stats;
    stats = {Tensor<D>({3}, 0.1), Tensor<D>({3}, 0.8)};
    return batch_norm(param(g, r, "x", {4, 3, 1, 5}), param(g, r, "gamma", {3}), param(g, r, "beta", {3}), &stats,
                      Mode::Eval);
  });
  add_case("dropout", [](Graph<D>& g, Rng& r) { return dropout(param(g, r, "x", {4, 6}), 0.25, 17, Mode::Train); });
  add_case("cross_entropy", [](Graph<D>& g, Rng& r) {
    static const std::vector<int> labels{0, 2, 1, 2};
    return cross_entropy(param(g, r, "logits", {4, 3}), std::span<const int>(labels));
  });
  add_case("tempered_softmax", [](Graph<D>& g, Rng& r) { return tempered_softmax(param(g, r, "logits", {4, 3}), 2.0); });
  add_case("sd_loss", [](Graph<D>& g, Rng& r) {
    Tensor<D> teacher = random_tensor(r, {4, 3}, -2.0, 2.0);
    return sd_loss(param(g, r, "logits", {4, 3}), teacher, 2.0);
  });
  add_case("mk_mmd", [](Graph<D>& g, Rng& r) {
    return mk_mmd(param(g, r, "xs", {4, 3}), param(g, r, "xt", {5, 3}), KernelSpec::fixed({0.5, 1.0, 2.0}));
  });
  add_case("uncertainty_weights", [](Graph<D>& g, Rng& r) {
    return uncertainty_weights(softmax(param(g, r, "logits", {4, 3})));
  });
  add_case("confusion_loss", [](Graph<D>& g, Rng& r) { return confusion_loss(param(g, r, "logits", {4, 3}), 2.0); });
  return cases;
}

ArchConfig tiny_arch() {
  ArchConfig a;
  a.temporal_filters = 2;
  a.depth_multiplier = 1;
  a.pointwise_filters = 3;
  a.temporal_length = 3;
  a.separable_length = 3;
  a.pool1 = 2;
  a.pool2 = 2;
  a.dropout = 0.25;
  a.sampling_rate = 16.0;
  return a;
}

Tensor<D> normal_tensor(Rng& rng, Shape shape) {
  Tensor<D> t(std::move(shape));
  for (auto& x : t.data()) x = rng.normal();
  return t;
}

}  // namespace

std::vector<NamedCheck> primitive_grad_checks(std::uint64_t seed, double tol) {
  std::vector<NamedCheck> out;
  std::uint64_t k = 0;
  for (const auto& c : primitive_cases()) out.push_back(run_case(c, mix_seed(seed, k++), tol));
  return out;
}

std::vector<NamedCheck> objective_grad_checks(std::uint64_t seed, double tol) {
  constexpr std::size_t n = 4, full = 4, common = 2, samples = 16, classes = 2;
  Rng rng(seed);
  const ArchConfig arch = tiny_arch();
  Network<D> teacher(full, samples, classes, arch, mix_seed(seed, 1));
  Network<D> student(common, samples, classes, arch, mix_seed(seed, 2));
  const std::vector<int> labels{0, 1, 1, 0};
  std::vector<NamedCheck> out;

  {
    Graph<D> g;
    Tensor<D> batch = normal_tensor(rng, {n, full, samples});
    auto obj = build_teacher_objective(g, teacher, batch, std::span<const int>(labels), mix_seed(seed, 3));
    out.push_back({"teacher_objective", grad_check(g, obj.loss, obj.bindings, kGradCheckStep, tol)});
  }

  StudentBatch<D> batch;
  batch.source = normal_tensor(rng, {n, common, samples});
  batch.source_labels = labels;
  batch.teacher_logits = teacher.eval_logits(normal_tensor(rng, {n, full, samples}));
  batch.target = normal_tensor(rng, {n, common, samples});
  batch.target_labels = {1, 0, 0, 1};
  for (Scenario scenario : {Scenario::UDA, Scenario::SDA}) {
    TrainConfig config;
    config.scenario = scenario;
    config.kernel = KernelSpec::fixed({0.5, 1.0, 2.0, 4.0});
    config.weights.alpha = 0.7;
    config.weights.beta = 1.3;
    config.weights.gamma = 0.4;
    Graph<D> g;
    auto obj = build_student_objective(g, student, batch, config, mix_seed(seed, 4));
    out.push_back({"student_objective_" + to_string(scenario),
                   grad_check(g, obj.total, obj.bindings, kGradCheckStep, tol)});
  }
  return out;
}

}  // namespace sdda
