#include "sdda/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace sdda {

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) {
    throw LossError("loss weights alpha, beta, gamma must be non-negative");
  }
  if (!(distill_temperature > 0.0) || !(confusion_temperature > 0.0)) {
    throw LossError("temperatures must be strictly positive");
  }
}

KernelSpec KernelSpec::median_heuristic() { return KernelSpec{}; }

KernelSpec KernelSpec::fixed(std::vector<double> sigmas) {
  KernelSpec spec;
  spec.mode = Bandwidth::Fixed;
  spec.weights.assign(sigmas.size(), sigmas.empty() ? 0.0 : 1.0 / static_cast<double>(sigmas.size()));
  spec.bandwidths = std::move(sigmas);
  return spec;
}

void KernelSpec::validate() const {
  if (bandwidths.empty() || bandwidths.size() != weights.size()) {
    throw LossError("kernel spec needs one weight per bandwidth and at least one kernel");
  }
  for (double b : bandwidths) {
    if (!(b > 0.0) || !std::isfinite(b)) throw LossError("kernel bandwidths must be positive");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw LossError("kernel weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw LossError("kernel weights must sum to 1");
}

double median_pairwise_distance(std::span<const double> rows, std::size_t count, std::size_t dim) {
  std::vector<double> dists;
  dists.reserve(count * (count - 1) / 2);
  for (std::size_t a = 0; a < count; ++a)
    for (std::size_t b = a + 1; b < count; ++b) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = rows[a * dim + k] - rows[b * dim + k];
        d2 += diff * diff;
      }
      dists.push_back(std::sqrt(d2));
    }
  if (dists.empty()) return 0.0;
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid), dists.end());
  const double upper = dists[mid];
  if (dists.size() % 2 == 1) return upper;
  const double lower = *std::max_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

std::vector<double> resolve_bandwidths(const KernelSpec& spec, std::span<const double> rows, std::size_t count,
                                       std::size_t dim) {
  if (spec.mode == KernelSpec::Bandwidth::Fixed) return spec.bandwidths;
  double median = median_pairwise_distance(rows, count, dim);
  // a collapsed batch has no scale; fall back to unit distance
  if (!(median > 1e-12) || !std::isfinite(median)) median = 1.0;
  std::vector<double> sigmas;
  for (double m : spec.bandwidths) sigmas.push_back(m * median);
  return sigmas;
}

namespace {

template <typename T>
using Inputs = std::span<const Tensor<T>* const>;
template <typename T>
using GradInputs = std::span<Tensor<T>* const>;

// Mean negative log-likelihood of the labelled entries of an n x C log-probability matrix.
template <typename T>
class PickNllOp final : public Op<T> {
 public:
  explicit PickNllOp(std::vector<int> labels) : labels_(std::move(labels)) {}
  std::string_view name() const override { return "nll"; }
  Tensor<T> forward(Inputs<T> in) override {
    const auto& logp = *in[0];
    if (logp.rank() != 2 || logp.dim(0) != labels_.size()) {
      throw ShapeError("nll: expected [" + std::to_string(labels_.size()) + "xC] log-probabilities, got " +
                       shape_string(logp.shape()));
    }
    const std::size_t classes = logp.dim(1);
    T acc{0};
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] < 0 || static_cast<std::size_t>(labels_[i]) >= classes) {
        throw LossError("label " + std::to_string(labels_[i]) + " of trial " + std::to_string(i) +
                        " outside [0, " + std::to_string(classes) + ")");
      }
      acc -= logp(i, static_cast<std::size_t>(labels_[i]));
    }
    return Tensor<T>::scalar(acc / static_cast<T>(labels_.size()));
  }
  void backward(Inputs<T>, const Tensor<T>&, const Tensor<T>& g, GradInputs<T> gin) override {
    const T k = g[0] / static_cast<T>(labels_.size());
    for (std::size_t i = 0; i < labels_.size(); ++i) (*gin[0])(i, static_cast<std::size_t>(labels_[i])) -= k;
  }

 private:
  std::vector<int> labels_;
};

// Identity that pins the runtime shape of its input.
template <typename T>
class ExpectShapeOp final : public Op<T> {
 public:
  explicit ExpectShapeOp(Shape shape) : shape_(std::move(shape)) {}
  std::string_view name() const override { return "expect_shape"; }
  Tensor<T> forward(Inputs<T> in) override {
    if (in[0]->shape() != shape_) {
      throw ShapeError("expected " + shape_string(shape_) + ", got " + shape_string(in[0]->shape()));
    }
    return *in[0];
  }
  void backward(Inputs<T>, const Tensor<T>&, const Tensor<T>& g, GradInputs<T> gin) override {
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
  }

 private:
  Shape shape_;
};

// Squared MK-MMD (biased V-statistic) with an analytic gradient. Bandwidths are resolved on the
// forward batch and held constant for differentiation.
template <typename T>
class MkMmdOp final : public Op<T> {
 public:
  explicit MkMmdOp(KernelSpec spec) : spec_(std::move(spec)) {}
  std::string_view name() const override { return "mk_mmd"; }

  Tensor<T> forward(Inputs<T> in) override {
    const auto& s = *in[0];
    const auto& t = *in[1];
    if (s.rank() != 2 || t.rank() != 2 || s.dim(1) != t.dim(1)) {
      throw ShapeError("mk_mmd: expected [n_s x d] and [n_t x d], got " + shape_string(s.shape()) + " and " +
                       shape_string(t.shape()));
    }
    ns_ = s.dim(0);
    nt_ = t.dim(0);
    dim_ = s.dim(1);
    const std::size_t n = ns_ + nt_;
    pooled_.resize(n * dim_);
    for (std::size_t i = 0; i < ns_ * dim_; ++i) pooled_[i] = static_cast<double>(s[i]);
    for (std::size_t i = 0; i < nt_ * dim_; ++i) pooled_[ns_ * dim_ + i] = static_cast<double>(t[i]);
    sigmas_ = resolve_bandwidths(spec_, pooled_, n, dim_);

    kernel_.assign(n * n, 0.0);
    slope_.assign(n * n, 0.0);
    double total = 0.0;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < dim_; ++k) {
          const double diff = pooled_[a * dim_ + k] - pooled_[b * dim_ + k];
          d2 += diff * diff;
        }
        double kv = 0.0, sl = 0.0;
        for (std::size_t m = 0; m < sigmas_.size(); ++m) {
          const double inv = 1.0 / (sigmas_[m] * sigmas_[m]);
          const double km = spec_.weights[m] * std::exp(-0.5 * d2 * inv);
          kv += km;
          sl += km * inv;
        }
        kernel_[a * n + b] = kv;
        slope_[a * n + b] = sl;
        total += weight(a, b) * kv;
      }
    return Tensor<T>::scalar(static_cast<T>(std::max(total, 0.0)));
  }

  void backward(Inputs<T>, const Tensor<T>&, const Tensor<T>& g, GradInputs<T> gin) override {
    const std::size_t n = ns_ + nt_;
    const double gv = static_cast<double>(g[0]);
    std::vector<double> grad(dim_);
    for (std::size_t a = 0; a < n; ++a) {
      Tensor<T>* target = a < ns_ ? gin[0] : gin[1];
      if (!target) continue;
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = 0; b < n; ++b) {
        if (a == b) continue;
        const double c = 2.0 * weight(a, b) * slope_[a * n + b];
        for (std::size_t k = 0; k < dim_; ++k) grad[k] += c * (pooled_[b * dim_ + k] - pooled_[a * dim_ + k]);
      }
      const std::size_t row = a < ns_ ? a : a - ns_;
      for (std::size_t k = 0; k < dim_; ++k) (*target)[row * dim_ + k] += static_cast<T>(gv * grad[k]);
    }
  }

 private:
  double weight(std::size_t a, std::size_t b) const {
    const bool sa = a < ns_, sb = b < ns_;
    if (sa && sb) return 1.0 / static_cast<double>(ns_ * ns_);
    if (!sa && !sb) return 1.0 / static_cast<double>(nt_ * nt_);
    return -1.0 / static_cast<double>(ns_ * nt_);
  }

  KernelSpec spec_;
  std::size_t ns_ = 0, nt_ = 0, dim_ = 0;
  std::vector<double> pooled_, sigmas_, kernel_, slope_;
};

}  // namespace

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels) {
  if (labels.empty()) throw LossError("cross-entropy needs at least one labelled trial");
  auto logp = ops::log_softmax(logits);
  return logits.graph->apply(std::make_unique<PickNllOp<T>>(std::vector<int>(labels.begin(), labels.end())),
                             {logp});
}

template <typename T>
Var<T> tempered_softmax(Var<T> logits, T temperature) {
  if (!(temperature > T{0})) throw LossError("temperature must be strictly positive");
  return ops::softmax(ops::scale(logits, T{1} / temperature));
}

template <typename T>
Var<T> sd_loss(Var<T> student_logits, const Tensor<T>& teacher_logits, T temperature) {
  if (teacher_logits.rank() != 2) throw LossError("teacher logits must be an n x C matrix");
  if (!(temperature > T{0})) throw LossError("temperature must be strictly positive");
  const T floor = static_cast<T>(kProbabilityFloor);
  const std::size_t n = teacher_logits.dim(0), classes = teacher_logits.dim(1);

  // Teacher side is a constant: softened log-probabilities computed eagerly.
  Tensor<T> teacher_log(teacher_logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    T peak = teacher_logits(i, 0);
    for (std::size_t j = 1; j < classes; ++j) peak = std::max(peak, teacher_logits(i, j));
    T total{0};
    for (std::size_t j = 0; j < classes; ++j) total += std::exp((teacher_logits(i, j) - peak) / temperature);
    for (std::size_t j = 0; j < classes; ++j) {
      const T p = std::exp((teacher_logits(i, j) - peak) / temperature) / total;
      teacher_log(i, j) = std::log(std::max(p, floor));
    }
  }
  Graph<T>& g = *student_logits.graph;
  auto pinned = g.apply(std::make_unique<ExpectShapeOp<T>>(teacher_logits.shape()), {student_logits});
  auto p = tempered_softmax(pinned, temperature);
  auto log_ratio = ops::sub(ops::log(p, floor), g.constant(std::move(teacher_log)));
  auto kl_sum = ops::sum(ops::mul(p, log_ratio));
  return ops::scale(kl_sum, temperature * temperature / static_cast<T>(n));
}

template <typename T>
Var<T> mk_mmd(Var<T> source_features, Var<T> target_features, const KernelSpec& spec) {
  spec.validate();
  return source_features.graph->apply(std::make_unique<MkMmdOp<T>>(spec), {source_features, target_features});
}

template <typename T>
Var<T> uncertainty_weights(Var<T> probs) {
  const T floor = static_cast<T>(kProbabilityFloor);
  auto neg_entropy = ops::sum(ops::mul(probs, ops::log(probs, floor)), 1, true);
  return ops::add_scalar(ops::exp(neg_entropy), T{1});
}

template <typename T>
Var<T> confusion_loss(Var<T> logits, T temperature) {
  auto q = tempered_softmax(logits, temperature);
  auto v = uncertainty_weights(q);
  auto weighted = ops::mul(q, v);                                // n x C, row i scaled by v_i
  auto confusion = ops::matmul(ops::transpose(weighted), q);     // l_jj'
  auto all_pairs = ops::sum(ops::mean(confusion, 0, true));      // sum_jj' l_jj' / C
  auto diagonal = ops::mean(ops::sum(ops::mul(weighted, q), 0, true));  // sum_j l_jj / C
  return ops::sub(all_pairs, diagonal);
}

template <typename T>
Var<T> student_loss_uda(Var<T> ce, Var<T> sd, Var<T> ma, Var<T> cl, const LossWeights& weights) {
  weights.validate();
  auto total = ops::add(ce, ops::scale(sd, static_cast<T>(weights.alpha)));
  total = ops::add(total, ops::scale(ma, static_cast<T>(weights.beta)));
  return ops::add(total, ops::scale(cl, static_cast<T>(weights.gamma)));
}

template <typename T>
Var<T> student_loss_sda(Var<T> ce_source, Var<T> ce_target, Var<T> sd, Var<T> ma, Var<T> cl,
                        const LossWeights& weights) {
  return student_loss_uda(ops::add(ce_source, ce_target), sd, ma, cl, weights);
}

#define SDDA_INSTANTIATE_LOSSES(T)                                                    \
  template Var<T> cross_entropy(Var<T>, std::span<const int>);                        \
  template Var<T> tempered_softmax(Var<T>, T);                                        \
  template Var<T> sd_loss(Var<T>, const Tensor<T>&, T);                               \
  template Var<T> mk_mmd(Var<T>, Var<T>, const KernelSpec&);                          \
  template Var<T> uncertainty_weights(Var<T>);                                        \
  template Var<T> confusion_loss(Var<T>, T);                                          \
  template Var<T> student_loss_uda(Var<T>, Var<T>, Var<T>, Var<T>, const LossWeights&); \
  template Var<T> student_loss_sda(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>, const LossWeights&);

SDDA_INSTANTIATE_LOSSES(float)
SDDA_INSTANTIATE_LOSSES(double)

}  // namespace sdda
