#pragma once

#include <span>
#include <vector>

#include "sdda/autodiff.hpp"

namespace sdda {

class LossError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Lower bound applied inside every log/ratio term.
inline constexpr double kProbabilityFloor = 1e-12;

// Trade-off weights and temperatures of the student objective.
struct LossWeights {
  double alpha = 1.0;                  // spatial distillation
  double beta = 1.0;                   // marginal (MK-MMD) alignment
  double gamma = 1.0;                  // confusion
  double distill_temperature = 2.0;    // softens both teacher and student in the KL term
  double confusion_temperature = 2.0;  // softens target predictions in the confusion term

  void validate() const;
};

// Convex combination of Gaussian kernels exp(-|x-y|^2 / (2 sigma^2)).
struct KernelSpec {
  enum class Bandwidth {
    Fixed,        // `bandwidths` are the sigmas
    MedianScaled  // sigma_i = bandwidths[i] * median pairwise distance of the pooled batch
  };
  Bandwidth mode = Bandwidth::MedianScaled;
  std::vector<double> bandwidths{0.25, 0.5, 1.0, 2.0, 4.0};
  std::vector<double> weights{0.2, 0.2, 0.2, 0.2, 0.2};

  static KernelSpec median_heuristic();
  static KernelSpec fixed(std::vector<double> sigmas);
  void validate() const;
};

// Median of pairwise Euclidean distances between rows of the stacked batch (i < j pairs).
double median_pairwise_distance(std::span<const double> rows, std::size_t count, std::size_t dim);

// Sigmas a kernel spec resolves to on a given pooled batch (n x d, row-major).
std::vector<double> resolve_bandwidths(const KernelSpec& spec, std::span<const double> rows, std::size_t count,
                                       std::size_t dim);

// Mean over trials of -log softmax(logits)[label]. Labels are checked against the class count at forward.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels);

template <typename T>
Var<T> tempered_softmax(Var<T> logits, T temperature);

// T^2 * mean_i KL(p_student || p_teacher), both softened at T. Teacher logits enter as constants.
template <typename T>
Var<T> sd_loss(Var<T> student_logits, const Tensor<T>& teacher_logits, T temperature);

// Biased V-statistic of the squared MK-MMD between feature batches (n_s x d, n_t x d).
template <typename T>
Var<T> mk_mmd(Var<T> source_features, Var<T> target_features, const KernelSpec& spec);

// v_i = 1 + exp(sum_j q_ij log q_ij); returns an n x 1 column.
template <typename T>
Var<T> uncertainty_weights(Var<T> probs);

// Entropy-weighted class confusion of softened target predictions; unnormalized over trials.
template <typename T>
Var<T> confusion_loss(Var<T> logits, T temperature);

// ce + alpha*sd + beta*ma + gamma*cl
template <typename T>
Var<T> student_loss_uda(Var<T> ce, Var<T> sd, Var<T> ma, Var<T> cl, const LossWeights& weights);

// ce_source + ce_target + alpha*sd + beta*ma + gamma*cl
template <typename T>
Var<T> student_loss_sda(Var<T> ce_source, Var<T> ce_target, Var<T> sd, Var<T> ma, Var<T> cl,
                        const LossWeights& weights);

}  // namespace sdda
