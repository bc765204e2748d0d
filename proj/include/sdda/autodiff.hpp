#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdda/tensor.hpp"

namespace sdda {

template <typename T>
class Graph;

// Handle to a node inside a Graph. Cheap to copy; only valid while the graph lives.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;
};

// A differentiable primitive. forward() may cache whatever backward() needs.
// backward() accumulates into grad_inputs[i]; a null entry means input i needs no gradient.
template <typename T>
class Op {
 public:
  virtual ~Op() = default;
  virtual std::string_view name() const = 0;
  virtual Tensor<T> forward(std::span<const Tensor<T>* const> inputs) = 0;
  virtual void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output,
                        const Tensor<T>& grad_output, std::span<Tensor<T>* const> grad_inputs) = 0;
};

enum class LeafKind { None, Input, Parameter, Constant };

template <typename T>
using Bindings = std::map<std::string, Tensor<T>>;

template <typename T>
using Gradients = std::map<std::string, Tensor<T>>;

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Static computation graph: nodes are recorded in topological order at construction,
// evaluated by forward() against leaf bindings, differentiated by backward().
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf that must be bound by name at forward time. Receives no gradient.
  Var<T> input(std::string name);
  // Trainable leaf with a default value; a binding of the same name overrides it.
  Var<T> parameter(std::string name, Tensor<T> value);
  Var<T> constant(Tensor<T> value);
  Var<T> apply(std::unique_ptr<Op<T>> op, std::vector<Var<T>> inputs);

  const Tensor<T>& forward(Var<T> root, const Bindings<T>& bindings = {});
  Gradients<T> backward();

  const Tensor<T>& value(Var<T> v) const;
  const Tensor<T>& grad(Var<T> v) const;
  // Default value of a parameter leaf (before any binding override).
  const Tensor<T>& parameter_default(const std::string& name) const;
  std::size_t size() const { return nodes_.size(); }
  std::vector<std::string> parameter_names() const;
  std::string describe(std::size_t id) const;

 private:
  struct Node {
    std::unique_ptr<Op<T>> op;
    std::vector<std::size_t> inputs;
    LeafKind leaf = LeafKind::None;
    std::string name;
    Tensor<T> value;
    Tensor<T> fallback;
    Tensor<T> grad;
    bool has_default = false;
    bool requires_grad = false;
  };

  Var<T> add_leaf(LeafKind kind, std::string name, Tensor<T> value, bool has_default);
  void check_owned(Var<T> v) const;

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> leaf_index_;
  std::size_t root_ = 0;
  bool forwarded_ = false;
};

enum class Padding { Valid, Same };
enum class Mode { Train, Eval };

// Running statistics for batch normalization, owned by the model.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

namespace ops {

// Binary ops broadcast over equal-rank operands whose extents match or are 1.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> add_scalar(Var<T> a, T offset);
template <typename T> Var<T> square(Var<T> a);
template <typename T> Var<T> dot(Var<T> a, Var<T> b);
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> reshape(Var<T> a, Shape shape);
// N x ... -> N x (product of the rest), resolved at forward time.
template <typename T> Var<T> flatten(Var<T> a);
template <typename T> Var<T> concat(std::vector<Var<T>> parts, std::size_t axis);
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> sum(Var<T> a, std::size_t axis, bool keepdim = true);
template <typename T> Var<T> mean(Var<T> a);
template <typename T> Var<T> mean(Var<T> a, std::size_t axis, bool keepdim = true);
template <typename T> Var<T> exp(Var<T> a);
// log(max(x, floor)); floor = 0 gives the plain logarithm.
template <typename T> Var<T> log(Var<T> a, T floor = T{0});
// Softmax and log-softmax over the last axis.
template <typename T> Var<T> softmax(Var<T> a);
template <typename T> Var<T> log_softmax(Var<T> a);
template <typename T> Var<T> elu(Var<T> a, T alpha = T{1});
// x: N×Cin×H×W, w: Cout×(Cin/groups)×KH×KW, stride 1.
template <typename T> Var<T> conv2d(Var<T> x, Var<T> w, Padding padding, std::size_t groups = 1);
// One filter bank per input channel (groups = Cin); Cout must be a multiple of Cin.
template <typename T> Var<T> depthwise_conv2d(Var<T> x, Var<T> w, Padding padding);
// Non-overlapping average pooling; trailing remainder is dropped.
template <typename T> Var<T> avg_pool2d(Var<T> x, std::size_t kh, std::size_t kw);
// Normalizes over every axis except 1. stats may be null (no running update, train mode only).
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>* stats, Mode mode,
                  T momentum = T(0.1), T eps = T(1e-5));
// Inverted dropout; the mask is a pure function of seed. Identity in eval mode.
template <typename T> Var<T> dropout(Var<T> x, T p, std::uint64_t seed, Mode mode);

}  // namespace ops

}  // namespace sdda
