#include "sdda/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Core>

namespace sdda {

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Var<T> Graph<T>::add_leaf(LeafKind kind, std::string name, Tensor<T> value, bool has_default) {
  const std::size_t id = nodes_.size();
  if (kind == LeafKind::Constant) {
    name = "const#" + std::to_string(id);
  } else {
    if (name.empty()) throw GraphError("leaf names must be non-empty");
    if (leaf_index_.contains(name)) throw GraphError("duplicate leaf name '" + name + "'");
  }
  Node node;
  node.leaf = kind;
  node.name = name;
  node.value = value;
  node.fallback = std::move(value);
  node.has_default = has_default;
  node.requires_grad = kind == LeafKind::Parameter;
  nodes_.push_back(std::move(node));
  leaf_index_[name] = id;
  forwarded_ = false;
  return {this, id};
}

template <typename T>
Var<T> Graph<T>::input(std::string name) {
  return add_leaf(LeafKind::Input, std::move(name), Tensor<T>{}, false);
}

template <typename T>
Var<T> Graph<T>::parameter(std::string name, Tensor<T> value) {
  return add_leaf(LeafKind::Parameter, std::move(name), std::move(value), true);
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  return add_leaf(LeafKind::Constant, {}, std::move(value), true);
}

template <typename T>
void Graph<T>::check_owned(Var<T> v) const {
  if (v.graph != this || v.id >= nodes_.size()) throw GraphError("variable does not belong to this graph");
}

template <typename T>
Var<T> Graph<T>::apply(std::unique_ptr<Op<T>> op, std::vector<Var<T>> inputs) {
  Node node;
  node.name = std::string(op->name());
  node.op = std::move(op);
  for (const auto& in : inputs) {
    check_owned(in);
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(std::move(node));
  forwarded_ = false;
  return {this, nodes_.size() - 1};
}

template <typename T>
std::string Graph<T>::describe(std::size_t id) const {
  return "node " + std::to_string(id) + " (" + nodes_.at(id).name + ")";
}

template <typename T>
const Tensor<T>& Graph<T>::forward(Var<T> root, const Bindings<T>& bindings) {
  check_owned(root);
  for (const auto& [name, _] : bindings) {
    auto it = leaf_index_.find(name);
    if (it == leaf_index_.end() || nodes_[it->second].leaf == LeafKind::Constant) {
      throw GraphError("binding '" + name + "' does not name an input or parameter leaf");
    }
  }
  forwarded_ = false;
  std::vector<const Tensor<T>*> args;
  for (std::size_t i = 0; i <= root.id; ++i) {
    Node& node = nodes_[i];
    if (node.leaf == LeafKind::Constant) continue;
    if (node.leaf != LeafKind::None) {
      auto it = bindings.find(node.name);
      if (it == bindings.end()) {
        if (!node.has_default) throw GraphError("leaf '" + node.name + "' is not bound");
        node.value = node.fallback;
      } else {
        if (node.has_default && it->second.shape() != node.fallback.shape()) {
          throw ShapeError(describe(i) + ": expected shape " + shape_string(node.fallback.shape()) +
                           ", bound " + shape_string(it->second.shape()));
        }
        node.value = it->second;
      }
      continue;
    }
    args.clear();
    for (auto in : node.inputs) args.push_back(&nodes_[in].value);
    try {
      node.value = node.op->forward(args);
    } catch (const ShapeError& e) {
      throw ShapeError(describe(i) + ": " + e.what());
    }
  }
  root_ = root.id;
  forwarded_ = true;
  return nodes_[root_].value;
}

template <typename T>
Gradients<T> Graph<T>::backward() {
  if (!forwarded_) throw GraphError("backward called before forward");
  const Tensor<T>& root_value = nodes_[root_].value;
  if (root_value.size() != 1) {
    throw GraphError("backward needs a scalar root, " + describe(root_) + " has shape " +
                     shape_string(root_value.shape()));
  }
  std::vector<char> on_path(root_ + 1, 0);
  on_path[root_] = 1;
  for (std::size_t i = root_ + 1; i-- > 0;) {
    if (!on_path[i]) continue;
    for (auto in : nodes_[i].inputs) on_path[in] = 1;
  }
  for (std::size_t i = 0; i <= root_; ++i) {
    Node& node = nodes_[i];
    node.grad = Tensor<T>(node.value.shape(), T{0});
  }
  nodes_[root_].grad[0] = T{1};

  std::vector<const Tensor<T>*> args;
  std::vector<Tensor<T>*> grads;
  for (std::size_t i = root_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.op || !on_path[i] || !node.requires_grad) continue;
    args.clear();
    grads.clear();
    for (auto in : node.inputs) {
      args.push_back(&nodes_[in].value);
      grads.push_back(nodes_[in].requires_grad ? &nodes_[in].grad : nullptr);
    }
    node.op->backward(args, node.value, node.grad, grads);
  }

  Gradients<T> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (node.leaf != LeafKind::Parameter) continue;
    out.emplace(node.name, i <= root_ ? node.grad : Tensor<T>(node.value.shape(), T{0}));
  }
  return out;
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var<T> v) const {
  check_owned(v);
  return nodes_[v.id].value;
}

template <typename T>
const Tensor<T>& Graph<T>::grad(Var<T> v) const {
  check_owned(v);
  if (!forwarded_ || v.id > root_) throw GraphError(describe(v.id) + " has no gradient");
  return nodes_[v.id].grad;
}

template <typename T>
const Tensor<T>& Graph<T>::parameter_default(const std::string& name) const {
  auto it = leaf_index_.find(name);
  if (it == leaf_index_.end() || nodes_[it->second].leaf != LeafKind::Parameter) {
    throw GraphError("no parameter named '" + name + "'");
  }
  return nodes_[it->second].fallback;
}

template <typename T>
std::vector<std::string> Graph<T>::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& node : nodes_) {
    if (node.leaf == LeafKind::Parameter) names.push_back(node.name);
  }
  return names;
}

template class Graph<float>;
template class Graph<double>;

// ---------------------------------------------------------------------------
// Primitives

namespace {

template <typename T>
using Inputs = std::span<const Tensor<T>* const>;
template <typename T>
using GradInputs = std::span<Tensor<T>* const>;

[[noreturn]] void shape_fail(std::string_view op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

// Row-major strides of `shape` with zero stride on broadcast axes of extent 1.
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> strides(shape.size(), 0);
  std::size_t stride = 1;
  for (std::size_t d = shape.size(); d-- > 0;) {
    strides[d] = (shape[d] == out[d]) ? stride : 0;
    stride *= shape[d];
  }
  return strides;
}

template <typename F>
void walk_broadcast(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                    F&& f) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> index(rank, 0);
  std::size_t ai = 0, bi = 0;
  const std::size_t total = numel(out);
  for (std::size_t oi = 0; oi < total; ++oi) {
    f(oi, ai, bi);
    for (std::size_t d = rank; d-- > 0;) {
      ++index[d];
      ai += sa[d];
      bi += sb[d];
      if (index[d] < out[d]) break;
      ai -= sa[d] * out[d];
      bi -= sb[d] * out[d];
      index[d] = 0;
    }
  }
}

enum class BinaryKind { Add, Sub, Mul };

template <typename T>
class BinaryOp final : public Op<T> {
 public:
  explicit BinaryOp(BinaryKind kind) : kind_(kind) {}
  std::string_view name() const override {
    switch (kind_) {
      case BinaryKind::Add: return "add";
      case BinaryKind::Sub: return "sub";
      default: return "mul";
    }
  }

  Tensor<T> forward(Inputs<T> in) override {
    const auto& a = *in[0];
    const auto& b = *in[1];
    if (a.rank() != b.rank()) {
      shape_fail(name(), "rank mismatch, expected " + shape_string(a.shape()) + " got " + shape_string(b.shape()));
    }
    Shape out_shape(a.rank());
    for (std::size_t d = 0; d < a.rank(); ++d) {
      if (a.dim(d) == b.dim(d) || b.dim(d) == 1) {
        out_shape[d] = a.dim(d);
      } else if (a.dim(d) == 1) {
        out_shape[d] = b.dim(d);
      } else {
        shape_fail(name(), "cannot broadcast " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
      }
    }
    same_ = a.shape() == b.shape();
    Tensor<T> out(out_shape);
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    if (same_) {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = combine(x[i], y[i]);
    } else {
      sa_ = broadcast_strides(a.shape(), out_shape);
      sb_ = broadcast_strides(b.shape(), out_shape);
      walk_broadcast(out_shape, sa_, sb_, [&](std::size_t oi, std::size_t ai, std::size_t bi) {
        o[oi] = combine(x[ai], y[bi]);
      });
    }
    return out;
  }

  void backward(Inputs<T> in, const Tensor<T>& out, const Tensor<T>& gout, GradInputs<T> gin) override {
    auto g = gout.data();
    auto x = in[0]->data();
    auto y = in[1]->data();
    T* ga = gin[0] ? gin[0]->data().data() : nullptr;
    T* gb = gin[1] ? gin[1]->data().data() : nullptr;
    auto step = [&](std::size_t oi, std::size_t ai, std::size_t bi) {
      switch (kind_) {
        case BinaryKind::Add:
          if (ga) ga[ai] += g[oi];
          if (gb) gb[bi] += g[oi];
          break;
        case BinaryKind::Sub:
          if (ga) ga[ai] += g[oi];
          if (gb) gb[bi] -= g[oi];
          break;
        case BinaryKind::Mul:
          if (ga) ga[ai] += g[oi] * y[bi];
          if (gb) gb[bi] += g[oi] * x[ai];
          break;
      }
    };
    if (same_) {
      for (std::size_t i = 0; i < g.size(); ++i) step(i, i, i);
    } else {
      walk_broadcast(out.shape(), sa_, sb_, step);
    }
  }

 private:
  T combine(T x, T y) const {
    switch (kind_) {
      case BinaryKind::Add: return x + y;
      case BinaryKind::Sub: return x - y;
      default: return x * y;
    }
  }

  BinaryKind kind_;
  bool same_ = true;
  std::vector<std::size_t> sa_, sb_;
};

template <typename T>
class AffineScalarOp final : public Op<T> {
 public:
  AffineScalarOp(T factor, T offset) : factor_(factor), offset_(offset) {}
  std::string_view name() const override { return offset_ == T{0} ? "scale" : "add_scalar"; }
  Tensor<T> forward(Inputs<T> in) override {
    Tensor<T> out = *in[0];
    for (auto& v : out.data()) v = v * factor_ + offset_;
    return out;
  }
  void backward(Inputs<T>, const Tensor<T>&, const Tensor<T>& gout, GradInputs<T> gin) override {
    auto g = gout.data();
    auto ga = gin[0]->data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor_;
  }

 private:
  T factor_, offset_;
};

template <typename T>
class MatmulOp final : public Op<T> {
 public:
  std::string_view name() const override { return "matmul"; }
  Tensor<T> forward(Inputs<T> in) override {
    const auto& a = *in[0];
    const auto& b = *in[1];
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
      shape_fail(name(), "expected [m x k] and [k x n], got " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      T* row = &out(i, 0);
      for (std::size_t p = 0; p < k; ++p) {
        const T av = a(i, p);
        const T* brow = &b(p, 0);
        for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
      }
    }
    return out;
  }
  void backward(Inputs<T> in, const Tensor<T>&, const Tensor<T>& g, GradInputs<T> gin) override {
    const auto& a = *in[0];
    const auto& b = *in[1];
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (gin[0]) {
      auto& ga = *gin[0];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += g(i, j) * b(p, j);
          ga(i, p) += acc;
        }
    }
    if (gin[1]) {
      auto& gb = *gin[1];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T av = a(i, p);
          for (std::size_t j = 0; j < n; ++j) gb(p, j) += av * g(i, j);
        }
    }
  }
};

template <typename T>
class TransposeOp final : public Op<T> {
 public:
  std::string_view name() const override { return "transpose"; }
  Tensor<T> forward(Inputs<T> in) override {
    const auto& a = *in[0];
    if (a.rank() != 2) shape_fail(name(), "expected rank 2, got " + shape_string(a.shape()));
    Tensor<T> out({a.dim(1), a.dim(0)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
      for (std::size_t j = 0; j < a.dim(1); ++j) out(j, i) = a(i, j);
    return out;
  }
  void backward(Inputs<T> in, const Tensor<T>&, const Tensor<T>& g, GradInputs<T> gin) override {
    auto& ga = *gin[0];
    for (std::size_t i = 0; i < in[0]->dim(0); ++i)
      for (std::size_t j = 0; j < in[0]->dim(1); ++j) ga(i, j) += g(j, i);
  }
};

template <typename T>
class ReshapeOp final : public Op<T> {
 public:
  explicit ReshapeOp(Shape shape, bool flatten = false) : shape_(std::move(shape)), flatten_(flatten) {}
  std::string_view name() const override { return flatten_ ? "flatten" : "reshape"; }
  Tensor<T> forward(Inputs<T> in) override {
    if (flatten_) {
      if (in[0]->rank() < 1) shape_fail(name(), "needs rank >= 1");
      shape_ = {in[0]->dim(0), in[0]->size() / in[0]->dim(0)};
    }
    if (numel(shape_) != in[0]->size()) {
      shape_fail(name(), "expected " + std::to_string(numel(shape_)) + " elements for " + shape_string(shape_) +
                             ", got " + shape_string(in[0]->shape()));
    }
    return in[0]->reshaped(shape_);
  }
  void backward(Inputs<T>, const Tensor<T>&, const Tensor<T>& g, GradInputs<T> gin) override {
    auto ga = gin[0]->data();
    auto gv = g.data();
    for (std::size_t i = 0; i < gv.size(); ++i) ga[i] += gv[i];
  }

 private:
  Shape shape_;
  bool flatten_;
};

template <typename T>
class ConcatOp final : public Op<T> {
 public:
  explicit ConcatOp(std::size_t axis) : axis_(axis) {}
  std::string_view name() const override { return "concat"; }
  Tensor<T> forward(Inputs<T> in) override {
    const Shape& first = in[0]->shape();
    if (axis_ >= first.size()) shape_fail(name(), "axis out of range for " + shape_string(first));
    Shape out_shape = first;
    out_shape[axis_] = 0;
    for (const auto* t : in) {
      bool ok = t->rank() == first.size();
      for (std::size_t d = 0; ok && d < first.size(); ++d) ok = d == axis_ || t->dim(d) == first[d];
      if (!ok) shape_fail(name(), "expected " + shape_string(first) + " off-axis, got " + shape_string(t->shape()));
      out_shape[axis_] += t->dim(axis_);
    }
    outer_ = 1;
    for (std::size_t d = 0; d < axis_; ++d) outer_ *= first[d];
    inner_ = 1;
    for (std::size_t d = axis_ + 1; d < first.size(); ++d) inner_ *= first[d];
    Tensor<T> out(out_shape);
    const std::size_t out_row = out_shape[axis_] * inner_;
    std::size_t offset = 0;
    for (const auto* t : in) {
      const std::size_t row = t->dim(axis_) * inner_;
      for (std::size_t o = 0; o < outer_; ++o)
        std::copy_n(t->data().data() + o * row, row, out.data().data() + o * out_row + offset);
      offset += row;
    }
    return out;
  }
  void backward(Inputs<T> in, const Tensor<T>& out, const Tensor<T>& g, GradInputs<T> gin) override {
    const std::size_t out_row = out.dim(axis_) * inner_;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      const std::size_t row = in[k]->dim(axis_) * inner_;
      if (gin[k]) {
        T* ga = gin[k]->data().data();
        for (std::size_t o = 0; o < outer_; ++o)
          for (std::size_t i = 0; i < row; ++i) ga[o * row + i] += g.data()[o * out_row + offset + i];
      }
      offset += row;
    }
  }

 private:
  std::size_t axis_;
  std::size_t outer_ = 1, inner_ = 1;
};

template <typename T>
class SumAllOp final : public Op<T> {
 public:
  explicit SumAllOp(bool average) : average_(average) {}
  std::string_view name() const override { return average_ ? "mean" : "sum"; }
  Tensor<T> forward(Inputs<T> in) override {
    T acc{0};
    for (auto v : in[0]->data()) acc += v;
    return Tensor<T>::scalar(average_ ? acc / static_cast<T>(in[0]->size()) : acc);
  }
  void backward(Inputs<T> in, const Tensor<T>&, const Tensor<T>& g, GradInputs<T> gin) override {
    const T gv = average_ ? g[0] / static_cast<T>(in[0]->size()) : g[0];
    for (auto& v : gin[0]->data()) v += gv;
  }

 private:
  bool average_;
};

template <typename T>
class SumAxisOp final : public Op<T> {
 public:
  SumAxisOp(std::size_t axis, bool keepdim, bool average) : axis_(axis), keepdim_(keepdim), average_(average) {}
  std::string_view name() const override { return average_ ? "mean_axis" : "sum_axis"; }
  Tensor<T> forward(Inputs<T> in) override {
    const Shape& shape = in[0]->shape();
    if (axis_ >= shape.size()) shape_fail(name(), "axis out of range for " + shape_string(shape));
    outer_ = 1;
    for (std::size_t d = 0; d < axis_; ++d) outer_ *= shape[d];
    len_ = shape[axis_];
    inner_ = 1;
    for (std::size_t d = axis_ + 1; d < shape.size(); ++d) inner_ *= shape[d];
    Shape out_shape = shape;
    if (keepdim_) {
      out_shape[axis_] = 1;
    } else {
      out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis_));
    }
    Tensor<T> out(out_shape);
    auto x = in[0]->data();
    auto o = out.data();
    for (std::size_t a = 0; a < outer_; ++a)
      for (std::size_t l = 0; l < len_; ++l)
        for (std::size_t i = 0; i < inner_; ++i) o[a * inner_ + i] += x[(a * len_ + l) * inner_ + i];
    if (average_) {
      for (auto& v : o) v /= static_cast<T>(len_);
    }
    return out;
  }
  void backward(Inputs<T>, const Tensor<T>&, const Tensor<T>& g, GradInputs<T> gin) override {
    auto ga = gin[0]->data();
    auto gv = g.data();
    const T k = average_ ? T{1} / static_cast<T>(len_) : T{1};
    for (std::size_t a = 0; a < outer_; ++a)
      for (std::size_t l = 0; l < len_; ++l)
        for (std::size_t i = 0; i < inner_; ++i) ga[(a * len_ + l) * inner_ + i] += k * gv[a * inner_ + i];
  }

 private:
  std::size_t axis_;
  bool keepdim_;
  bool average_;
  std::size_t outer_ = 1, len_ = 1, inner_ = 1;
};

template <typename T>
class ExpOp final : public Op<T> {
 public:
  std::string_view name() const override { return "exp"; }
  Tensor<T> forward(Inputs<T> in) override {
    Tensor<T> out = *in[0];
    for (auto& v : out.data()) v = std::exp(v);
    return out;
  }
  void backward(Inputs<T>, const Tensor<T>& out, const Tensor<T>& g, GradInputs<T> gin) override {
    auto ga = gin[0]->data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * out[i];
  }
};

template <typename T>
class LogOp final : public Op<T> {
 public:
  explicit LogOp(T floor) : floor_(floor) {}
  std::string_view name() const override { return "log"; }
  Tensor<T> forward(Inputs<T> in) override {
    Tensor<T> out = *in[0];
    for (auto& v : out.data()) v = std::log(std::max(v, floor_));
    return out;
  }
  void backward(Inputs<T> in, const Tensor<T>&, const Tensor<T>& g, GradInputs<T> gin) override {
    auto x = in[0]->data();
    auto ga = gin[0]->data();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (x[i] > floor_) ga[i] += g[i] / x[i];
    }
  }

 private:
  T floor_;
};

template <typename T>
class SoftmaxOp final : public Op<T> {
 public:
  explicit SoftmaxOp(bool log_space) : log_(log_space) {}
  std::string_view name() const override { return log_ ? "log_softmax" : "softmax"; }
  Tensor<T> forward(Inputs<T> in) override {
    const auto& x = *in[0];
    if (x.rank() == 0) shape_fail(name(), "needs rank >= 1");
    width_ = x.shape().back();
    Tensor<T> out(x.shape());
    const std::size_t rows = x.size() / width_;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = x.data().data() + r * width_;
      T* yr = out.data().data() + r * width_;
      const T peak = *std::max_element(xr, xr + width_);
      T total{0};
      for (std::size_t j = 0; j < width_; ++j) total += std::exp(xr[j] - peak);
      const T log_total = std::log(total);
      for (std::size_t j = 0; j < width_; ++j) {
        yr[j] = log_ ? xr[j] - peak - log_total : std::exp(xr[j] - peak) / total;
      }
    }
    return out;
  }
  void backward(Inputs<T>, const Tensor<T>& out, const Tensor<T>& g, GradInputs<T> gin) override {
    const std::size_t rows = out.size() / width_;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = out.data().data() + r * width_;
      const T* gr = g.data().data() + r * width_;
      T* ga = gin[0]->data().data() + r * width_;
      if (log_) {
        T total{0};
        for (std::size_t j = 0; j < width_; ++j) total += gr[j];
        for (std::size_t j = 0; j < width_; ++j) ga[j] += gr[j] - std::exp(yr[j]) * total;
      } else {
        T inner{0};
        for (std::size_t j = 0; j < width_; ++j) inner += gr[j] * yr[j];
        for (std::size_t j = 0; j < width_; ++j) ga[j] += yr[j] * (gr[j] - inner);
      }
    }
  }

 private:
  bool log_;
  std::size_t width_ = 1;
};

template <typename T>
class EluOp final : public Op<T> {
 public:
  explicit EluOp(T alpha) : alpha_(alpha) {}
  std::string_view name() const override { return "elu"; }
  Tensor<T> forward(Inputs<T> in) override {
    Tensor<T> out = *in[0];
    for (auto& v : out.data()) v = v > T{0} ? v : alpha_ * std::expm1(v);
    return out;
  }
  void backward(Inputs<T> in, const Tensor<T>& out, const Tensor<T>& g, GradInputs<T> gin) override {
    auto x = in[0]->data();
    auto ga = gin[0]->data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * (x[i] > T{0} ? T{1} : out[i] + alpha_);
  }

 private:
  T alpha_;
};

template <typename T>
class Conv2dOp final : public Op<T> {
 public:
  Conv2dOp(Padding padding, std::size_t groups, bool depthwise)
      : padding_(padding), groups_(groups), depthwise_(depthwise) {}
  std::string_view name() const override { return depthwise_ ? "depthwise_conv2d" : "conv2d"; }

  Tensor<T> forward(Inputs<T> in) override {
    const auto& x = *in[0];
    const auto& w = *in[1];
    if (x.rank() != 4 || w.rank() != 4) {
      shape_fail(name(), "expected N x C x H x W input and O x I x KH x KW weight, got " + shape_string(x.shape()) +
                             " and " + shape_string(w.shape()));
    }
    n_ = x.dim(0);
    cin_ = x.dim(1);
    h_ = x.dim(2);
    w_ = x.dim(3);
    cout_ = w.dim(0);
    kh_ = w.dim(2);
    kw_ = w.dim(3);
    const std::size_t groups = depthwise_ ? cin_ : groups_;
    if (groups == 0 || cin_ % groups != 0 || cout_ % groups != 0 || w.dim(1) != cin_ / groups) {
      shape_fail(name(), "weight " + shape_string(w.shape()) + " incompatible with input " + shape_string(x.shape()) +
                             " and " + std::to_string(groups) + " groups (expected weight dim 1 = " +
                             std::to_string(groups ? cin_ / groups : 0) + ")");
    }
    groups_used_ = groups;
    if (padding_ == Padding::Same) {
      oh_ = h_;
      ow_ = w_;
      pt_ = (kh_ - 1) / 2;
      pl_ = (kw_ - 1) / 2;
    } else {
      if (kh_ > h_ || kw_ > w_) {
        shape_fail(name(), "kernel " + shape_string(w.shape()) + " larger than input " + shape_string(x.shape()));
      }
      oh_ = h_ - kh_ + 1;
      ow_ = w_ - kw_ + 1;
      pt_ = pl_ = 0;
    }
    Tensor<T> out({n_, cout_, oh_, ow_});
    if (groups == 1) {
      dense_forward(x, w, out);
      return out;
    }
    const std::size_t cin_g = cin_ / groups, cout_g = cout_ / groups;
    for (std::size_t n = 0; n < n_; ++n)
      for (std::size_t oc = 0; oc < cout_; ++oc) {
        const std::size_t g = oc / cout_g;
        T* op = out.data().data() + ((n * cout_ + oc) * oh_) * ow_;
        for (std::size_t icg = 0; icg < cin_g; ++icg) {
          const std::size_t ic = g * cin_g + icg;
          const T* ip = x.data().data() + ((n * cin_ + ic) * h_) * w_;
          const T* wp = w.data().data() + ((oc * cin_g + icg) * kh_) * kw_;
          taps(ip, wp, [&](const T* row_in, T* row_out, T wv, std::size_t len) {
            for (std::size_t i = 0; i < len; ++i) row_out[i] += wv * row_in[i];
          }, op);
        }
      }
    return out;
  }

  void backward(Inputs<T> in, const Tensor<T>&, const Tensor<T>& g, GradInputs<T> gin) override {
    const auto& x = *in[0];
    const auto& w = *in[1];
    const std::size_t groups = groups_used_;
    if (groups == 1) {
      dense_backward(x, w, g, gin);
      return;
    }
    const std::size_t cin_g = cin_ / groups, cout_g = cout_ / groups;
    for (std::size_t n = 0; n < n_; ++n)
      for (std::size_t oc = 0; oc < cout_; ++oc) {
        const std::size_t grp = oc / cout_g;
        const T* gp = g.data().data() + ((n * cout_ + oc) * oh_) * ow_;
        for (std::size_t icg = 0; icg < cin_g; ++icg) {
          const std::size_t ic = grp * cin_g + icg;
          const std::size_t in_off = ((n * cin_ + ic) * h_) * w_;
          const std::size_t w_off = ((oc * cin_g + icg) * kh_) * kw_;
          if (gin[0]) {
            T* gx = gin[0]->data().data() + in_off;
            const T* wp = w.data().data() + w_off;
            for_each_tap(wp, [&](std::size_t iy, std::size_t oy, std::size_t ix0, std::size_t ox0, std::size_t len,
                                 T wv, std::size_t) {
              T* dst = gx + iy * w_ + ix0;
              const T* src = gp + oy * ow_ + ox0;
              for (std::size_t i = 0; i < len; ++i) dst[i] += wv * src[i];
            });
          }
          if (gin[1]) {
            T* gw = gin[1]->data().data() + w_off;
            const T* ip = x.data().data() + in_off;
            for_each_tap(w.data().data() + w_off, [&](std::size_t iy, std::size_t oy, std::size_t ix0,
                                                      std::size_t ox0, std::size_t len, T, std::size_t tap) {
              const T* a = ip + iy * w_ + ix0;
              const T* b = gp + oy * ow_ + ox0;
              T acc{0};
              for (std::size_t i = 0; i < len; ++i) acc += a[i] * b[i];
              gw[tap] += acc;
            });
          }
        }
      }
  }

 private:
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const RowMat>;
  using MMap = Eigen::Map<RowMat>;

  // Patch matrix of one sample: rows (ic, ky, kx), columns output positions.
  void im2col(const T* x, RowMat& cols) const {
    cols.setZero(static_cast<Eigen::Index>(cin_ * kh_ * kw_), static_cast<Eigen::Index>(oh_ * ow_));
    for (std::size_t ic = 0; ic < cin_; ++ic) {
      const T* ip = x + ic * h_ * w_;
      for_each_tap(nullptr, [&](std::size_t iy, std::size_t oy, std::size_t ix0, std::size_t ox0, std::size_t len, T,
                                std::size_t tap) {
        T* dst = cols.data() + (ic * kh_ * kw_ + tap) * oh_ * ow_ + oy * ow_ + ox0;
        std::copy_n(ip + iy * w_ + ix0, len, dst);
      });
    }
  }

  void col2im(const RowMat& cols, T* gx) const {
    for (std::size_t ic = 0; ic < cin_; ++ic) {
      T* dst = gx + ic * h_ * w_;
      for_each_tap(nullptr, [&](std::size_t iy, std::size_t oy, std::size_t ix0, std::size_t ox0, std::size_t len, T,
                                std::size_t tap) {
        const T* src = cols.data() + (ic * kh_ * kw_ + tap) * oh_ * ow_ + oy * ow_ + ox0;
        T* row = dst + iy * w_ + ix0;
        for (std::size_t i = 0; i < len; ++i) row[i] += src[i];
      });
    }
  }

  void dense_forward(const Tensor<T>& x, const Tensor<T>& w, Tensor<T>& out) const {
    const auto r = static_cast<Eigen::Index>(cin_ * kh_ * kw_);
    const auto p = static_cast<Eigen::Index>(oh_ * ow_);
    const auto co = static_cast<Eigen::Index>(cout_);
    CMap wm(w.data().data(), co, r);
    RowMat cols;
    for (std::size_t n = 0; n < n_; ++n) {
      im2col(x.data().data() + n * cin_ * h_ * w_, cols);
      MMap(out.data().data() + n * cout_ * oh_ * ow_, co, p).noalias() = wm * cols;
    }
  }

  void dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& g, GradInputs<T> gin) const {
    const auto r = static_cast<Eigen::Index>(cin_ * kh_ * kw_);
    const auto p = static_cast<Eigen::Index>(oh_ * ow_);
    const auto co = static_cast<Eigen::Index>(cout_);
    CMap wm(w.data().data(), co, r);
    RowMat cols, dcols;
    for (std::size_t n = 0; n < n_; ++n) {
      CMap gm(g.data().data() + n * cout_ * oh_ * ow_, co, p);
      if (gin[1]) {
        im2col(x.data().data() + n * cin_ * h_ * w_, cols);
        MMap(gin[1]->data().data(), co, r).noalias() += gm * cols.transpose();
      }
      if (gin[0]) {
        dcols.noalias() = wm.transpose() * gm;
        col2im(dcols, gin[0]->data().data() + n * cin_ * h_ * w_);
      }
    }
  }

  // Visits every (kernel tap, output row) pair with the overlapping column span.
  template <typename F>
  void for_each_tap(const T* wp, F&& f) const {
    for (std::size_t ky = 0; ky < kh_; ++ky)
      for (std::size_t kx = 0; kx < kw_; ++kx) {
        const std::size_t tap = ky * kw_ + kx;
        const T wv = wp ? wp[tap] : T{0};
        // input column ix = ox + kx - pl_
        const std::size_t ox0 = kx < pl_ ? pl_ - kx : 0;
        const std::size_t ox1 = std::min(ow_, w_ + pl_ - kx);
        if (ox0 >= ox1) continue;
        const std::size_t ix0 = ox0 + kx - pl_;
        for (std::size_t oy = 0; oy < oh_; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pt_);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h_)) continue;
          f(static_cast<std::size_t>(iy), oy, ix0, ox0, ox1 - ox0, wv, tap);
        }
      }
  }

  template <typename F>
  void taps(const T* ip, const T* wp, F&& axpy, T* op) const {
    for_each_tap(wp, [&](std::size_t iy, std::size_t oy, std::size_t ix0, std::size_t ox0, std::size_t len, T wv,
                         std::size_t) { axpy(ip + iy * w_ + ix0, op + oy * ow_ + ox0, wv, len); });
  }

  Padding padding_;
  std::size_t groups_;
  bool depthwise_;
  std::size_t groups_used_ = 1;
  std::size_t n_ = 0, cin_ = 0, h_ = 0, w_ = 0, cout_ = 0, kh_ = 0, kw_ = 0, oh_ = 0, ow_ = 0, pt_ = 0, pl_ = 0;
};

template <typename T>
class AvgPoolOp final : public Op<T> {
 public:
  AvgPoolOp(std::size_t kh, std::size_t kw) : kh_(kh), kw_(kw) {}
  std::string_view name() const override { return "avg_pool2d"; }
  Tensor<T> forward(Inputs<T> in) override {
    const auto& x = *in[0];
    if (x.rank() != 4) shape_fail(name(), "expected N x C x H x W, got " + shape_string(x.shape()));
    if (kh_ == 0 || kw_ == 0 || x.dim(2) < kh_ || x.dim(3) < kw_) {
      shape_fail(name(), "window " + std::to_string(kh_) + "x" + std::to_string(kw_) + " does not fit " +
                             shape_string(x.shape()));
    }
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / kh_, ow = w / kw_;
    Tensor<T> out({x.dim(0), x.dim(1), oh, ow});
    const T inv = T{1} / static_cast<T>(kh_ * kw_);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc{0};
          for (std::size_t ky = 0; ky < kh_; ++ky)
            for (std::size_t kx = 0; kx < kw_; ++kx) acc += x.data()[(p * h + oy * kh_ + ky) * w + ox * kw_ + kx];
          out.data()[(p * oh + oy) * ow + ox] = acc * inv;
        }
    return out;
  }
  void backward(Inputs<T> in, const Tensor<T>& out, const Tensor<T>& g, GradInputs<T> gin) override {
    const auto& x = *in[0];
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = out.dim(2), ow = out.dim(3);
    const T inv = T{1} / static_cast<T>(kh_ * kw_);
    auto ga = gin[0]->data();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T gv = g.data()[(p * oh + oy) * ow + ox] * inv;
          for (std::size_t ky = 0; ky < kh_; ++ky)
            for (std::size_t kx = 0; kx < kw_; ++kx) ga[(p * h + oy * kh_ + ky) * w + ox * kw_ + kx] += gv;
        }
  }

 private:
  std::size_t kh_, kw_;
};

template <typename T>
class BatchNormOp final : public Op<T> {
 public:
  BatchNormOp(BatchNormStats<T>* stats, Mode mode, T momentum, T eps)
      : stats_(stats), mode_(mode), momentum_(momentum), eps_(eps) {}
  std::string_view name() const override { return "batch_norm"; }

  Tensor<T> forward(Inputs<T> in) override {
    const auto& x = *in[0];
    const auto& gamma = *in[1];
    const auto& beta = *in[2];
    if (x.rank() < 2) shape_fail(name(), "expected N x C [x ...], got " + shape_string(x.shape()));
    channels_ = x.dim(1);
    if (gamma.size() != channels_ || beta.size() != channels_) {
      shape_fail(name(), "expected scale/shift of " + std::to_string(channels_) + " elements, got " +
                             shape_string(gamma.shape()) + " and " + shape_string(beta.shape()));
    }
    batch_ = x.dim(0);
    inner_ = x.size() / (batch_ * channels_);
    const std::size_t count = batch_ * inner_;
    mean_.assign(channels_, T{0});
    inv_std_.assign(channels_, T{0});
    if (mode_ == Mode::Train) {
      if (count < 2) shape_fail(name(), "train mode needs at least 2 values per channel");
      for (std::size_t c = 0; c < channels_; ++c) {
        T acc{0};
        visit(c, [&](std::size_t i) { acc += x[i]; });
        const T mu = acc / static_cast<T>(count);
        T var{0};
        visit(c, [&](std::size_t i) { var += (x[i] - mu) * (x[i] - mu); });
        var /= static_cast<T>(count);
        mean_[c] = mu;
        inv_std_[c] = T{1} / std::sqrt(var + eps_);
        if (stats_) {
          const T unbiased = var * static_cast<T>(count) / static_cast<T>(count - 1);
          stats_->running_mean[c] = (T{1} - momentum_) * stats_->running_mean[c] + momentum_ * mu;
          stats_->running_var[c] = (T{1} - momentum_) * stats_->running_var[c] + momentum_ * unbiased;
        }
      }
    } else {
      if (!stats_) shape_fail(name(), "eval mode needs running statistics");
      for (std::size_t c = 0; c < channels_; ++c) {
        mean_[c] = stats_->running_mean[c];
        inv_std_[c] = T{1} / std::sqrt(stats_->running_var[c] + eps_);
      }
    }
    Tensor<T> out(x.shape());
    for (std::size_t c = 0; c < channels_; ++c) {
      visit(c, [&](std::size_t i) { out[i] = (x[i] - mean_[c]) * inv_std_[c] * gamma[c] + beta[c]; });
    }
    return out;
  }

  void backward(Inputs<T> in, const Tensor<T>&, const Tensor<T>& g, GradInputs<T> gin) override {
    const auto& x = *in[0];
    const auto& gamma = *in[1];
    const T count = static_cast<T>(batch_ * inner_);
    for (std::size_t c = 0; c < channels_; ++c) {
      T sum_g{0}, sum_gx{0};
      visit(c, [&](std::size_t i) {
        const T xhat = (x[i] - mean_[c]) * inv_std_[c];
        sum_g += g[i];
        sum_gx += g[i] * xhat;
      });
      if (gin[1]) (*gin[1])[c] += sum_gx;
      if (gin[2]) (*gin[2])[c] += sum_g;
      if (gin[0]) {
        auto& gx = *gin[0];
        const T k = gamma[c] * inv_std_[c];
        if (mode_ == Mode::Train) {
          visit(c, [&](std::size_t i) {
            const T xhat = (x[i] - mean_[c]) * inv_std_[c];
            gx[i] += k * (g[i] - sum_g / count - xhat * sum_gx / count);
          });
        } else {
          visit(c, [&](std::size_t i) { gx[i] += k * g[i]; });
        }
      }
    }
  }

 private:
  template <typename F>
  void visit(std::size_t c, F&& f) const {
    for (std::size_t n = 0; n < batch_; ++n) {
      const std::size_t base = (n * channels_ + c) * inner_;
      for (std::size_t i = 0; i < inner_; ++i) f(base + i);
    }
  }

  BatchNormStats<T>* stats_;
  Mode mode_;
  T momentum_, eps_;
  std::size_t batch_ = 0, channels_ = 0, inner_ = 0;
  std::vector<T> mean_, inv_std_;
};

template <typename T>
class DropoutOp final : public Op<T> {
 public:
  DropoutOp(T p, std::uint64_t seed) : p_(p), seed_(seed) {}
  std::string_view name() const override { return "dropout"; }
  Tensor<T> forward(Inputs<T> in) override {
    const auto& x = *in[0];
    std::mt19937_64 rng(seed_);
    const T keep_scale = T{1} / (T{1} - p_);
    mask_.assign(x.size(), T{0});
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      mask_[i] = u >= static_cast<double>(p_) ? keep_scale : T{0};
      out[i] = x[i] * mask_[i];
    }
    return out;
  }
  void backward(Inputs<T>, const Tensor<T>&, const Tensor<T>& g, GradInputs<T> gin) override {
    auto ga = gin[0]->data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * mask_[i];
  }

 private:
  T p_;
  std::uint64_t seed_;
  std::vector<T> mask_;
};

template <typename T, typename OpT, typename... Args>
Var<T> make(std::vector<Var<T>> inputs, Args&&... args) {
  if (inputs.empty() || inputs.front().graph == nullptr) throw GraphError("operation on an unbound variable");
  return inputs.front().graph->apply(std::make_unique<OpT>(std::forward<Args>(args)...), std::move(inputs));
}

}  // namespace

namespace ops {

template <typename T> Var<T> add(Var<T> a, Var<T> b) { return make<T, BinaryOp<T>>({a, b}, BinaryKind::Add); }
template <typename T> Var<T> sub(Var<T> a, Var<T> b) { return make<T, BinaryOp<T>>({a, b}, BinaryKind::Sub); }
template <typename T> Var<T> mul(Var<T> a, Var<T> b) { return make<T, BinaryOp<T>>({a, b}, BinaryKind::Mul); }
template <typename T> Var<T> scale(Var<T> a, T factor) { return make<T, AffineScalarOp<T>>({a}, factor, T{0}); }
template <typename T> Var<T> add_scalar(Var<T> a, T offset) { return make<T, AffineScalarOp<T>>({a}, T{1}, offset); }
template <typename T> Var<T> square(Var<T> a) { return mul(a, a); }
template <typename T> Var<T> dot(Var<T> a, Var<T> b) { return sum(mul(a, b)); }
template <typename T> Var<T> matmul(Var<T> a, Var<T> b) { return make<T, MatmulOp<T>>({a, b}); }
template <typename T> Var<T> transpose(Var<T> a) { return make<T, TransposeOp<T>>({a}); }
template <typename T> Var<T> reshape(Var<T> a, Shape shape) { return make<T, ReshapeOp<T>>({a}, std::move(shape)); }
template <typename T> Var<T> flatten(Var<T> a) { return make<T, ReshapeOp<T>>({a}, Shape{}, true); }
template <typename T> Var<T> concat(std::vector<Var<T>> parts, std::size_t axis) {
  return make<T, ConcatOp<T>>(std::move(parts), axis);
}
template <typename T> Var<T> sum(Var<T> a) { return make<T, SumAllOp<T>>({a}, false); }
template <typename T> Var<T> sum(Var<T> a, std::size_t axis, bool keepdim) {
  return make<T, SumAxisOp<T>>({a}, axis, keepdim, false);
}
template <typename T> Var<T> mean(Var<T> a) { return make<T, SumAllOp<T>>({a}, true); }
template <typename T> Var<T> mean(Var<T> a, std::size_t axis, bool keepdim) {
  return make<T, SumAxisOp<T>>({a}, axis, keepdim, true);
}
template <typename T> Var<T> exp(Var<T> a) { return make<T, ExpOp<T>>({a}); }
template <typename T> Var<T> log(Var<T> a, T floor) { return make<T, LogOp<T>>({a}, floor); }
template <typename T> Var<T> softmax(Var<T> a) { return make<T, SoftmaxOp<T>>({a}, false); }
template <typename T> Var<T> log_softmax(Var<T> a) { return make<T, SoftmaxOp<T>>({a}, true); }
template <typename T> Var<T> elu(Var<T> a, T alpha) { return make<T, EluOp<T>>({a}, alpha); }
template <typename T> Var<T> conv2d(Var<T> x, Var<T> w, Padding padding, std::size_t groups) {
  return make<T, Conv2dOp<T>>({x, w}, padding, groups, false);
}
template <typename T> Var<T> depthwise_conv2d(Var<T> x, Var<T> w, Padding padding) {
  return make<T, Conv2dOp<T>>({x, w}, padding, std::size_t{1}, true);
}
template <typename T> Var<T> avg_pool2d(Var<T> x, std::size_t kh, std::size_t kw) {
  return make<T, AvgPoolOp<T>>({x}, kh, kw);
}
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>* stats, Mode mode, T momentum, T eps) {
  return make<T, BatchNormOp<T>>({x, gamma, beta}, stats, mode, momentum, eps);
}
template <typename T> Var<T> dropout(Var<T> x, T p, std::uint64_t seed, Mode mode) {
  if (!(p >= T{0} && p < T{1})) throw GraphError("dropout probability must lie in [0, 1)");
  if (mode == Mode::Eval || p == T{0}) return x;
  return make<T, DropoutOp<T>>({x}, p, seed);
}

#define SDDA_INSTANTIATE_OPS(T)                                                                          \
  template Var<T> add(Var<T>, Var<T>);                                                                   \
  template Var<T> sub(Var<T>, Var<T>);                                                                   \
  template Var<T> mul(Var<T>, Var<T>);                                                                   \
  template Var<T> scale(Var<T>, T);                                                                      \
  template Var<T> add_scalar(Var<T>, T);                                                                 \
  template Var<T> square(Var<T>);                                                                        \
  template Var<T> dot(Var<T>, Var<T>);                                                                   \
  template Var<T> matmul(Var<T>, Var<T>);                                                                \
  template Var<T> transpose(Var<T>);                                                                     \
  template Var<T> reshape(Var<T>, Shape);                                                                \
  template Var<T> flatten(Var<T>);                                                                       \
  template Var<T> concat(std::vector<Var<T>>, std::size_t);                                              \
  template Var<T> sum(Var<T>);                                                                           \
  template Var<T> sum(Var<T>, std::size_t, bool);                                                        \
  template Var<T> mean(Var<T>);                                                                          \
  template Var<T> mean(Var<T>, std::size_t, bool);                                                       \
  template Var<T> exp(Var<T>);                                                                           \
  template Var<T> log(Var<T>, T);                                                                        \
  template Var<T> softmax(Var<T>);                                                                       \
  template Var<T> log_softmax(Var<T>);                                                                   \
  template Var<T> elu(Var<T>, T);                                                                        \
  template Var<T> conv2d(Var<T>, Var<T>, Padding, std::size_t);                                          \
  template Var<T> depthwise_conv2d(Var<T>, Var<T>, Padding);                                             \
  template Var<T> avg_pool2d(Var<T>, std::size_t, std::size_t);                                          \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, BatchNormStats<T>*, Mode, T, T);                    \
  template Var<T> dropout(Var<T>, T, std::uint64_t, Mode);

SDDA_INSTANTIATE_OPS(float)
SDDA_INSTANTIATE_OPS(double)

}  // namespace ops

}  // namespace sdda
