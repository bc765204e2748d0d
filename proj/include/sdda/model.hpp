#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sdda/autodiff.hpp"

namespace sdda {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Compact EEGNet-style backbone: temporal conv -> depthwise spatial conv -> separable conv -> dense head.
struct ArchConfig {
  std::size_t temporal_filters = 8;    // F1
  std::size_t depth_multiplier = 2;    // D
  std::size_t pointwise_filters = 16;  // F2
  std::size_t temporal_length = 0;     // 0: ceil(sampling_rate / 2)
  std::size_t separable_length = 16;
  std::size_t pool1 = 4;
  std::size_t pool2 = 8;
  double dropout = 0.25;
  double sampling_rate = 128.0;

  std::size_t resolved_temporal_length() const;
  std::size_t min_samples() const { return pool1 * pool2; }
  bool operator==(const ArchConfig&) const = default;
};

struct NamedShape {
  std::string name;
  Shape shape;
  bool operator==(const NamedShape&) const = default;
};

template <typename T>
struct NetworkVars {
  Var<T> features;
  Var<T> logits;
};

template <typename T>
class Network {
 public:
  using ParameterMap = std::map<std::string, Tensor<T>>;
  using LeafMap = std::map<std::string, Var<T>>;

  Network(std::size_t channels, std::size_t samples, std::size_t classes, ArchConfig arch, std::uint64_t seed);

  std::size_t channels() const { return channels_; }
  std::size_t samples() const { return samples_; }
  std::size_t classes() const { return classes_; }
  std::size_t feature_dim() const { return feature_dim_; }
  const ArchConfig& arch() const { return arch_; }

  // Learnable tensors in layer order.
  const std::vector<std::string>& parameter_names() const { return order_; }
  const ParameterMap& parameters() const { return params_; }
  Tensor<T>& parameter(const std::string& name);
  std::size_t parameter_count() const;
  // Learnable tensors followed by batch-norm running statistics.
  std::vector<NamedShape> layout() const;
  std::map<std::string, BatchNormStats<T>>& batch_norm_stats() { return stats_; }
  const std::map<std::string, BatchNormStats<T>>& batch_norm_stats() const { return stats_; }

  // Registers every learnable tensor as a parameter leaf named prefix + name.
  LeafMap bind(Graph<T>& graph, const std::string& prefix) const;
  // input: N x 1 x C x T. In train mode the running statistics are updated on every forward
  // unless track_stats is false.
  NetworkVars<T> apply(const LeafMap& leaves, Var<T> input, Mode mode, std::uint64_t seed, bool track_stats = true);

  // Batch: N x C x T.
  Tensor<T> forward_features(const Tensor<T>& batch, Mode mode, std::uint64_t seed = 0);
  Tensor<T> forward_logits(const Tensor<T>& batch, Mode mode, std::uint64_t seed = 0);
  Tensor<T> eval_logits(const Tensor<T>& batch) const;

  template <typename U>
  Network<U> cast() const;

 private:
  template <typename U>
  friend class Network;

  Tensor<T> run(const Tensor<T>& batch, Mode mode, std::uint64_t seed, bool logits);
  void add_parameter(const std::string& name, Tensor<T> value);
  void check_batch(const Tensor<T>& batch) const;

  std::size_t channels_, samples_, classes_;
  ArchConfig arch_;
  std::size_t feature_dim_ = 0;
  std::vector<std::string> order_;
  ParameterMap params_;
  std::map<std::string, BatchNormStats<T>> stats_;
};

template <typename T>
Network<T> build_network(std::size_t channels, std::size_t samples, std::size_t classes, const ArchConfig& arch,
                         std::uint64_t seed) {
  return Network<T>(channels, samples, classes, arch, seed);
}

// Plain-text manifest followed by little-endian float32 payload; see README for the layout.
void save_checkpoint(const Network<float>& net, const std::filesystem::path& path);
Network<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace sdda
