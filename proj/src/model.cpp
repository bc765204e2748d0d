#include "sdda/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace sdda {

std::size_t ArchConfig::resolved_temporal_length() const {
  if (temporal_length > 0) return temporal_length;
  return static_cast<std::size_t>(std::ceil(sampling_rate / 2.0));
}

namespace {

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor<T> out(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : out.data()) v = static_cast<T>((2.0 * unit_uniform(rng) - 1.0) * bound);
  return out;
}

const char* const kBatchNorms[] = {"bn1", "bn2", "bn3"};

}  // namespace

template <typename T>
Network<T>::Network(std::size_t channels, std::size_t samples, std::size_t classes, ArchConfig arch,
                    std::uint64_t seed)
    : channels_(channels), samples_(samples), classes_(classes), arch_(arch) {
  if (channels_ < 1) throw ModelError("network needs at least one input channel");
  if (classes_ < 2) throw ModelError("network needs at least two classes");
  if (arch_.temporal_filters == 0 || arch_.depth_multiplier == 0 || arch_.pointwise_filters == 0 ||
      arch_.separable_length == 0 || arch_.pool1 == 0 || arch_.pool2 == 0 || arch_.resolved_temporal_length() == 0) {
    throw ModelError("architecture extents must be positive");
  }
  if (!(arch_.dropout >= 0.0 && arch_.dropout < 1.0)) throw ModelError("dropout must lie in [0, 1)");
  if (samples_ < arch_.min_samples()) {
    throw ModelError("input of " + std::to_string(samples_) + " samples is too short, pooling needs at least " +
                     std::to_string(arch_.min_samples()));
  }
  const std::size_t f1 = arch_.temporal_filters;
  const std::size_t fd = f1 * arch_.depth_multiplier;
  const std::size_t f2 = arch_.pointwise_filters;
  const std::size_t k = arch_.resolved_temporal_length();
  feature_dim_ = f2 * ((samples_ / arch_.pool1) / arch_.pool2);

  std::mt19937_64 rng(seed);
  add_parameter("temporal.weight", fan_in_uniform<T>({f1, 1, 1, k}, k, rng));
  add_parameter("bn1.weight", Tensor<T>({f1}, T{1}));
  add_parameter("bn1.bias", Tensor<T>({f1}, T{0}));
  add_parameter("spatial.weight", fan_in_uniform<T>({fd, 1, channels_, 1}, channels_, rng));
  add_parameter("bn2.weight", Tensor<T>({fd}, T{1}));
  add_parameter("bn2.bias", Tensor<T>({fd}, T{0}));
  add_parameter("separable.depthwise", fan_in_uniform<T>({fd, 1, 1, arch_.separable_length},
                                                         arch_.separable_length, rng));
  add_parameter("separable.pointwise", fan_in_uniform<T>({f2, fd, 1, 1}, fd, rng));
  add_parameter("bn3.weight", Tensor<T>({f2}, T{1}));
  add_parameter("bn3.bias", Tensor<T>({f2}, T{0}));
  add_parameter("classifier.weight", fan_in_uniform<T>({feature_dim_, classes_}, feature_dim_, rng));
  add_parameter("classifier.bias", Tensor<T>({1, classes_}, T{0}));

  const std::size_t widths[] = {f1, fd, f2};
  for (std::size_t i = 0; i < 3; ++i) {
    stats_[kBatchNorms[i]] = BatchNormStats<T>{Tensor<T>({widths[i]}, T{0}), Tensor<T>({widths[i]}, T{1})};
  }
}

template <typename T>
void Network<T>::add_parameter(const std::string& name, Tensor<T> value) {
  order_.push_back(name);
  params_.emplace(name, std::move(value));
}

template <typename T>
Tensor<T>& Network<T>::parameter(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ModelError("no parameter '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [_, p] : params_) total += p.size();
  return total;
}

template <typename T>
std::vector<NamedShape> Network<T>::layout() const {
  std::vector<NamedShape> out;
  for (const auto& name : order_) out.push_back({name, params_.at(name).shape()});
  for (const char* bn : kBatchNorms) {
    const auto& s = stats_.at(bn);
    out.push_back({std::string(bn) + ".running_mean", s.running_mean.shape()});
    out.push_back({std::string(bn) + ".running_var", s.running_var.shape()});
  }
  return out;
}

template <typename T>
typename Network<T>::LeafMap Network<T>::bind(Graph<T>& graph, const std::string& prefix) const {
  LeafMap leaves;
  for (const auto& name : order_) leaves.emplace(name, graph.parameter(prefix + name, params_.at(name)));
  return leaves;
}

template <typename T>
NetworkVars<T> Network<T>::apply(const LeafMap& p, Var<T> input, Mode mode, std::uint64_t seed, bool track_stats) {
  const T drop = static_cast<T>(arch_.dropout);
  auto bn = [&](const char* name) -> BatchNormStats<T>* {
    return (mode == Mode::Eval || track_stats) ? &stats_.at(name) : nullptr;
  };
  auto x = ops::conv2d(input, p.at("temporal.weight"), Padding::Same);
  x = ops::batch_norm(x, p.at("bn1.weight"), p.at("bn1.bias"), bn("bn1"), mode);
  x = ops::depthwise_conv2d(x, p.at("spatial.weight"), Padding::Valid);
  x = ops::batch_norm(x, p.at("bn2.weight"), p.at("bn2.bias"), bn("bn2"), mode);
  x = ops::elu(x);
  x = ops::avg_pool2d(x, 1, arch_.pool1);
  x = ops::dropout(x, drop, seed * 2 + 1, mode);
  x = ops::depthwise_conv2d(x, p.at("separable.depthwise"), Padding::Same);
  x = ops::conv2d(x, p.at("separable.pointwise"), Padding::Valid);
  x = ops::batch_norm(x, p.at("bn3.weight"), p.at("bn3.bias"), bn("bn3"), mode);
  x = ops::elu(x);
  x = ops::avg_pool2d(x, 1, arch_.pool2);
  x = ops::dropout(x, drop, seed * 2 + 2, mode);
  auto features = ops::flatten(x);
  auto logits = ops::add(ops::matmul(features, p.at("classifier.weight")), p.at("classifier.bias"));
  return {features, logits};
}

template <typename T>
void Network<T>::check_batch(const Tensor<T>& batch) const {
  if (batch.rank() != 3 || batch.dim(1) != channels_ || batch.dim(2) != samples_) {
    throw ModelError("network expects N x " + std::to_string(channels_) + " x " + std::to_string(samples_) +
                     " input, got " + shape_string(batch.shape()));
  }
}

template <typename T>
Tensor<T> Network<T>::run(const Tensor<T>& batch, Mode mode, std::uint64_t seed, bool want_logits) {
  check_batch(batch);
  Graph<T> graph;
  auto leaves = bind(graph, "");
  auto input = graph.input("input");
  auto out = apply(leaves, input, mode, seed);
  Bindings<T> bindings;
  bindings.emplace("input", batch.reshaped({batch.dim(0), 1, channels_, samples_}));
  return graph.forward(want_logits ? out.logits : out.features, bindings);
}

template <typename T>
Tensor<T> Network<T>::forward_features(const Tensor<T>& batch, Mode mode, std::uint64_t seed) {
  return run(batch, mode, seed, false);
}

template <typename T>
Tensor<T> Network<T>::forward_logits(const Tensor<T>& batch, Mode mode, std::uint64_t seed) {
  return run(batch, mode, seed, true);
}

template <typename T>
Tensor<T> Network<T>::eval_logits(const Tensor<T>& batch) const {
  // Eval mode only reads the running statistics.
  return const_cast<Network*>(this)->run(batch, Mode::Eval, 0, true);
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  Network<U> out(channels_, samples_, classes_, arch_, 0);
  for (const auto& [name, p] : params_) out.params_.at(name) = p.template cast<U>();
  for (const auto& [name, s] : stats_) {
    out.stats_.at(name) = BatchNormStats<U>{s.running_mean.template cast<U>(), s.running_var.template cast<U>()};
  }
  return out;
}

template class Network<float>;
template class Network<double>;
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;
template Network<double> Network<double>::cast<double>() const;

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointMagic = "SDDA-CHECKPOINT";
constexpr int kCheckpointVersion = 1;

std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

Tensor<float>& checkpoint_slot(Network<float>& net, const std::string& name) {
  for (const char* bn : kBatchNorms) {
    const std::string prefix = std::string(bn) + ".running_";
    if (name == prefix + "mean") return net.batch_norm_stats().at(bn).running_mean;
    if (name == prefix + "var") return net.batch_norm_stats().at(bn).running_var;
  }
  return net.parameter(name);
}

}  // namespace

void save_checkpoint(const Network<float>& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot write checkpoint " + path.string());
  const auto& a = net.arch();
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n'
      << "channels " << net.channels() << '\n'
      << "samples " << net.samples() << '\n'
      << "classes " << net.classes() << '\n'
      << "temporal_filters " << a.temporal_filters << '\n'
      << "depth_multiplier " << a.depth_multiplier << '\n'
      << "pointwise_filters " << a.pointwise_filters << '\n'
      << "temporal_length " << a.temporal_length << '\n'
      << "separable_length " << a.separable_length << '\n'
      << "pool1 " << a.pool1 << '\n'
      << "pool2 " << a.pool2 << '\n'
      << "dropout " << format_real(a.dropout) << '\n'
      << "sampling_rate " << format_real(a.sampling_rate) << '\n';
  const auto layout = net.layout();
  out << "tensors " << layout.size() << '\n';
  for (const auto& entry : layout) {
    out << entry.name;
    for (auto d : entry.shape) out << ' ' << d;
    out << '\n';
  }
  out << "end\n";
  auto& mutable_net = const_cast<Network<float>&>(net);
  for (const auto& entry : layout) {
    for (float v : checkpoint_slot(mutable_net, entry.name).data()) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                             static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
      out.write(bytes, 4);
    }
  }
  if (!out) throw ModelError("failed writing checkpoint " + path.string());
}

Network<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open checkpoint " + path.string());
  auto fail = [&](const std::string& what) -> ModelError {
    return ModelError("checkpoint " + path.string() + ": " + what);
  };
  std::string line;
  if (!std::getline(in, line) || line != std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion)) {
    throw fail("bad magic or version line '" + line + "'");
  }
  std::map<std::string, std::string> header;
  std::size_t tensor_count = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key, value;
    ls >> key >> value;
    if (key == "tensors") {
      tensor_count = std::stoul(value);
      break;
    }
    header[key] = value;
  }
  auto field = [&](const char* key) -> const std::string& {
    auto it = header.find(key);
    if (it == header.end()) throw fail(std::string("missing header field '") + key + "'");
    return it->second;
  };
  ArchConfig arch;
  std::size_t channels = 0, samples = 0, classes = 0;
  try {
    channels = std::stoul(field("channels"));
    samples = std::stoul(field("samples"));
    classes = std::stoul(field("classes"));
    arch.temporal_filters = std::stoul(field("temporal_filters"));
    arch.depth_multiplier = std::stoul(field("depth_multiplier"));
    arch.pointwise_filters = std::stoul(field("pointwise_filters"));
    arch.temporal_length = std::stoul(field("temporal_length"));
    arch.separable_length = std::stoul(field("separable_length"));
    arch.pool1 = std::stoul(field("pool1"));
    arch.pool2 = std::stoul(field("pool2"));
    arch.dropout = std::stod(field("dropout"));
    arch.sampling_rate = std::stod(field("sampling_rate"));
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ModelError*>(&e)) throw;
    throw fail(std::string("malformed header value: ") + e.what());
  }
  Network<float> net(channels, samples, classes, arch, 0);
  const auto expected = net.layout();
  if (tensor_count != expected.size()) throw fail("expected " + std::to_string(expected.size()) + " tensors");
  for (const auto& entry : expected) {
    if (!std::getline(in, line)) throw fail("truncated manifest");
    std::istringstream ls(line);
    NamedShape got;
    ls >> got.name;
    std::size_t d;
    while (ls >> d) got.shape.push_back(d);
    if (!(got == entry)) throw fail("manifest entry '" + line + "' does not match architecture");
  }
  if (!std::getline(in, line) || line != "end") throw fail("missing manifest terminator");
  for (const auto& entry : expected) {
    auto& slot = checkpoint_slot(net, entry.name);
    for (auto& v : slot.data()) {
      unsigned char bytes[4];
      if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        throw fail("truncated payload in '" + entry.name + "' at byte " + std::to_string(static_cast<long>(in.gcount())));
      }
      const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
                                 (static_cast<std::uint32_t>(bytes[2]) << 16) |
                                 (static_cast<std::uint32_t>(bytes[3]) << 24);
      v = std::bit_cast<float>(bits);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw fail("trailing bytes after payload");
  return net;
}

}  // namespace sdda
