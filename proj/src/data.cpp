#include "sdda/data.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <Eigen/QR>
#include <json.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include "sdda/random.hpp"

namespace sdda {

std::size_t Domain::trial_count() const {
  std::size_t n = 0;
  for (const auto& s : sessions) n += s.size();
  return n;
}

void validate_domain(const Domain& domain) {
  if (domain.classes < 2) throw DataError("domain needs at least two classes");
  for (std::size_t i = 0; i < domain.sessions.size(); ++i) {
    const auto& session = domain.sessions[i];
    if (session.channel_names != domain.channel_names) {
      throw DataError("session " + std::to_string(i) + " channel list differs from the domain's");
    }
    validate_session(session);
    const auto& first = domain.sessions.front();
    if (session.sampling_rate != first.sampling_rate) {
      throw DataError("session " + std::to_string(i) + " sampling rate differs from session 0");
    }
    if (!session.empty() && !first.empty() && session.samples() != first.samples()) {
      throw DataError("session " + std::to_string(i) + " trial length differs from session 0");
    }
    for (const auto& trial : session.trials) {
      if (trial.label && (*trial.label < 0 || static_cast<std::size_t>(*trial.label) >= domain.classes)) {
        throw DataError("label " + std::to_string(*trial.label) + " outside [0, " + std::to_string(domain.classes) +
                        ")");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SynthSpec::validate() const {
  auto bad = [](const std::string& what) { return DataError("invalid synth spec: " + what); };
  if (source_channels < 1) throw bad("source_channels must be >= 1");
  if (common_channels < 1 || common_channels > source_channels) {
    throw bad("common_channels must lie in [1, source_channels]");
  }
  if (classes < 2) throw bad("classes must be >= 2");
  if (samples < 1) throw bad("samples must be >= 1");
  if (trials_per_class < 1) throw bad("trials_per_class must be >= 1");
  if (source_sessions < 1 || target_sessions < 1) throw bad("each domain needs at least one session");
  if (!(sampling_rate > 0.0) || sampling_rate != std::floor(sampling_rate) || sampling_rate > 4294967295.0) {
    throw bad("sampling_rate must be a positive integer");
  }
  if (!(snr > 0.0)) throw bad("snr must be > 0");
  if (!(session_jitter >= 0.0) || !std::isfinite(session_jitter)) throw bad("session_jitter must be >= 0");
  if (!(domain_shift >= 0.0) || !std::isfinite(domain_shift)) throw bad("domain_shift must be >= 0");
  if (!(class_ratio > 0.0) || !std::isfinite(class_ratio)) throw bad("class_ratio must be > 0");
  if (std::lround(class_ratio * static_cast<double>(trials_per_class)) < 1) throw bad("class 0 would be empty");
}

std::vector<std::string> synth_channel_names(std::size_t count) {
  static const char* const kMontage[] = {"C3",  "Cz",  "C4",  "FC3", "FC4", "CP3", "CP4", "Fz",
                                         "FC1", "FCz", "FC2", "C5",  "C1",  "C2",  "C6",  "CP1",
                                         "CPz", "CP2", "P1",  "Pz",  "P2",  "POz"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < count; ++i) {
    names.push_back(i < std::size(kMontage) ? kMontage[i] : "ch" + std::to_string(i));
  }
  return names;
}

namespace {

constexpr double kCommonShare = 0.7;  // pattern amplitude on the shared electrodes

Eigen::MatrixXd gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

// exp(scale * S) with S a random symmetric matrix of unit spectral scale.
Eigen::MatrixXd spd_jitter(Rng& rng, Eigen::Index dim, double scale) {
  Eigen::MatrixXd g = gaussian_matrix(rng, dim, dim);
  Eigen::MatrixXd s = (g + g.transpose()) / (2.0 * std::sqrt(static_cast<double>(dim)));
  return (scale * s).exp();
}

// Rotation by `angle` inside the plane spanned by u and v, identity on the complement.
Eigen::MatrixXd plane_rotation(const Eigen::VectorXd& u, const Eigen::VectorXd& v, double angle) {
  const Eigen::VectorXd a = u.normalized();
  Eigen::VectorXd b = v - a.dot(v) * a;
  if (b.norm() < 1e-12) return Eigen::MatrixXd::Identity(u.size(), u.size());
  b.normalize();
  const Eigen::MatrixXd k = b * a.transpose() - a * b.transpose();
  return (angle * k).exp();
}

struct Generator {
  const SynthSpec& spec;
  std::vector<Eigen::VectorXd> patterns;  // per class, unit norm over the full montage
  double rhythm_hz = 10.0;

  Eigen::MatrixXd trial(Rng& rng, int label, const Eigen::MatrixXd& noise_mixing) const {
    const auto c = static_cast<Eigen::Index>(spec.source_channels);
    const auto t = static_cast<Eigen::Index>(spec.samples);
    const double phase = rng.uniform(-0.25, 0.25) * std::numbers::pi;
    const double amplitude = std::max(0.2, 1.0 + 0.2 * rng.normal());
    const double hz = rhythm_hz * (1.0 + 0.1 * rng.uniform(-1.0, 1.0));
    const double omega = 2.0 * std::numbers::pi * hz / spec.sampling_rate;
    Eigen::RowVectorXd wave(t);
    for (Eigen::Index i = 0; i < t; ++i) wave(i) = std::sin(omega * static_cast<double>(i) + phase);
    Eigen::MatrixXd x = amplitude * patterns[static_cast<std::size_t>(label)] * wave;
    // temporally correlated background, AR(1) with coefficient 0.5
    Eigen::MatrixXd z(c, t);
    for (Eigen::Index r = 0; r < c; ++r) {
      double prev = rng.normal();
      for (Eigen::Index i = 0; i < t; ++i) {
        prev = 0.5 * prev + std::sqrt(0.75) * rng.normal();
        z(r, i) = prev;
      }
    }
    const double noise_scale = std::isinf(spec.snr) ? 0.0 : 1.0 / spec.snr;
    if (noise_scale > 0.0) x += noise_scale * (noise_mixing * z);
    return x;
  }
};

std::vector<int> session_labels(const SynthSpec& spec, Rng& rng) {
  std::vector<int> labels;
  const auto first = static_cast<std::size_t>(std::lround(spec.class_ratio * static_cast<double>(spec.trials_per_class)));
  labels.insert(labels.end(), first, 0);
  for (std::size_t c = 1; c < spec.classes; ++c) labels.insert(labels.end(), spec.trials_per_class, static_cast<int>(c));
  rng.shuffle(labels);
  return labels;
}

Eigen::MatrixXd round_to_float(const Eigen::MatrixXd& m) { return m.cast<float>().cast<double>(); }

}  // namespace

std::pair<Domain, Domain> synth_generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto cs = static_cast<Eigen::Index>(spec.source_channels);
  const auto ct = static_cast<Eigen::Index>(spec.common_channels);

  // All classes share one rhythm and differ in where it shows up on the scalp.
  Generator gen{spec, {}, std::min(10.0, 0.4 * spec.sampling_rate)};
  const auto k = static_cast<Eigen::Index>(spec.classes);
  Eigen::MatrixXd heads = gaussian_matrix(rng, ct, k);
  if (k <= ct) {
    heads = Eigen::HouseholderQR<Eigen::MatrixXd>(heads).householderQ() * Eigen::MatrixXd::Identity(ct, k);
  } else {
    heads.colwise().normalize();
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::VectorXd w(cs);
    w.head(ct) = kCommonShare * heads.col(c);
    if (cs > ct) {
      Eigen::VectorXd tail = gaussian_matrix(rng, cs - ct, 1);
      w.tail(cs - ct) = std::sqrt(1.0 - kCommonShare * kCommonShare) * tail.normalized();
    }
    gen.patterns.push_back(w.normalized());
  }
  const Eigen::MatrixXd source_noise = Eigen::MatrixXd::Identity(cs, cs) + 0.5 * gaussian_matrix(rng, cs, cs) /
                                                                                std::sqrt(static_cast<double>(cs));
  const Eigen::MatrixXd target_noise = Eigen::MatrixXd::Identity(cs, cs) + 0.5 * gaussian_matrix(rng, cs, cs) /
                                                                                std::sqrt(static_cast<double>(cs));
  // Headset shift: the target sees the class-0/class-1 scalp patterns rotated toward each other.
  const Eigen::MatrixXd rotation = ct >= 2 ? plane_rotation(heads.col(0), heads.col(1), spec.domain_shift)
                                           : Eigen::MatrixXd::Identity(ct, ct);

  const auto names = synth_channel_names(spec.source_channels);
  Domain source{{}, DomainRole::Source, names, spec.classes};
  Domain target{{}, DomainRole::Target, std::vector<std::string>(names.begin(), names.begin() + ct), spec.classes};

  for (std::size_t s = 0; s < spec.source_sessions; ++s) {
    const Eigen::MatrixXd jitter = spd_jitter(rng, cs, spec.session_jitter);
    Session session{{}, source.channel_names, spec.sampling_rate};
    for (int label : session_labels(spec, rng)) {
      session.trials.push_back({round_to_float(jitter * gen.trial(rng, label, source_noise)), label});
    }
    source.sessions.push_back(std::move(session));
  }
  for (std::size_t s = 0; s < spec.target_sessions; ++s) {
    const Eigen::MatrixXd jitter = spd_jitter(rng, ct, spec.session_jitter);
    const Eigen::MatrixXd transform = jitter * rotation;
    Session session{{}, target.channel_names, spec.sampling_rate};
    for (int label : session_labels(spec, rng)) {
      const Eigen::MatrixXd full = gen.trial(rng, label, target_noise);
      session.trials.push_back({round_to_float(transform * full.topRows(ct)), label});
    }
    target.sessions.push_back(std::move(session));
  }
  return {std::move(source), std::move(target)};
}

// ---------------------------------------------------------------------------
// Binary format

namespace {

constexpr char kMagic[4] = {'S', 'D', 'D', 'A'};
constexpr std::uint16_t kFormatVersion = 1;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void bytes(const std::string& s) { buf_ += s; }
  const std::string& buffer() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(get(1, what)); }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(get(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
  float f32(const char* what) { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4, what))); }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }
  DataError error(const std::string& what, std::size_t at) const {
    return DataError(source_ + ": " + what + " at byte offset " + std::to_string(at));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) throw error(std::string("truncated ") + what, pos_);
  }
  std::uint64_t get(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string data_;
  std::string source_;
  std::size_t pos_ = 0;
};

template <typename T>
T checked_narrow(std::size_t v, const char* what) {
  if (v > std::numeric_limits<T>::max()) throw DataError(std::string(what) + " too large for the dataset format");
  return static_cast<T>(v);
}

}  // namespace

void save_dataset(const Domain& domain, const std::filesystem::path& path) {
  validate_domain(domain);
  ByteWriter w;
  w.bytes(std::string(kMagic, 4));
  w.u16(kFormatVersion);
  w.u16(checked_narrow<std::uint16_t>(domain.classes, "class count"));
  w.u32(checked_narrow<std::uint32_t>(domain.sessions.size(), "session count"));
  for (const auto& session : domain.sessions) {
    if (session.sampling_rate != std::floor(session.sampling_rate) || session.sampling_rate < 0) {
      throw DataError("sampling rate must be a non-negative integer to be stored");
    }
    w.u32(checked_narrow<std::uint32_t>(session.trials.size(), "trial count"));
    w.u16(checked_narrow<std::uint16_t>(session.channel_names.size(), "channel count"));
    w.u32(checked_narrow<std::uint32_t>(static_cast<std::size_t>(session.samples()), "sample count"));
    w.u32(checked_narrow<std::uint32_t>(static_cast<std::size_t>(session.sampling_rate), "sampling rate"));
    for (const auto& name : session.channel_names) {
      w.u16(checked_narrow<std::uint16_t>(name.size(), "channel name length"));
      w.bytes(name);
    }
    for (const auto& trial : session.trials) {
      w.u8(trial.label ? 1 : 0);
      w.u16(trial.label ? checked_narrow<std::uint16_t>(static_cast<std::size_t>(*trial.label), "label") : 0);
      for (Eigen::Index c = 0; c < trial.data.rows(); ++c)
        for (Eigen::Index t = 0; t < trial.data.cols(); ++t) w.f32(static_cast<float>(trial.data(c, t)));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw DataError("failed writing " + path.string());
}

Domain load_dataset(const std::filesystem::path& path, DomainRole role) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r(std::move(raw), path.string());

  if (r.bytes(4, "magic") != std::string(kMagic, 4)) throw r.error("bad magic", 0);
  const auto version_at = r.offset();
  if (r.u16("version") != kFormatVersion) throw r.error("unsupported version", version_at);
  Domain domain;
  domain.role = role;
  domain.classes = r.u16("class count");
  const std::uint32_t n_sessions = r.u32("session count");
  for (std::uint32_t s = 0; s < n_sessions; ++s) {
    Session session;
    const std::uint32_t n_trials = r.u32("trial count");
    const std::uint16_t channels = r.u16("channel count");
    const std::uint32_t samples = r.u32("sample count");
    session.sampling_rate = r.u32("sampling rate");
    if (channels == 0 || samples == 0) throw r.error("empty trial shape", r.offset());
    for (std::uint16_t c = 0; c < channels; ++c) {
      const std::uint16_t len = r.u16("channel name length");
      session.channel_names.push_back(r.bytes(len, "channel name"));
    }
    session.trials.reserve(n_trials);
    for (std::uint32_t i = 0; i < n_trials; ++i) {
      const auto label_at = r.offset();
      const std::uint8_t has_label = r.u8("label flag");
      const std::uint16_t label = r.u16("label");
      if (has_label > 1) throw r.error("invalid label flag", label_at);
      Trial trial;
      if (has_label) {
        if (label >= domain.classes) throw r.error("label out of range", label_at);
        trial.label = label;
      }
      trial.data.resize(channels, samples);
      for (std::uint16_t c = 0; c < channels; ++c)
        for (std::uint32_t t = 0; t < samples; ++t) trial.data(c, t) = r.f32("sample");
      session.trials.push_back(std::move(trial));
    }
    if (s == 0) domain.channel_names = session.channel_names;
    domain.sessions.push_back(std::move(session));
  }
  if (!r.done()) throw r.error("trailing bytes", r.offset());
  validate_domain(domain);
  return domain;
}

// ---------------------------------------------------------------------------
// CSV interchange

void export_csv(const Domain& domain, const std::filesystem::path& dir) {
  validate_domain(domain);
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["classes"] = domain.classes;
  manifest["channels"] = domain.channel_names;
  manifest["trials"] = nlohmann::json::array();
  std::vector<double> rates;
  for (std::size_t s = 0; s < domain.sessions.size(); ++s) {
    const auto& session = domain.sessions[s];
    rates.push_back(session.sampling_rate);
    for (std::size_t i = 0; i < session.trials.size(); ++i) {
      const auto& trial = session.trials[i];
      const std::string file = "s" + std::to_string(s) + "_t" + std::to_string(i) + ".csv";
      std::ofstream out(dir / file);
      if (!out) throw DataError("cannot write " + (dir / file).string());
      char buf[32];
      for (Eigen::Index c = 0; c < trial.data.rows(); ++c) {
        for (Eigen::Index t = 0; t < trial.data.cols(); ++t) {
          std::snprintf(buf, sizeof buf, "%.9g", trial.data(c, t));
          if (t) out << ',';
          out << buf;
        }
        out << '\n';
      }
      nlohmann::json entry{{"file", file}, {"session", s}};
      entry["label"] = trial.label ? nlohmann::json(*trial.label) : nlohmann::json(nullptr);
      manifest["trials"].push_back(entry);
    }
  }
  manifest["sampling_rates"] = rates;
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

Domain import_csv(const std::filesystem::path& dir, const std::filesystem::path& manifest_path, DomainRole role) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + manifest_path.string() + ": " + e.what());
  }
  Domain domain;
  domain.role = role;
  try {
    domain.classes = manifest.at("classes").get<std::size_t>();
    domain.channel_names = manifest.at("channels").get<std::vector<std::string>>();
    std::vector<double> rates;
    if (manifest.contains("sampling_rates")) rates = manifest["sampling_rates"].get<std::vector<double>>();
    for (const auto& entry : manifest.at("trials")) {
      const auto session_id = entry.at("session").get<std::size_t>();
      while (domain.sessions.size() <= session_id) {
        Session session;
        session.channel_names = domain.channel_names;
        const std::size_t k = domain.sessions.size();
        session.sampling_rate = k < rates.size() ? rates[k] : manifest.value("sampling_rate", 0.0);
        domain.sessions.push_back(std::move(session));
      }
      const auto file = dir / entry.at("file").get<std::string>();
      std::ifstream csv(file);
      if (!csv) throw DataError("cannot open " + file.string());
      std::vector<std::vector<double>> rows;
      std::string line;
      while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
          try {
            row.push_back(static_cast<double>(static_cast<float>(std::stod(cell))));
          } catch (const std::exception&) {
            throw DataError(file.string() + ": unparsable value '" + cell + "'");
          }
        }
        if (!rows.empty() && row.size() != rows.front().size()) throw DataError(file.string() + ": ragged rows");
        rows.push_back(std::move(row));
      }
      if (rows.empty()) throw DataError(file.string() + ": no data");
      auto& session = domain.sessions[session_id];
      if (rows.size() != domain.channel_names.size()) {
        throw DataError(file.string() + ": " + std::to_string(rows.size()) + " channels, manifest declares " +
                        std::to_string(domain.channel_names.size()));
      }
      if (!session.trials.empty() && static_cast<Eigen::Index>(rows.front().size()) != session.samples()) {
        throw DataError(file.string() + ": " + std::to_string(rows.front().size()) + " samples, session has " +
                        std::to_string(session.samples()));
      }
      Trial trial;
      trial.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
      for (std::size_t c = 0; c < rows.size(); ++c)
        for (std::size_t t = 0; t < rows[c].size(); ++t) {
          trial.data(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(t)) = rows[c][t];
        }
      if (entry.contains("label") && !entry["label"].is_null()) trial.label = entry["label"].get<int>();
      session.trials.push_back(std::move(trial));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + manifest_path.string() + ": " + e.what());
  }
  validate_domain(domain);
  return domain;
}

// ---------------------------------------------------------------------------
// Batching

BatchIterator::BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t seed, bool drop_last)
    : count_(count), batch_size_(batch_size), drop_last_(drop_last), seed_(seed) {
  if (batch_size_ == 0) throw DataError("batch size must be >= 1");
}

std::vector<std::vector<std::size_t>> BatchIterator::next_epoch() {
  std::vector<std::size_t> order(count_);
  for (std::size_t i = 0; i < count_; ++i) order[i] = i;
  Rng rng(mix_seed(seed_, epoch_++));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  if (count_ == 0) return batches;
  const std::size_t size = std::min(batch_size_, count_);
  for (std::size_t start = 0; start < count_; start += size) {
    const std::size_t end = std::min(start + size, count_);
    if (drop_last_ && end - start < size) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

CyclingSampler::CyclingSampler(std::size_t count, std::uint64_t seed) : count_(count), seed_(seed) {
  if (count_ == 0) throw DataError("cannot sample from an empty set");
}

std::vector<std::size_t> CyclingSampler::next(std::size_t batch_size) {
  std::vector<std::size_t> out;
  const std::size_t size = std::min(batch_size, count_);
  while (out.size() < size) {
    if (cursor_ == order_.size()) {
      order_.resize(count_);
      for (std::size_t i = 0; i < count_; ++i) order_[i] = i;
      Rng rng(mix_seed(seed_, pass_++));
      rng.shuffle(order_);
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

}  // namespace sdda
