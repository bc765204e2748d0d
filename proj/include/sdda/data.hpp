#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sdda/session.hpp"

namespace sdda {

enum class DomainRole { Source, Target };

// All sessions of one headset/subject pool. Every session carries the same channel list.
struct Domain {
  std::vector<Session> sessions;
  DomainRole role = DomainRole::Source;
  std::vector<std::string> channel_names;
  std::size_t classes = 0;

  std::size_t trial_count() const;
  bool operator==(const Domain&) const = default;
};

void validate_domain(const Domain& domain);

// Desk-scale stand-in for a cross-headset motor-imagery pair. Every class carries the same ~10 Hz
// rhythm on its own scalp pattern, over AR(1) background noise and a per-session SPD distortion.
struct SynthSpec {
  std::size_t source_channels = 8;
  std::size_t common_channels = 3;
  std::size_t samples = 256;
  std::size_t classes = 2;
  std::size_t trials_per_class = 40;  // per session
  std::size_t source_sessions = 2;
  std::size_t target_sessions = 1;
  double sampling_rate = 64.0;
  double snr = 2.0;              // class-signal amplitude over background-noise scale
  double session_jitter = 0.3;   // log-eigenvalue spread of the per-session SPD distortion
  double domain_shift = 0.7;     // radians the target's class patterns are rotated toward each other
  double class_ratio = 1.0;      // class-0 trials per trial of each other class
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SynthSpec&) const = default;
};

// Channel names used by the generator; the first three are C3, Cz, C4.
std::vector<std::string> synth_channel_names(std::size_t count);

std::pair<Domain, Domain> synth_generate(const SynthSpec& spec);

// Binary dataset format (little-endian):
//   "SDDA" u16 version=1 u16 classes u32 n_sessions
//   per session: u32 n_trials u16 C u32 T u32 sampling_rate, C x (u16 length, UTF-8 bytes)
//   per trial:   u8 has_label u16 label, C*T float32 channel-major
void save_dataset(const Domain& domain, const std::filesystem::path& path);
Domain load_dataset(const std::filesystem::path& path, DomainRole role = DomainRole::Source);

// CSV interchange: manifest.json plus one C-row CSV per trial.
void export_csv(const Domain& domain, const std::filesystem::path& dir);
Domain import_csv(const std::filesystem::path& dir, const std::filesystem::path& manifest,
                  DomainRole role = DomainRole::Source);

// Seeded epoch shuffler; each index appears once per epoch (minus a dropped remainder).
class BatchIterator {
 public:
  BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t seed, bool drop_last = false);
  std::vector<std::vector<std::size_t>> next_epoch();

 private:
  std::size_t count_, batch_size_;
  bool drop_last_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
};

// Endless stream of fixed-size index batches, reshuffled every pass.
class CyclingSampler {
 public:
  CyclingSampler(std::size_t count, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t batch_size);

 private:
  std::size_t count_;
  std::uint64_t seed_;
  std::uint64_t pass_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace sdda
