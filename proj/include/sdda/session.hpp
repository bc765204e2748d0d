#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sdda {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One epoch of recording: channels x samples, plus an optional class label.
struct Trial {
  Eigen::MatrixXd data;
  std::optional<int> label;

  Eigen::Index channels() const { return data.rows(); }
  Eigen::Index samples() const { return data.cols(); }
  bool operator==(const Trial& other) const { return label == other.label && data == other.data; }
};

struct Session {
  std::vector<Trial> trials;
  std::vector<std::string> channel_names;
  double sampling_rate = 0.0;

  std::size_t size() const { return trials.size(); }
  bool empty() const { return trials.empty(); }
  Eigen::Index channels() const { return static_cast<Eigen::Index>(channel_names.size()); }
  Eigen::Index samples() const { return trials.empty() ? 0 : trials.front().samples(); }
  bool operator==(const Session& other) const = default;
};

// Throws DataError when trials disagree in shape, names repeat or mismatch C, or values are non-finite.
void validate_session(const Session& session);

}  // namespace sdda
