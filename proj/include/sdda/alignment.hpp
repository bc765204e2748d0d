#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sdda/session.hpp"

namespace sdda {

class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Relative ridge added to the mean covariance: R += eps * (trace(R) / C) * I.
inline constexpr double kCovarianceRidge = 1e-6;

// Symmetric C x C reference covariance of a session.
class ReferenceMatrix {
 public:
  explicit ReferenceMatrix(Eigen::MatrixXd matrix);
  const Eigen::MatrixXd& matrix() const { return matrix_; }
  Eigen::Index dim() const { return matrix_.rows(); }

 private:
  Eigen::MatrixXd matrix_;
};

ReferenceMatrix mean_covariance(std::span<const Trial> trials);
ReferenceMatrix mean_covariance(const Session& session);

// V diag(lambda^-1/2) V^T from a symmetric eigendecomposition.
Eigen::MatrixXd inv_sqrt_sym(const ReferenceMatrix& ref);

Session euclidean_align_session(const Session& session);

// Rows of each trial reordered/reduced to `keep`.
Session subset_channels(const Session& session, std::span<const std::string> keep);

Trial align_for_inference(const ReferenceMatrix& ref, const Trial& trial);

// Aligns every trial with a precomputed whitening matrix.
Session apply_whitening(const Eigen::MatrixXd& whitening, const Session& session);

}  // namespace sdda
