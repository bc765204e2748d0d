#include "sdda/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Eigenvalues>

namespace sdda {

void validate_session(const Session& session) {
  const auto c = session.channels();
  std::set<std::string> seen;
  for (const auto& name : session.channel_names) {
    if (!seen.insert(name).second) throw DataError("duplicate channel name '" + name + "'");
  }
  for (std::size_t i = 0; i < session.trials.size(); ++i) {
    const auto& t = session.trials[i];
    if (t.channels() != c || t.samples() != session.samples()) {
      throw DataError("trial " + std::to_string(i) + " is " + std::to_string(t.channels()) + "x" +
                      std::to_string(t.samples()) + ", session expects " + std::to_string(c) + "x" +
                      std::to_string(session.samples()));
    }
    if (!t.data.allFinite()) throw DataError("trial " + std::to_string(i) + " has non-finite values");
  }
}

ReferenceMatrix::ReferenceMatrix(Eigen::MatrixXd matrix) : matrix_(std::move(matrix)) {
  if (matrix_.rows() == 0 || matrix_.rows() != matrix_.cols()) {
    throw AlignmentError("reference matrix must be square and non-empty");
  }
  if (!matrix_.allFinite()) throw AlignmentError("reference matrix has non-finite entries");
  const double asym = (matrix_ - matrix_.transpose()).norm();
  if (asym > 1e-10 * std::max(matrix_.norm(), 1e-300)) {
    throw AlignmentError("reference matrix is not symmetric (asymmetry " + std::to_string(asym) + ")");
  }
}

ReferenceMatrix mean_covariance(std::span<const Trial> trials) {
  if (trials.empty()) throw AlignmentError("mean covariance of an empty session");
  const auto c = trials.front().channels();
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(c, c);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& x = trials[i].data;
    if (x.rows() != c) throw AlignmentError("trial " + std::to_string(i) + " channel count differs");
    if (!x.allFinite()) throw AlignmentError("trial " + std::to_string(i) + " has non-finite values");
    sum.noalias() += x * x.transpose();
  }
  Eigen::MatrixXd mean = sum / static_cast<double>(trials.size());
  mean = 0.5 * (mean + mean.transpose());
  const double ridge = kCovarianceRidge * mean.trace() / static_cast<double>(c);
  mean.diagonal().array() += ridge;
  return ReferenceMatrix(std::move(mean));
}

ReferenceMatrix mean_covariance(const Session& session) { return mean_covariance(std::span(session.trials)); }

Eigen::MatrixXd inv_sqrt_sym(const ReferenceMatrix& ref) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(ref.matrix());
  if (solver.info() != Eigen::Success) throw AlignmentError("eigendecomposition failed");
  const Eigen::VectorXd& lambda = solver.eigenvalues();
  const double smallest = lambda.minCoeff();
  if (!(smallest > 0.0)) {
    throw AlignmentError("reference matrix is not positive definite (smallest eigenvalue " +
                         std::to_string(smallest) + ")");
  }
  const Eigen::MatrixXd& v = solver.eigenvectors();
  return v * lambda.array().rsqrt().matrix().asDiagonal() * v.transpose();
}

Session apply_whitening(const Eigen::MatrixXd& whitening, const Session& session) {
  Session out = session;
  for (auto& trial : out.trials) {
    if (trial.channels() != whitening.cols()) {
      throw AlignmentError("whitening is " + std::to_string(whitening.cols()) + "-dimensional, trial has " +
                           std::to_string(trial.channels()) + " channels");
    }
    trial.data = whitening * trial.data;
  }
  return out;
}

Session euclidean_align_session(const Session& session) {
  validate_session(session);
  return apply_whitening(inv_sqrt_sym(mean_covariance(session)), session);
}

Session subset_channels(const Session& session, std::span<const std::string> keep) {
  if (keep.empty()) throw AlignmentError("channel subset is empty");
  std::vector<Eigen::Index> rows;
  rows.reserve(keep.size());
  for (const auto& name : keep) {
    auto it = std::find(session.channel_names.begin(), session.channel_names.end(), name);
    if (it == session.channel_names.end()) throw AlignmentError("unknown channel '" + name + "'");
    rows.push_back(it - session.channel_names.begin());
  }
  Session out;
  out.channel_names.assign(keep.begin(), keep.end());
  out.sampling_rate = session.sampling_rate;
  out.trials.reserve(session.trials.size());
  for (const auto& trial : session.trials) {
    Trial t;
    t.label = trial.label;
    t.data = trial.data(rows, Eigen::all);
    out.trials.push_back(std::move(t));
  }
  return out;
}

Trial align_for_inference(const ReferenceMatrix& ref, const Trial& trial) {
  if (ref.dim() != trial.channels()) {
    throw AlignmentError("reference is " + std::to_string(ref.dim()) + "x" + std::to_string(ref.dim()) +
                         " but trial has " + std::to_string(trial.channels()) + " channels");
  }
  return Trial{inv_sqrt_sym(ref) * trial.data, trial.label};
}

}  // namespace sdda
