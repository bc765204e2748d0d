#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "sdda/alignment.hpp"
#include "sdda/random.hpp"

using namespace sdda;
using doctest::Approx;

namespace {

using fixture::random_session;

Eigen::MatrixXd raw_mean_cov(const Session& s) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(s.channels(), s.channels());
  for (const auto& t : s.trials) m += t.data * t.data.transpose();
  return m / static_cast<double>(s.size());
}

double rel_to_identity(const Eigen::MatrixXd& m) {
  const auto eye = Eigen::MatrixXd::Identity(m.rows(), m.cols());
  return (m - eye).norm() / eye.norm();
}

Session one_channel(std::initializer_list<double> values) {
  Session s;
  s.channel_names = {"a"};
  s.sampling_rate = 1;
  for (double v : values) s.trials.push_back({Eigen::MatrixXd::Constant(1, 1, v), std::nullopt});
  return s;
}

}  // namespace

TEST_CASE("mean covariance: identity product, ridge on the diagonal") {
  Session s;
  s.channel_names = {"a", "b"};
  s.sampling_rate = 1;
  s.trials.push_back({Eigen::MatrixXd::Identity(2, 2), std::nullopt});
  const auto r = mean_covariance(s).matrix();
  CHECK(r(0, 0) == Approx(1.0 + 1e-6).epsilon(1e-15));
  CHECK(r(0, 1) == 0.0);
}

TEST_CASE("mean covariance of two scalar trials") {
  const auto r = mean_covariance(one_channel({2.0, 4.0})).matrix();
  CHECK(r(0, 0) == Approx(10.0 * (1.0 + 1e-6)).epsilon(1e-15));
}

TEST_CASE("mean covariance of no trials is an error") {
  Session s;
  s.channel_names = {"a"};
  CHECK_THROWS_AS(mean_covariance(s), AlignmentError);
}

TEST_CASE("inverse square root: identity, diagonal, random SPD") {
  CHECK(inv_sqrt_sym(ReferenceMatrix(Eigen::MatrixXd::Identity(3, 3))).isApprox(Eigen::MatrixXd::Identity(3, 3)));
  Eigen::MatrixXd d = Eigen::Vector2d(4, 1).asDiagonal();
  Eigen::MatrixXd expect = Eigen::Vector2d(0.5, 1).asDiagonal();
  CHECK((inv_sqrt_sym(ReferenceMatrix(d)) - expect).norm() < 1e-14);

  Rng rng(3);
  for (int k = 0; k < 10; ++k) {
    Eigen::MatrixXd a(6, 6);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
    Eigen::MatrixXd spd = a.transpose() * a + Eigen::MatrixXd::Identity(6, 6);
    Eigen::MatrixXd m = inv_sqrt_sym(ReferenceMatrix(spd));
    CHECK((m * spd * m - Eigen::MatrixXd::Identity(6, 6)).norm() < 1e-8);
  }
}

TEST_CASE("non-positive-definite references are rejected with the eigenvalue") {
  Eigen::MatrixXd m = Eigen::Vector2d(1, -2).asDiagonal();
  try {
    inv_sqrt_sym(ReferenceMatrix(m));
    FAIL("expected an error");
  } catch (const AlignmentError& e) {
    CHECK(std::string(e.what()).find("-2") != std::string::npos);
  }
  Eigen::MatrixXd asym(2, 2);
  asym << 1, 0.5, 0, 1;
  CHECK_THROWS_AS(ReferenceMatrix{asym}, AlignmentError);
}

TEST_CASE("aligned sessions have identity mean covariance") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto aligned = euclidean_align_session(random_session(seed, 8, 10));
    CHECK(rel_to_identity(raw_mean_cov(aligned)) < 1e-5);
  }
}

TEST_CASE("whitened sessions are a fixed point, scalar covariance halves trials") {
  const auto once = euclidean_align_session(random_session(5, 4, 12));
  const auto twice = euclidean_align_session(once);
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK((twice.trials[i].data - once.trials[i].data).norm() / once.trials[i].data.norm() < 1e-5);
  }
  // Every trial 2*I_2 (T=2) gives mean covariance 4I.
  Session s;
  s.channel_names = {"a", "b"};
  s.sampling_rate = 1;
  for (int i = 0; i < 3; ++i) s.trials.push_back({2.0 * Eigen::MatrixXd::Identity(2, 2), 0});
  const auto halved = euclidean_align_session(s);
  for (const auto& t : halved.trials) CHECK((t.data - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-6);
}

TEST_CASE("ridge residual on an ill-conditioned session") {
  // mean covariance diag(1, 1e-3): the small direction keeps r / (1e-3 + r) of its deviation
  Session s;
  s.channel_names = {"a", "b"};
  s.sampling_rate = 1;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 2);
  x(0, 0) = 1.0;
  x(1, 1) = std::sqrt(1e-3);
  s.trials.push_back({x, std::nullopt});
  const auto aligned = euclidean_align_session(s);
  const double r = kCovarianceRidge * (1.0 + 1e-3) / 2.0;
  const auto m = raw_mean_cov(aligned);
  CHECK(m(1, 1) == Approx(1e-3 / (1e-3 + r)).epsilon(1e-9));
  CHECK(m(0, 0) == Approx(1.0 / (1.0 + r)).epsilon(1e-12));
}

TEST_CASE("alignment is scale invariant") {
  const auto s = random_session(9, 5, 7);
  Session scaled = s;
  for (auto& t : scaled.trials) t.data *= 37.5;
  const auto a = euclidean_align_session(s);
  const auto b = euclidean_align_session(scaled);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK((a.trials[i].data - b.trials[i].data).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("subset selection") {
  const auto s = random_session(1, 3, 2);
  const std::vector<std::string> all{"ch0", "ch1", "ch2"};
  CHECK(subset_channels(s, all) == s);
  const std::vector<std::string> one{"ch1"};
  const auto sub = subset_channels(s, one);
  CHECK(sub.channel_names == one);
  CHECK(sub.trials[1].data == s.trials[1].data.row(1));
  CHECK(sub.trials[1].label == s.trials[1].label);
  const std::vector<std::string> missing{"chX"};
  CHECK_THROWS_WITH_AS(subset_channels(s, missing), doctest::Contains("chX"), AlignmentError);
}

TEST_CASE("subset then align differs from align then subset") {
  const auto s = random_session(4, 6, 10);
  const std::vector<std::string> keep{"ch0", "ch2", "ch4"};
  const auto a = euclidean_align_session(subset_channels(s, keep));
  const auto b = subset_channels(euclidean_align_session(s), keep);
  CHECK((a.trials[0].data - b.trials[0].data).norm() > 1e-3);
  CHECK(rel_to_identity(raw_mean_cov(a)) < 1e-5);
}

TEST_CASE("inference alignment with a frozen reference") {
  const auto s = random_session(2, 3, 1);
  const auto& trial = s.trials[0];
  CHECK(align_for_inference(ReferenceMatrix(Eigen::MatrixXd::Identity(3, 3)), trial).data.isApprox(trial.data));
  CHECK(align_for_inference(ReferenceMatrix(4.0 * Eigen::MatrixXd::Identity(3, 3)), trial).data.isApprox(0.5 * trial.data));
  CHECK_THROWS_AS(align_for_inference(ReferenceMatrix(Eigen::MatrixXd::Identity(2, 2)), trial), AlignmentError);
}

TEST_CASE("a calibration reference moves held-out covariances toward identity") {
  double raw = 0.0, aligned = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto s = random_session(seed, 4, 30);
    Session calib = s, rest = s;
    calib.trials.resize(20);
    rest.trials.erase(rest.trials.begin(), rest.trials.begin() + 20);
    const auto ref = mean_covariance(calib);
    for (const auto& t : rest.trials) {
      const auto w = align_for_inference(ref, t).data;
      raw += rel_to_identity(t.data * t.data.transpose());
      aligned += rel_to_identity(w * w.transpose());
    }
  }
  CHECK(aligned < raw);
}

TEST_CASE("sessions with non-finite values are rejected") {
  auto s = random_session(1, 2, 2);
  s.trials[1].data(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(euclidean_align_session(s), DataError);
}
