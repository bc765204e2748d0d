#pragma once

#include <string>

#include "sdda/random.hpp"
#include "sdda/session.hpp"

namespace fixture {

// Gaussian sources through a random rotation with channel gains in [0.5, 2].
inline sdda::Session random_session(std::uint64_t seed, Eigen::Index c, std::size_t n, Eigen::Index t = 256) {
  sdda::Rng rng(seed);
  Eigen::MatrixXd g(c, c);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  Eigen::VectorXd gain(c);
  for (Eigen::Index i = 0; i < c; ++i) gain(i) = rng.uniform(0.5, 2.0);
  const Eigen::MatrixXd mix = q * gain.asDiagonal();
  sdda::Session s;
  s.sampling_rate = 64;
  for (Eigen::Index i = 0; i < c; ++i) s.channel_names.push_back("ch" + std::to_string(i));
  for (std::size_t k = 0; k < n; ++k) {
    Eigen::MatrixXd x(c, t);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    s.trials.push_back({mix * x, static_cast<int>(k % 2)});
  }
  return s;
}

}  // namespace fixture
