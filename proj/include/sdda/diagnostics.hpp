#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdda/gradcheck.hpp"

namespace sdda {

struct NamedCheck {
  std::string name;
  GradCheckReport report;
};

// Finite-difference checks of every differentiable primitive and loss on small random inputs.
std::vector<NamedCheck> primitive_grad_checks(std::uint64_t seed, double tol = 1e-5);

// Checks of the teacher, UDA student and SDA student objectives on a 4-trial batch of a tiny network.
std::vector<NamedCheck> objective_grad_checks(std::uint64_t seed, double tol = 1e-5);

inline constexpr double kGradCheckStep = 1e-6;

}  // namespace sdda
