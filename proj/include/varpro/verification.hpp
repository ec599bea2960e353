#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace varpro::verification {

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

/// Adjoint tests of the built operators, finite-difference checks of the
/// reduced gradients, and oracles for the nuisance projectors and constraint
/// projections. Takes a few seconds.
std::vector<CheckResult> run_checks(std::uint64_t seed = 1);

/// Fixed-width table, one row per check, and a summary line.
void print_table(std::ostream& out, const std::vector<CheckResult>& results);

}  // namespace varpro::verification
