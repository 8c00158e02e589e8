#pragma once

#include <string>
#include <vector>

namespace cwt {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Names of every registered check: one per differentiable op, the CWT block,
// and the end-to-end meta-loss on a 4-pixel episode.
std::vector<std::string> gradcheck_names();

// Runs every registered check in double precision. The analytic gradient of
// the check named `corrupt` is scaled by 1.1 before comparison (test hook).
std::vector<GradCheckResult> run_gradcheck_suite(double tolerance = 1e-4, const std::string& corrupt = {});

}  // namespace cwt
