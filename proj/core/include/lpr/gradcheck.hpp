#pragma once

#include <string>
#include <vector>

#include "lpr/types.hpp"

namespace lpr {

struct GradCheckResult {
  std::string component;
  int instances = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

inline const std::vector<std::string>& gradcheck_components() {
  static const std::vector<std::string> names = {
      "encoder", "aggregation", "local_loss", "quadruplet_loss", "joint_loss"};
  return names;
}

// Compares analytic gradients against central finite differences (step 1e-6)
// on `instances` well-conditioned random instances per component (d = 4,
// N = 20 points, pooled spectral gaps >= 0.1, hinge arguments away from
// their kinks). The error metric is per-tensor:
// ||analytic - fd|| / max(||analytic||, ||fd||, 1e-8).
//
// `inject_sign_error` names a component whose analytic gradient gets one
// sign flipped before comparison; used to self-test that the harness
// actually reports failures.
std::vector<GradCheckResult> run_gradient_checks(
    int instances, double tolerance = 1e-4,
    const std::string& inject_sign_error = "");

std::string format_gradcheck_report(const std::vector<GradCheckResult>& results);

}  // namespace lpr
