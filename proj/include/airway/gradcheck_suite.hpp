#pragma once

#include <string>
#include <vector>

#include "airway/autodiff.hpp"

namespace airway {

struct GradCheckCase {
  std::string name;
  ad::GradCheckReport report;
  double tolerance = 1e-4;
  bool passed() const { return report.max_rel_error < tolerance; }
};

/// Central-finite-difference certification of the full operator set, every
/// loss, and the toy networks (input gradients plus a deterministic sample of
/// parameter gradients), all in 64-bit mode.
std::vector<GradCheckCase> run_gradcheck_suite();

}  // namespace airway
