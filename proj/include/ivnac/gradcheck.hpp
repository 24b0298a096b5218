#pragma once

#include <string>
#include <vector>

#include "ivnac/flow.hpp"

namespace ivnac {

// Compares tape gradients of the bidirectional loss against central finite
// differences, in 64-bit mode, on a small random model. Per parameter group
// (one named tensor), `samples_per_group` entries are probed with step
// `step`. A probe whose differences at step and step/2 disagree sits on a
// leaky-ReLU kink, where a central difference is not a derivative estimate;
// such probes are skipped and counted, and replacement entries are drawn.
struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0;
  int probes_used = 0;
  int probes_skipped = 0;
};

struct GradCheckResult {
  std::vector<GradCheckGroup> groups;
  double max_rel_err = 0;
};

GradCheckResult gradcheck_model(const FlowConfig& cfg, std::int64_t image_size,
                                std::uint64_t seed, int samples_per_group,
                                double step = 1e-4);

}  // namespace ivnac
