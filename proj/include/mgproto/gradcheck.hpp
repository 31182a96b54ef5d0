#pragma once

// Central finite-difference checks of every analytic gradient in the
// training objective, run on small random instances.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mgproto {

struct GradcheckCase {
  std::string name;
  std::size_t instances = 0;
  std::size_t coordinates = 0;   // total coordinates compared
  double max_rel_error = 0.0;
  std::size_t worst_instance = 0;
};

struct GradcheckOptions {
  std::size_t instances = 20;
  double step = 1e-5;
  double floor = 1e-3;  // denominators below this are clamped to it
  std::uint64_t seed = 7;
};

/// rel = |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

/// Cases: ce_loss, mining_loss, aux_loss, m_step_objective, total_loss.
std::vector<GradcheckCase> run_gradcheck(const GradcheckOptions& opts = {});

}  // namespace mgproto
