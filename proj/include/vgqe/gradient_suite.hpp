#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vgqe/grad_check.hpp"

namespace vgqe {

struct SuiteResult {
  std::string module;
  GradCheckReport report;
  double seconds = 0.0;
};

/// tensor_ops, block_fuse, gru_cell, vgw_attention, vgw_fuse, vgqe_cell_step,
/// model_baseline, model_vgqe.
std::vector<std::string> gradient_suite_modules();

/// Finite-difference check of one module (or all when `module` is empty) at
/// generic random points. Unknown names throw std::invalid_argument.
std::vector<SuiteResult> run_gradient_suite(const std::string& module = "", std::uint64_t seed = 0,
                                            double eps = 1e-5);

}  // namespace vgqe
