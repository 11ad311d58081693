#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "vgqe/autodiff.hpp"

namespace vgqe {

/// Builds a scalar on a fresh tape from one input.
using ScalarFn = std::function<ad::Var(ad::Tape&, const ad::Var&)>;
/// Builds a scalar on a fresh tape, reading parameters through Tape::parameter().
using ParamScalarFn = std::function<ad::Var(ad::Tape&)>;

/// |analytic - numeric| / max(1, |analytic|, |numeric|), the per-coordinate score.
double relative_error(double analytic, double numeric);

/// Max relative error between reverse-mode and central-difference gradients of f at x.
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<tensor index>[<flat index>]"
};

/// Same check over every coordinate of every parameter tensor. Parameters are
/// perturbed in place and restored; their grad buffers are overwritten.
/// `stride` > 1 checks every stride-th coordinate of each tensor (always including 0).
GradCheckReport grad_check_params(const ParamScalarFn& f, std::span<Tensor* const> params, double eps = 1e-5,
                                  std::size_t stride = 1);

}  // namespace vgqe
