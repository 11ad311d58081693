#include "vgqe/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace vgqe {

namespace {

double eval_scalar(const ad::Var& out) {
  if (out.value().size() != 1) {
    throw ShapeError("gradient check needs a scalar function, got shape " + shape_string(out.shape()));
  }
  return out.value()[0];
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  std::vector<double> analytic;
  {
    ad::Tape tape;
    auto in = tape.variable(x);
    auto out = f(tape, in);
    eval_scalar(out);
    tape.backward(out);
    auto g = tape.grad(in);
    analytic.assign(g.begin(), g.end());
  }
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    double up, down;
    {
      ad::Tape tape;
      up = eval_scalar(f(tape, tape.constant(probe)));
    }
    probe[i] = orig - eps;
    {
      ad::Tape tape;
      down = eval_scalar(f(tape, tape.constant(probe)));
    }
    probe[i] = orig;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

GradCheckReport grad_check_params(const ParamScalarFn& f, std::span<Tensor* const> params, double eps,
                                  std::size_t stride) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  stride = std::max<std::size_t>(stride, 1);
  for (auto* p : params) p->zero_grad();
  {
    ad::Tape tape;
    auto out = f(tape);
    eval_scalar(out);
    tape.backward(out);
  }
  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    if (!p.requires_grad()) continue;
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    for (std::size_t i = 0; i < p.size(); i += stride) {
      const double orig = p[i];
      p[i] = orig + eps;
      double up, down;
      {
        ad::Tape tape;
        up = eval_scalar(f(tape));
      }
      p[i] = orig - eps;
      {
        ad::Tape tape;
        down = eval_scalar(f(tape));
      }
      p[i] = orig;
      const double err = relative_error(analytic[i], (up - down) / (2.0 * eps));
      ++report.coordinates;
      if (err > report.max_rel_error || report.worst.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        if (err >= report.max_rel_error) report.worst = std::to_string(t) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

}  // namespace vgqe
