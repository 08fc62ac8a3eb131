#pragma once

#include <cmath>
#include <utility>

#include "rsd/ops.hpp"
#include "rsd/tensor.hpp"

namespace rsd {

/// Central-finite-difference gradient oracle. `f` is a generic callable
/// mapping TensorT<S> -> scalar TensorT<S> for S in {float, double}; the
/// analytic gradient is taken from the float32 graph, the numeric one from
/// 64-bit forward evaluations, so the difference quotient is not drowned by
/// storage precision. Returns the max relative error over coordinates.
template <typename F>
double grad_check(F&& f, const Tensor& x, double h = 1e-3) {
  Tensor xf = x.clone(true);
  TensorT<float> loss = f(xf);
  if (loss.numel() != 1) throw UsageError("grad_check: f must be scalar-valued");
  backward(loss);
  Array<float> analytic = xf.grad();

  TensorT<double> xd = x.cast<double>();
  double max_rel = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double v = xd.data()[i];
    xd.data()[i] = v + h;
    const double fp = f(xd).item();
    xd.data()[i] = v - h;
    const double fm = f(xd).item();
    xd.data()[i] = v;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = static_cast<double>(analytic[i]);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
  }
  return max_rel;
}

}  // namespace rsd
