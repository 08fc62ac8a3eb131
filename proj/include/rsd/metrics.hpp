#pragma once

#include "rsd/tensor.hpp"

namespace rsd {

double mse(const Tensor& a, const Tensor& b);

/// 10*log10(1/MSE) for images in [0,1]; +infinity for identical inputs.
double psnr(const Tensor& a, const Tensor& b);

/// Structural similarity with uniform 8x8 sliding windows, C1=(0.01)^2,
/// C2=(0.03)^2, averaged over windows and channels. Inputs [C,H,W] in
/// [0,1] with H,W >= 8.
double ssim(const Tensor& a, const Tensor& b);

}  // namespace rsd
