#include "rsd/metrics.hpp"

#include <cmath>
#include <limits>

#include "rsd/common.hpp"

namespace rsd {

double mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("mse: shape mismatch");
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

double psnr(const Tensor& a, const Tensor& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

double ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("ssim: shape mismatch");
  if (a.rank() != 3) throw DimensionError("ssim: expected [C,H,W]");
  const std::int64_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  constexpr std::int64_t kWin = 8;
  if (h < kWin || w < kWin) throw DimensionError("ssim: image smaller than 8x8 window");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  constexpr double inv_n = 1.0 / static_cast<double>(kWin * kWin);

  double total = 0.0;
  std::int64_t windows = 0;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const float* pa = a.raw() + ch * h * w;
    const float* pb = b.raw() + ch * h * w;
    for (std::int64_t i = 0; i + kWin <= h; ++i)
      for (std::int64_t j = 0; j + kWin <= w; ++j) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::int64_t r = 0; r < kWin; ++r)
          for (std::int64_t q = 0; q < kWin; ++q) {
            const double x = pa[(i + r) * w + j + q];
            const double y = pb[(i + r) * w + j + q];
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
          }
        const double mu_a = sa * inv_n, mu_b = sb * inv_n;
        const double var_a = saa * inv_n - mu_a * mu_a;
        const double var_b = sbb * inv_n - mu_b * mu_b;
        const double cov = sab * inv_n - mu_a * mu_b;
        total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                 ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        ++windows;
      }
  }
  return total / static_cast<double>(windows);
}

}  // namespace rsd
