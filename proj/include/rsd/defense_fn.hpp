#pragma once

#include <cstdint>
#include <functional>

#include "rsd/tensor.hpp"

namespace rsd {

/// A defense applied to a batch of images [N,C,H,W] -> [N,C,H,W] in [0,1].
/// first_index is the global index of the batch's first image; stochastic
/// defenses derive their per-image streams from it so results do not depend
/// on batching.
using DefenseFn = std::function<Tensor(const Tensor& batch, std::int64_t first_index)>;

}  // namespace rsd
