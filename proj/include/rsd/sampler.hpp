#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rsd/classifier.hpp"
#include "rsd/defense_fn.hpp"
#include "rsd/recon.hpp"

namespace rsd {

/// Integer pixel grid G with G[i,j] = [i, j], stored [H,W,2].
Tensor grid_coords(std::int64_t h, std::int64_t w);

/// Per-pixel coordinate offsets in pixel units, stored [H,W,2].
struct ShiftField {
  enum class Provenance { fixed, uniform, learned };
  Tensor shifts;
  Provenance provenance = Provenance::fixed;

  float row(std::int64_t i, std::int64_t j) const { return shifts.data()[(i * shifts.dim(1) + j) * 2]; }
  float col(std::int64_t i, std::int64_t j) const {
    return shifts.data()[(i * shifts.dim(1) + j) * 2 + 1];
  }
};

/// Spatial-invariant sampler: every pixel shifts by [d, d].
ShiftField sample_fixed(std::int64_t h, std::int64_t w, float d);

/// Spatial-variant sampler: both components drawn independently and
/// uniformly from [0, gamma), deterministic under seed.
ShiftField sample_uniform(std::int64_t h, std::int64_t w, float gamma, std::uint64_t seed);

/// Five pointwise-linear layers over the unfolded feature neighborhood
/// concatenated with the pixel's grid coordinates normalized to [0,1];
/// output is tanh-bounded and scaled by s_max. The final layer is
/// zero-initialized so an untrained SampleNet predicts zero shift.
struct SampleNetConfig {
  std::int64_t feat_channels = 288;  // 9 * encoder channels
  std::int64_t hidden = 64;
  std::int64_t layers = 5;
  float s_max = 2.0f;

  std::int64_t input_width() const { return feat_channels + 2; }
};

template <typename S>
struct SampleNetModelT {
  SampleNetConfig config;
  std::vector<TensorT<S>> w, b;

  std::vector<TensorT<S>> parameters() const {
    std::vector<TensorT<S>> ps;
    for (std::size_t i = 0; i < w.size(); ++i) {
      ps.push_back(w[i]);
      ps.push_back(b[i]);
    }
    return ps;
  }

  template <typename T>
  SampleNetModelT<T> cast() const {
    SampleNetModelT<T> m;
    m.config = config;
    for (const auto& t : w) m.w.push_back(t.template cast<T>());
    for (const auto& t : b) m.b.push_back(t.template cast<T>());
    return m;
  }

  SampleNetModelT<S> frozen() const {
    SampleNetModelT<S> m;
    m.config = config;
    for (const auto& t : w) m.w.push_back(t.detach());
    for (const auto& t : b) m.b.push_back(t.detach());
    return m;
  }
};

using SampleNetModel = SampleNetModelT<float>;

SampleNetModel init_samplenet(const SampleNetConfig& cfg, std::uint64_t seed,
                              bool requires_grad = true);

/// Batched shift prediction: funf is the unfolded feature map [N,9C,H,W];
/// returns [N,2,H,W] with every entry in [-s_max, s_max]. Differentiable
/// w.r.t. SampleNet parameters and the features.
template <typename S>
TensorT<S> samplenet_shifts(const SampleNetModelT<S>& m, const TensorT<S>& funf) {
  const std::int64_t n = funf.dim(0), h = funf.dim(2), w = funf.dim(3);
  if (funf.dim(1) != m.config.feat_channels)
    throw DimensionError("samplenet: feature channels " + std::to_string(funf.dim(1)) +
                         " do not match config " + std::to_string(m.config.feat_channels));
  TensorT<S> coords = TensorT<S>::zeros({n, 2, h, w});
  const S hd = h > 1 ? S(h - 1) : S(1), wd = w > 1 ? S(w - 1) : S(1);
  for (std::int64_t bn = 0; bn < n; ++bn)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        coords.data()[((bn * 2 + 0) * h + i) * w + j] = S(i) / hd;
        coords.data()[((bn * 2 + 1) * h + i) * w + j] = S(j) / wd;
      }
  TensorT<S> x = concat_channels(funf, coords);
  for (std::size_t i = 0; i < m.w.size(); ++i) {
    x = pointwise_linear(x, m.w[i], m.b[i]);
    if (i + 1 < m.w.size()) x = relu(x);
  }
  return mul_scalar(tanh(x), m.config.s_max);
}

/// Single-image convenience: shifts for `image` from the implicit model's
/// features. Returns a learned ShiftField [H,W,2].
ShiftField samplenet_predict(const SampleNetModel& m, const ImplicitModel& implicit,
                             const Tensor& image);

/// One query per output pixel at the shifted coordinates, then color clamp
/// to [0,1]. Zero shifts with the nearest/bilinear backend reproduce the
/// source exactly.
Tensor resample(const ContinuousImage& cont, const ShiftField& shifts);

// --------------------------------------------------------------------------
// defense pipelines

enum class DefenseKind {
  none,
  nearest_fixed,
  bilinear_fixed,
  nearest_uniform,
  bilinear_uniform,
  implicit_only,
  irad
};

DefenseKind defense_kind_from_string(const std::string& s);
std::string defense_kind_to_string(DefenseKind k);

struct DefenseParams {
  float fixed_d = 1.5f;
  float uniform_gamma = 1.5f;
  std::uint64_t seed = 0;
};

/// Immutable reconstruct-then-sample pipeline; thread-safe for inference.
class DefensePipeline {
 public:
  static DefensePipeline make(DefenseKind kind, DefenseParams params = {},
                              std::shared_ptr<const ImplicitModel> implicit = nullptr,
                              std::shared_ptr<const SampleNetModel> samplenet = nullptr);

  Tensor apply(const Tensor& batch, std::int64_t first_index = 0) const;
  DefenseFn as_fn() const;
  DefenseKind kind() const { return kind_; }

 private:
  DefenseKind kind_ = DefenseKind::none;
  DefenseParams params_;
  std::shared_ptr<const ImplicitModel> implicit_;
  std::shared_ptr<const SampleNetModel> samplenet_;
};

// --------------------------------------------------------------------------
// stage-2 training

struct SampleNetTrainHyper {
  std::int64_t steps = 256;
  std::int64_t batch = 8;
  float lr = 1e-4f;
  float s_max = 2.0f;
};

/// Trains SampleNet against frozen implicit and victim models on
/// (adversarial, clean, label) triples. The loss is the sum of
/// cross-entropies on the defended adversarial and defended clean batches;
/// gradients reach only SampleNet parameters.
SampleNetModel train_samplenet(const ImplicitModel& implicit, const ClassifierModel& victim,
                               const Tensor& adv, const Tensor& clean,
                               const std::vector<std::int32_t>& labels,
                               const SampleNetTrainHyper& hyper, std::uint64_t seed,
                               TrainCurve* curve = nullptr);

void save_samplenet(const std::string& path, const SampleNetModel& m,
                    const std::string& implicit_hash, const std::string& victim_hash);
SampleNetModel load_samplenet(const std::string& path, bool requires_grad = false);

}  // namespace rsd
