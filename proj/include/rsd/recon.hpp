#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rsd/attacks.hpp"
#include "rsd/classifier.hpp"
#include "rsd/dataset.hpp"
#include "rsd/ops.hpp"

namespace rsd {

enum class Backend { nearest, bilinear, implicit };

/// Encoder: conv3x3 stem -> `blocks` residual blocks (conv-relu-conv plus
/// skip) at `channels`, stride 1, zero padding, so features keep the input
/// resolution. Query perceptron: `mlp_layers` pointwise linear layers with
/// relu between; input is the unfolded 3x3 feature neighborhood plus the
/// signed 2-vector offset to the latent pixel.
struct ImplicitConfig {
  std::int64_t blocks = 4;
  std::int64_t channels = 32;
  std::int64_t mlp_hidden = 64;
  std::int64_t mlp_layers = 5;
  std::int64_t img_channels = 1;

  std::int64_t unfold_channels() const { return 9 * channels; }
  std::int64_t mlp_input() const { return unfold_channels() + 2; }
};

template <typename S>
struct ImplicitModelT {
  ImplicitConfig config;
  TensorT<S> stem_w, stem_b;
  std::vector<TensorT<S>> res_w1, res_b1, res_w2, res_b2;
  std::vector<TensorT<S>> mlp_w, mlp_b;

  std::vector<TensorT<S>> parameters() const {
    std::vector<TensorT<S>> ps{stem_w, stem_b};
    for (std::size_t i = 0; i < res_w1.size(); ++i) {
      ps.push_back(res_w1[i]);
      ps.push_back(res_b1[i]);
      ps.push_back(res_w2[i]);
      ps.push_back(res_b2[i]);
    }
    for (std::size_t i = 0; i < mlp_w.size(); ++i) {
      ps.push_back(mlp_w[i]);
      ps.push_back(mlp_b[i]);
    }
    return ps;
  }

  template <typename T>
  ImplicitModelT<T> cast() const {
    ImplicitModelT<T> m;
    m.config = config;
    m.stem_w = stem_w.template cast<T>();
    m.stem_b = stem_b.template cast<T>();
    auto cv = [](const std::vector<TensorT<S>>& v) {
      std::vector<TensorT<T>> o;
      for (const auto& t : v) o.push_back(t.template cast<T>());
      return o;
    };
    m.res_w1 = cv(res_w1);
    m.res_b1 = cv(res_b1);
    m.res_w2 = cv(res_w2);
    m.res_b2 = cv(res_b2);
    m.mlp_w = cv(mlp_w);
    m.mlp_b = cv(mlp_b);
    return m;
  }

  ImplicitModelT<S> frozen() const {
    ImplicitModelT<S> m;
    m.config = config;
    m.stem_w = stem_w.detach();
    m.stem_b = stem_b.detach();
    auto cv = [](const std::vector<TensorT<S>>& v) {
      std::vector<TensorT<S>> o;
      for (const auto& t : v) o.push_back(t.detach());
      return o;
    };
    m.res_w1 = cv(res_w1);
    m.res_b1 = cv(res_b1);
    m.res_w2 = cv(res_w2);
    m.res_b2 = cv(res_b2);
    m.mlp_w = cv(mlp_w);
    m.mlp_b = cv(mlp_b);
    return m;
  }
};

using ImplicitModel = ImplicitModelT<float>;

ImplicitModel init_implicit(const ImplicitConfig& cfg, std::uint64_t seed, bool requires_grad = true);

/// Pixel-wise embedding F at the input resolution.
template <typename S>
TensorT<S> encode(const ImplicitModelT<S>& m, const TensorT<S>& images) {
  if (images.rank() != 4 || images.dim(1) != m.config.img_channels)
    throw DimensionError("encode: images " + shape_str(images.shape()) + " do not match config");
  TensorT<S> h = add_channel_bias(conv2d(images, m.stem_w, 1, 1), m.stem_b);
  for (std::size_t i = 0; i < m.res_w1.size(); ++i) {
    TensorT<S> r = add_channel_bias(conv2d(h, m.res_w1[i], 1, 1), m.res_b1[i]);
    r = relu(r);
    r = add_channel_bias(conv2d(r, m.res_w2[i], 1, 1), m.res_b2[i]);
    h = add(h, r);
  }
  return h;
}

template <typename S>
TensorT<S> query_mlp(const ImplicitModelT<S>& m, TensorT<S> x) {
  for (std::size_t i = 0; i < m.mlp_w.size(); ++i) {
    x = pointwise_linear(x, m.mlp_w[i], m.mlp_b[i]);
    if (i + 1 < m.mlp_w.size()) x = relu(x);
  }
  return x;
}

/// Local-ensemble query of the implicit representation at continuous
/// coordinates. funf is unfold3x3(encode(m, I)) with latent grid [H,W];
/// u, v are [N,1,Ho,Wo] row/col coordinate tensors (graph tensors — the
/// output is differentiable w.r.t. them through both the ensemble weights
/// and the offset inputs). Out-of-range coordinates are clamped first.
/// The four neighbor predictions are blended with area weights that sum
/// to 1; at integer coordinates exactly one weight is 1.
template <typename S>
TensorT<S> implicit_query(const ImplicitModelT<S>& m, const TensorT<S>& funf, const TensorT<S>& u,
                          const TensorT<S>& v) {
  const std::int64_t n = funf.dim(0), h = funf.dim(2), w = funf.dim(3);
  const std::int64_t ho = u.dim(2), wo = u.dim(3);
  if (u.shape() != v.shape() || u.dim(0) != n || u.dim(1) != 1)
    throw DimensionError("implicit_query: coordinate tensors must be [N,1,Ho,Wo]");

  TensorT<S> uc = clamp(u, S(0), S(h - 1));
  TensorT<S> vc = clamp(v, S(0), S(w - 1));

  const std::int64_t npx = n * ho * wo;
  std::vector<std::int32_t> i0(npx), j0(npx);
  for (std::int64_t p = 0; p < npx; ++p) {
    i0[p] = static_cast<std::int32_t>(std::floor(uc.data()[p]));
    j0[p] = static_cast<std::int32_t>(std::floor(vc.data()[p]));
  }

  // fractional parts as graph values: f = c - floor(c)
  TensorT<S> i0f = TensorT<S>::zeros({n, 1, ho, wo});
  TensorT<S> j0f = TensorT<S>::zeros({n, 1, ho, wo});
  for (std::int64_t p = 0; p < npx; ++p) {
    i0f.data()[p] = static_cast<S>(i0[p]);
    j0f.data()[p] = static_cast<S>(j0[p]);
  }
  TensorT<S> fu = sub(uc, i0f);
  TensorT<S> fv = sub(vc, j0f);
  TensorT<S> one_minus_fu = add_scalar(mul_scalar(fu, S(-1)), S(1));
  TensorT<S> one_minus_fv = add_scalar(mul_scalar(fv, S(-1)), S(1));

  TensorT<S> out;
  for (int t = 0; t < 4; ++t) {
    const int di = t >> 1, dj = t & 1;
    std::vector<std::int32_t> rows(npx), cols(npx);
    TensorT<S> rf = TensorT<S>::zeros({n, 1, ho, wo});
    TensorT<S> cf = TensorT<S>::zeros({n, 1, ho, wo});
    for (std::int64_t p = 0; p < npx; ++p) {
      rows[p] = std::min<std::int32_t>(i0[p] + di, static_cast<std::int32_t>(h - 1));
      cols[p] = std::min<std::int32_t>(j0[p] + dj, static_cast<std::int32_t>(w - 1));
      rf.data()[p] = static_cast<S>(rows[p]);
      cf.data()[p] = static_cast<S>(cols[p]);
    }
    TensorT<S> feats = gather_hw(funf, rows, cols, ho, wo);
    TensorT<S> dr = sub(uc, rf);
    TensorT<S> dc = sub(vc, cf);
    TensorT<S> phi = query_mlp(m, concat_channels(feats, concat_channels(dr, dc)));
    TensorT<S> weight = mul(di ? fu : one_minus_fu, dj ? fv : one_minus_fv);
    TensorT<S> term = scale_channels(phi, weight);
    out = out.defined() ? add(out, term) : term;
  }
  return out;
}

/// Query at the integer grid (zero offsets): the degenerate ensemble with a
/// single unit-weight neighbor, evaluated without the gather machinery.
template <typename S>
TensorT<S> implicit_query_grid(const ImplicitModelT<S>& m, const TensorT<S>& funf) {
  TensorT<S> zeros2 = TensorT<S>::zeros({funf.dim(0), 2, funf.dim(2), funf.dim(3)});
  return query_mlp(m, concat_channels(funf, zeros2));
}

/// A queryable continuous image. Out-of-range coordinates clamp to
/// [0,H-1]x[0,W-1]; nearest/bilinear reproduce source pixels exactly at
/// integer coordinates.
class ContinuousImage {
 public:
  static ContinuousImage make_nearest(Tensor image);
  static ContinuousImage make_bilinear(Tensor image);
  static ContinuousImage make_implicit(std::shared_ptr<const ImplicitModel> model, const Tensor& image);

  /// Color at (u, v) = (row, col); C values.
  std::vector<float> query(double u, double v) const;

  Backend backend() const { return backend_; }
  std::int64_t channels() const { return source_.dim(0); }
  std::int64_t height() const { return source_.dim(1); }
  std::int64_t width() const { return source_.dim(2); }
  const Tensor& source() const { return source_; }
  const Tensor& unfolded_features() const;
  const ImplicitModel& model() const;

 private:
  Backend backend_ = Backend::nearest;
  Tensor source_;  // [C,H,W]
  std::shared_ptr<const ImplicitModel> model_;
  Tensor funf_;  // [1,9C,H,W] cached for implicit
};

// --------------------------------------------------------------------------
// training tasks

enum class ReconTask { clean2clean, superres, inpaint, gauss_denoise, adv_denoise };
ReconTask task_from_string(const std::string& s);
std::string task_to_string(ReconTask t);

struct TaskParams {
  ReconTask task = ReconTask::clean2clean;
  std::int64_t down_factor = 2;       // superres
  float mask_lo = 0.10f;              // inpaint area fraction range
  float mask_hi = 0.25f;
  float sigma = 10.0f / 255.0f;       // gauss_denoise
  AttackConfig attack;                // adv_denoise
  const ClassifierModel* victim = nullptr;
  const Tensor* adv_cache = nullptr;  // precomputed adversarial images aligned with the dataset
};

struct PairedData {
  Tensor inputs;
  Tensor targets;
};

PairedData make_task_pairs(const TaskParams& params, const LabeledDataset& ds, std::uint64_t seed);

/// 2x average-pool downsample of [N,C,H,W] (data only).
Tensor downsample2(const Tensor& images);

struct ReconTrainHyper {
  std::int64_t epochs = 3;
  std::int64_t batch = 16;
  float lr = 1e-4f;
};

struct TrainCurve {
  std::vector<double> loss;  // mean per epoch
};

/// Stage-1 training: L1 between the grid-queried reconstruction and the
/// target, Adam with betas (0, 0.9). Superres queries the coarse latent
/// grid at the fine-grid coordinates instead.
ImplicitModel train_implicit(const ImplicitConfig& cfg, const TaskParams& params,
                             const LabeledDataset& ds, const ReconTrainHyper& hyper,
                             std::uint64_t seed, TrainCurve* curve = nullptr);

void save_implicit(const std::string& path, const ImplicitModel& m, const std::string& task_tag);
ImplicitModel load_implicit(const std::string& path, bool requires_grad = false);

}  // namespace rsd
