#include "rsd/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rsd/io.hpp"
#include "rsd/optim.hpp"

#include <json.hpp>

namespace rsd {

Tensor grid_coords(std::int64_t h, std::int64_t w) {
  Tensor g = Tensor::zeros({h, w, 2});
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      g.data()[(i * w + j) * 2] = static_cast<float>(i);
      g.data()[(i * w + j) * 2 + 1] = static_cast<float>(j);
    }
  return g;
}

ShiftField sample_fixed(std::int64_t h, std::int64_t w, float d) {
  ShiftField f;
  f.provenance = ShiftField::Provenance::fixed;
  f.shifts = Tensor::full({h, w, 2}, d);
  return f;
}

ShiftField sample_uniform(std::int64_t h, std::int64_t w, float gamma, std::uint64_t seed) {
  if (gamma < 0.0f) throw ConfigError("sample_uniform: gamma must be >= 0");
  ShiftField f;
  f.provenance = ShiftField::Provenance::uniform;
  f.shifts = Tensor::zeros({h, w, 2});
  SplitMix64 rng(seed);
  for (std::int64_t i = 0; i < f.shifts.numel(); ++i)
    f.shifts.data()[i] = static_cast<float>(rng.uniform01()) * gamma;
  return f;
}

SampleNetModel init_samplenet(const SampleNetConfig& cfg, std::uint64_t seed, bool requires_grad) {
  if (cfg.layers < 2) throw ConfigError("samplenet: need at least 2 layers");
  if (!(cfg.s_max > 0.0f)) throw ConfigError("samplenet: s_max must be > 0");
  SplitMix64 rng(seed);
  SampleNetModel m;
  m.config = cfg;
  std::int64_t in = cfg.input_width();
  for (std::int64_t i = 0; i < cfg.layers; ++i) {
    const bool last = i + 1 == cfg.layers;
    const std::int64_t out = last ? 2 : cfg.hidden;
    Tensor w = Tensor::zeros({out, in}, requires_grad);
    if (!last) {
      const double bound = std::sqrt(6.0 / static_cast<double>(in));
      for (std::int64_t q = 0; q < w.numel(); ++q)
        w.data()[q] = static_cast<float>(rng.uniform(-bound, bound));
    }
    m.w.push_back(w);  // final layer stays zero: untrained net shifts nothing
    m.b.push_back(Tensor::zeros({out}, requires_grad));
    in = out;
  }
  return m;
}

ShiftField samplenet_predict(const SampleNetModel& m, const ImplicitModel& implicit,
                             const Tensor& image) {
  if (image.rank() != 3) throw DimensionError("samplenet_predict: expected [C,H,W]");
  const std::int64_t h = image.dim(1), w = image.dim(2);
  Tensor batch = reshape(image, {std::int64_t(1), image.dim(0), h, w}).detach();
  Tensor funf = unfold3x3(encode(implicit.frozen(), batch)).detach();
  Tensor s = samplenet_shifts(m.frozen(), funf);  // [1,2,H,W]
  ShiftField f;
  f.provenance = ShiftField::Provenance::learned;
  f.shifts = Tensor::zeros({h, w, 2});
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      f.shifts.data()[(i * w + j) * 2] = s.data()[(0 * h + i) * w + j];
      f.shifts.data()[(i * w + j) * 2 + 1] = s.data()[(1 * h + i) * w + j];
    }
  return f;
}

Tensor resample(const ContinuousImage& cont, const ShiftField& shifts) {
  const std::int64_t c = cont.channels(), h = cont.height(), w = cont.width();
  if (shifts.shifts.dim(0) != h || shifts.shifts.dim(1) != w)
    throw DimensionError("resample: shift field dims do not match image");
  Tensor out = Tensor::zeros({c, h, w});

  if (cont.backend() == Backend::implicit) {
    // batched query: one graph evaluation for the whole image
    Tensor u = Tensor::zeros({1, 1, h, w});
    Tensor v = Tensor::zeros({1, 1, h, w});
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        u.data()[i * w + j] = static_cast<float>(i) + shifts.row(i, j);
        v.data()[i * w + j] = static_cast<float>(j) + shifts.col(i, j);
      }
    Tensor q = implicit_query(cont.model(), cont.unfolded_features(), u, v);  // [1,C,H,W]
    out.data() = q.data().max(0.0f).min(1.0f);
    return out;
  }

  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      const double qu = static_cast<double>(i) + static_cast<double>(shifts.row(i, j));
      const double qv = static_cast<double>(j) + static_cast<double>(shifts.col(i, j));
      std::vector<float> color = cont.query(qu, qv);
      for (std::int64_t ch = 0; ch < c; ++ch)
        out.data()[(ch * h + i) * w + j] = std::clamp(color[static_cast<std::size_t>(ch)], 0.0f, 1.0f);
    }
  return out;
}

// --------------------------------------------------------------------------
// defenses

DefenseKind defense_kind_from_string(const std::string& s) {
  if (s == "none") return DefenseKind::none;
  if (s == "nearest_fixed") return DefenseKind::nearest_fixed;
  if (s == "bilinear_fixed") return DefenseKind::bilinear_fixed;
  if (s == "nearest_uniform") return DefenseKind::nearest_uniform;
  if (s == "bilinear_uniform") return DefenseKind::bilinear_uniform;
  if (s == "implicit_only") return DefenseKind::implicit_only;
  if (s == "irad") return DefenseKind::irad;
  throw ConfigError("unknown defense kind: " + s);
}

std::string defense_kind_to_string(DefenseKind k) {
  switch (k) {
    case DefenseKind::none: return "none";
    case DefenseKind::nearest_fixed: return "nearest_fixed";
    case DefenseKind::bilinear_fixed: return "bilinear_fixed";
    case DefenseKind::nearest_uniform: return "nearest_uniform";
    case DefenseKind::bilinear_uniform: return "bilinear_uniform";
    case DefenseKind::implicit_only: return "implicit_only";
    case DefenseKind::irad: return "irad";
  }
  return "?";
}

DefensePipeline DefensePipeline::make(DefenseKind kind, DefenseParams params,
                                      std::shared_ptr<const ImplicitModel> implicit,
                                      std::shared_ptr<const SampleNetModel> samplenet) {
  DefensePipeline p;
  p.kind_ = kind;
  p.params_ = params;
  if (kind == DefenseKind::implicit_only || kind == DefenseKind::irad) {
    if (!implicit) throw ConfigError("defense " + defense_kind_to_string(kind) + ": missing implicit model");
    p.implicit_ = std::make_shared<const ImplicitModel>(implicit->frozen());
  }
  if (kind == DefenseKind::irad) {
    if (!samplenet) throw ConfigError("defense irad: missing samplenet model");
    if (samplenet->config.feat_channels != implicit->config.unfold_channels())
      throw ConfigError("defense irad: samplenet/implicit channel mismatch");
    p.samplenet_ = std::make_shared<const SampleNetModel>(samplenet->frozen());
  }
  return p;
}

namespace {

constexpr std::int64_t kImplicitChunk = 16;  // bounds unfold memory during eval

}  // namespace

Tensor DefensePipeline::apply(const Tensor& batch, std::int64_t first_index) const {
  if (batch.rank() != 4) throw DimensionError("defense: expected [N,C,H,W]");
  if (kind_ == DefenseKind::none) return batch;

  const std::int64_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const std::int64_t chw = c * h * w;
  Tensor out = Tensor::zeros(batch.shape());

  switch (kind_) {
    case DefenseKind::nearest_fixed:
    case DefenseKind::bilinear_fixed:
    case DefenseKind::nearest_uniform:
    case DefenseKind::bilinear_uniform: {
      const bool nearest =
          kind_ == DefenseKind::nearest_fixed || kind_ == DefenseKind::nearest_uniform;
      const bool fixed = kind_ == DefenseKind::nearest_fixed || kind_ == DefenseKind::bilinear_fixed;
      ShiftField fixed_field = sample_fixed(h, w, params_.fixed_d);
      for (std::int64_t i = 0; i < n; ++i) {
        Tensor img = Tensor::zeros({c, h, w});
        std::copy_n(batch.raw() + i * chw, chw, img.raw());
        ContinuousImage cont =
            nearest ? ContinuousImage::make_nearest(img) : ContinuousImage::make_bilinear(img);
        ShiftField field =
            fixed ? fixed_field
                  : sample_uniform(h, w, params_.uniform_gamma,
                                   derive_seed(params_.seed, static_cast<std::uint64_t>(first_index + i)));
        Tensor res = resample(cont, field);
        std::copy_n(res.raw(), chw, out.raw() + i * chw);
      }
      return out;
    }
    case DefenseKind::implicit_only:
    case DefenseKind::irad: {
      for (std::int64_t from = 0; from < n; from += kImplicitChunk) {
        const std::int64_t count = std::min(kImplicitChunk, n - from);
        Tensor chunk = Tensor::zeros({count, c, h, w});
        std::copy_n(batch.raw() + from * chw, count * chw, chunk.raw());
        Tensor funf = unfold3x3(encode(*implicit_, chunk));
        Tensor q;
        if (kind_ == DefenseKind::implicit_only) {
          q = implicit_query_grid(*implicit_, funf);
        } else {
          Tensor s = samplenet_shifts(*samplenet_, funf);  // [count,2,H,W]
          Tensor u = Tensor::zeros({count, 1, h, w});
          Tensor v = Tensor::zeros({count, 1, h, w});
          for (std::int64_t b = 0; b < count; ++b)
            for (std::int64_t i = 0; i < h; ++i)
              for (std::int64_t j = 0; j < w; ++j) {
                u.data()[(b * h + i) * w + j] =
                    static_cast<float>(i) + s.data()[((b * 2 + 0) * h + i) * w + j];
                v.data()[(b * h + i) * w + j] =
                    static_cast<float>(j) + s.data()[((b * 2 + 1) * h + i) * w + j];
              }
          q = implicit_query(*implicit_, funf, u, v);
        }
        Eigen::Map<Array<float>>(out.raw() + from * chw, count * chw) =
            q.data().max(0.0f).min(1.0f);
      }
      return out;
    }
    default:
      throw ConfigError("defense: bad kind");
  }
}

DefenseFn DefensePipeline::as_fn() const {
  DefensePipeline copy = *this;
  return [copy](const Tensor& batch, std::int64_t first_index) {
    return copy.apply(batch, first_index);
  };
}

// --------------------------------------------------------------------------
// stage-2 training

SampleNetModel train_samplenet(const ImplicitModel& implicit, const ClassifierModel& victim,
                               const Tensor& adv, const Tensor& clean,
                               const std::vector<std::int32_t>& labels,
                               const SampleNetTrainHyper& hyper, std::uint64_t seed,
                               TrainCurve* curve) {
  if (adv.shape() != clean.shape()) throw DimensionError("train_samplenet: adv/clean shape mismatch");
  const std::int64_t n = adv.dim(0), h = adv.dim(2), w = adv.dim(3);
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw DimensionError("train_samplenet: label count mismatch");
  if (hyper.batch > n) throw ConfigError("train_samplenet: batch larger than dataset");

  const ImplicitModel imp = implicit.frozen();
  const ClassifierModel vic = victim.frozen();
  SampleNetConfig cfg;
  cfg.feat_channels = imp.config.unfold_channels();
  cfg.s_max = hyper.s_max;
  SampleNetModel sn = init_samplenet(cfg, derive_seed(seed, 0x5a3eULL), true);
  Adam opt(sn.parameters(), {.lr = hyper.lr});

  // grid planes reused across steps
  Tensor grid_u = Tensor::zeros({hyper.batch, 1, h, w});
  Tensor grid_v = Tensor::zeros({hyper.batch, 1, h, w});
  for (std::int64_t b = 0; b < hyper.batch; ++b)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        grid_u.data()[(b * h + i) * w + j] = static_cast<float>(i);
        grid_v.data()[(b * h + i) * w + j] = static_cast<float>(j);
      }

  auto defended = [&](const Tensor& xb) {
    Tensor funf = unfold3x3(encode(imp, xb));
    Tensor s = samplenet_shifts(sn, funf);  // graph through SampleNet only
    Tensor u = add(slice_channels(s, 0, 1), grid_u);
    Tensor v = add(slice_channels(s, 1, 1), grid_v);
    Tensor q = implicit_query(imp, funf, u, v);
    return clamp(q, 0.0f, 1.0f);
  };

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  SplitMix64 shuffler(derive_seed(seed, 0x0abcULL));
  std::int64_t cursor = n;  // force reshuffle at step 0

  const std::int64_t segments = std::min<std::int64_t>(hyper.steps, 8);
  std::vector<double> seg_sum(static_cast<std::size_t>(segments), 0.0);
  std::vector<std::int64_t> seg_cnt(static_cast<std::size_t>(segments), 0);

  for (std::int64_t step = 0; step < hyper.steps; ++step) {
    if (cursor + hyper.batch > n) {
      for (std::int64_t i = n - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(shuffler.below(static_cast<std::uint64_t>(i + 1)))]);
      cursor = 0;
    }
    std::vector<std::int64_t> idx(order.begin() + cursor, order.begin() + cursor + hyper.batch);
    cursor += hyper.batch;

    Tensor xa = take_rows(adv, idx);
    Tensor xc = take_rows(clean, idx);
    std::vector<std::int32_t> yb(static_cast<std::size_t>(hyper.batch));
    for (std::int64_t i = 0; i < hyper.batch; ++i)
      yb[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];

    Tensor loss = add(softmax_cross_entropy(predict(vic, defended(xa)), yb),
                      softmax_cross_entropy(predict(vic, defended(xc)), yb));
    if (!std::isfinite(loss.item())) throw TrainError("train_samplenet: loss diverged");
    opt.zero_grad();
    backward(loss);
    opt.step();

    const std::int64_t seg = step * segments / hyper.steps;
    seg_sum[static_cast<std::size_t>(seg)] += loss.item();
    ++seg_cnt[static_cast<std::size_t>(seg)];
  }
  if (curve)
    for (std::int64_t i = 0; i < segments; ++i)
      curve->loss.push_back(seg_sum[static_cast<std::size_t>(i)] /
                            std::max<std::int64_t>(seg_cnt[static_cast<std::size_t>(i)], 1));
  return sn;
}

// --------------------------------------------------------------------------
// checkpoints

void save_samplenet(const std::string& path, const SampleNetModel& m,
                    const std::string& implicit_hash, const std::string& victim_hash) {
  NamedTensors ts;
  for (std::size_t i = 0; i < m.w.size(); ++i) {
    ts.emplace_back("mlp" + std::to_string(i) + ".w", m.w[i]);
    ts.emplace_back("mlp" + std::to_string(i) + ".b", m.b[i]);
  }
  save_checkpoint(path, ts);

  nlohmann::json j;
  j["feat_channels"] = m.config.feat_channels;
  j["hidden"] = m.config.hidden;
  j["layers"] = m.config.layers;
  j["s_max"] = m.config.s_max;
  j["input_width"] = m.config.input_width();
  j["implicit_checkpoint_hash"] = implicit_hash;
  j["victim_checkpoint_hash"] = victim_hash;
  std::ofstream os(path + ".json");
  if (!os) throw IoError("cannot open for write: " + path + ".json");
  os << j.dump(2) << "\n";
}

SampleNetModel load_samplenet(const std::string& path, bool requires_grad) {
  std::ifstream is(path + ".json");
  if (!is) throw IoError("cannot open: " + path + ".json");
  nlohmann::json j;
  is >> j;
  SampleNetConfig cfg;
  cfg.feat_channels = j.at("feat_channels").get<std::int64_t>();
  cfg.hidden = j.at("hidden").get<std::int64_t>();
  cfg.layers = j.at("layers").get<std::int64_t>();
  cfg.s_max = j.at("s_max").get<float>();

  NamedTensors ts = load_checkpoint(path);
  auto find = [&](const std::string& name) -> Tensor {
    for (auto& [nm, t] : ts)
      if (nm == name) return requires_grad ? t.clone(true) : t;
    throw FormatError("checkpoint missing tensor: " + name);
  };
  SampleNetModel m;
  m.config = cfg;
  for (std::int64_t i = 0; i < cfg.layers; ++i) {
    m.w.push_back(find("mlp" + std::to_string(i) + ".w"));
    m.b.push_back(find("mlp" + std::to_string(i) + ".b"));
  }
  return m;
}

}  // namespace rsd
