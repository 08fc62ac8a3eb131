#include "rsd/recon.hpp"

#include <cmath>
#include <fstream>

#include "rsd/io.hpp"
#include "rsd/optim.hpp"

#include <json.hpp>

namespace rsd {

namespace {

Tensor kaiming_uniform(Shape shape, std::int64_t fan_in, SplitMix64& rng, bool requires_grad) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

ImplicitModel init_implicit(const ImplicitConfig& cfg, std::uint64_t seed, bool requires_grad) {
  if (cfg.blocks < 1 || cfg.channels < 1 || cfg.mlp_layers < 2)
    throw ConfigError("implicit: invalid architecture");
  SplitMix64 rng(seed);
  ImplicitModel m;
  m.config = cfg;
  m.stem_w = kaiming_uniform({cfg.channels, cfg.img_channels, 3, 3}, cfg.img_channels * 9, rng,
                             requires_grad);
  m.stem_b = Tensor::zeros({cfg.channels}, requires_grad);
  for (std::int64_t i = 0; i < cfg.blocks; ++i) {
    m.res_w1.push_back(kaiming_uniform({cfg.channels, cfg.channels, 3, 3}, cfg.channels * 9, rng,
                                       requires_grad));
    m.res_b1.push_back(Tensor::zeros({cfg.channels}, requires_grad));
    m.res_w2.push_back(kaiming_uniform({cfg.channels, cfg.channels, 3, 3}, cfg.channels * 9, rng,
                                       requires_grad));
    m.res_b2.push_back(Tensor::zeros({cfg.channels}, requires_grad));
  }
  std::int64_t in = cfg.mlp_input();
  for (std::int64_t i = 0; i < cfg.mlp_layers; ++i) {
    const std::int64_t out = (i + 1 == cfg.mlp_layers) ? cfg.img_channels : cfg.mlp_hidden;
    m.mlp_w.push_back(kaiming_uniform({out, in}, in, rng, requires_grad));
    m.mlp_b.push_back(Tensor::zeros({out}, requires_grad));
    in = out;
  }
  return m;
}

// --------------------------------------------------------------------------
// ContinuousImage

ContinuousImage ContinuousImage::make_nearest(Tensor image) {
  if (image.rank() != 3) throw DimensionError("continuous image: expected [C,H,W]");
  ContinuousImage c;
  c.backend_ = Backend::nearest;
  c.source_ = std::move(image);
  return c;
}

ContinuousImage ContinuousImage::make_bilinear(Tensor image) {
  if (image.rank() != 3) throw DimensionError("continuous image: expected [C,H,W]");
  ContinuousImage c;
  c.backend_ = Backend::bilinear;
  c.source_ = std::move(image);
  return c;
}

ContinuousImage ContinuousImage::make_implicit(std::shared_ptr<const ImplicitModel> model,
                                               const Tensor& image) {
  if (image.rank() != 3) throw DimensionError("continuous image: expected [C,H,W]");
  if (!model) throw ConfigError("continuous image: implicit backend needs a model");
  ContinuousImage c;
  c.backend_ = Backend::implicit;
  c.source_ = image;
  c.model_ = std::make_shared<const ImplicitModel>(model->frozen());
  Tensor batch = reshape(image, {std::int64_t(1), image.dim(0), image.dim(1), image.dim(2)}).detach();
  c.funf_ = unfold3x3(encode(*c.model_, batch)).detach();
  return c;
}

const Tensor& ContinuousImage::unfolded_features() const {
  if (backend_ != Backend::implicit) throw UsageError("unfolded_features: not an implicit image");
  return funf_;
}

const ImplicitModel& ContinuousImage::model() const {
  if (!model_) throw UsageError("model(): not an implicit image");
  return *model_;
}

std::vector<float> ContinuousImage::query(double u, double v) const {
  const std::int64_t c = channels(), h = height(), w = width();
  u = std::clamp(u, 0.0, static_cast<double>(h - 1));
  v = std::clamp(v, 0.0, static_cast<double>(w - 1));
  std::vector<float> out(static_cast<std::size_t>(c));
  switch (backend_) {
    case Backend::nearest: {
      const std::int64_t i = static_cast<std::int64_t>(std::floor(u + 0.5));
      const std::int64_t j = static_cast<std::int64_t>(std::floor(v + 0.5));
      for (std::int64_t ch = 0; ch < c; ++ch)
        out[static_cast<std::size_t>(ch)] = source_.data()[(ch * h + i) * w + j];
      return out;
    }
    case Backend::bilinear: {
      const std::int64_t i0 = static_cast<std::int64_t>(std::floor(u));
      const std::int64_t j0 = static_cast<std::int64_t>(std::floor(v));
      const std::int64_t i1 = std::min(i0 + 1, h - 1), j1 = std::min(j0 + 1, w - 1);
      const float fu = static_cast<float>(u - static_cast<double>(i0));
      const float fv = static_cast<float>(v - static_cast<double>(j0));
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const float* img = source_.raw() + ch * h * w;
        out[static_cast<std::size_t>(ch)] = (1.0f - fu) * (1.0f - fv) * img[i0 * w + j0] +
                                            (1.0f - fu) * fv * img[i0 * w + j1] +
                                            fu * (1.0f - fv) * img[i1 * w + j0] +
                                            fu * fv * img[i1 * w + j1];
      }
      return out;
    }
    case Backend::implicit: {
      Tensor ut = Tensor::full({1, 1, 1, 1}, static_cast<float>(u));
      Tensor vt = Tensor::full({1, 1, 1, 1}, static_cast<float>(v));
      Tensor col = implicit_query(*model_, funf_, ut, vt);
      for (std::int64_t ch = 0; ch < c; ++ch) out[static_cast<std::size_t>(ch)] = col.data()[ch];
      return out;
    }
  }
  throw UsageError("query: bad backend");
}

// --------------------------------------------------------------------------
// tasks

ReconTask task_from_string(const std::string& s) {
  if (s == "clean2clean") return ReconTask::clean2clean;
  if (s == "superres") return ReconTask::superres;
  if (s == "inpaint") return ReconTask::inpaint;
  if (s == "gauss_denoise") return ReconTask::gauss_denoise;
  if (s == "adv_denoise") return ReconTask::adv_denoise;
  throw ConfigError("unknown recon task: " + s);
}

std::string task_to_string(ReconTask t) {
  switch (t) {
    case ReconTask::clean2clean: return "clean2clean";
    case ReconTask::superres: return "superres";
    case ReconTask::inpaint: return "inpaint";
    case ReconTask::gauss_denoise: return "gauss_denoise";
    case ReconTask::adv_denoise: return "adv_denoise";
  }
  return "?";
}

Tensor downsample2(const Tensor& images) {
  if (images.rank() != 4) throw DimensionError("downsample2: expected [N,C,H,W]");
  Tensor out = avg_pool2(images.detach());
  return out.detach();
}

PairedData make_task_pairs(const TaskParams& params, const LabeledDataset& ds, std::uint64_t seed) {
  PairedData out;
  out.targets = ds.images.clone();
  switch (params.task) {
    case ReconTask::clean2clean: {
      out.inputs = ds.images.clone();
      return out;
    }
    case ReconTask::superres: {
      if (params.down_factor != 2) throw ConfigError("superres: only a fixed x2 factor is supported");
      if (ds.height() % 2 || ds.width() % 2) throw ConfigError("superres: dims must be even");
      out.inputs = downsample2(ds.images);
      return out;
    }
    case ReconTask::inpaint: {
      if (!(params.mask_lo > 0.0f && params.mask_hi < 1.0f && params.mask_lo <= params.mask_hi))
        throw ConfigError("inpaint: mask fraction must satisfy 0 < lo <= hi < 1");
      out.inputs = ds.images.clone();
      const std::int64_t h = ds.height(), w = ds.width(), c = ds.channels();
      for (std::int64_t i = 0; i < ds.size(); ++i) {
        SplitMix64 rng(derive_seed(seed, 0x1a5cULL + static_cast<std::uint64_t>(i)));
        const double area = rng.uniform(params.mask_lo, params.mask_hi) * static_cast<double>(h * w);
        const double aspect = rng.uniform(0.5, 2.0);
        std::int64_t mh = std::clamp<std::int64_t>(
            static_cast<std::int64_t>(std::lround(std::sqrt(area * aspect))), 1, h);
        std::int64_t mw = std::clamp<std::int64_t>(
            static_cast<std::int64_t>(std::lround(area / static_cast<double>(mh))), 1, w);
        const std::int64_t r0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - mh + 1)));
        const std::int64_t c0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - mw + 1)));
        for (std::int64_t ch = 0; ch < c; ++ch)
          for (std::int64_t r = r0; r < r0 + mh; ++r)
            for (std::int64_t q = c0; q < c0 + mw; ++q)
              out.inputs.data()[((i * c + ch) * h + r) * w + q] = 0.0f;
      }
      return out;
    }
    case ReconTask::gauss_denoise: {
      if (!(params.sigma > 0.0f)) throw ConfigError("gauss_denoise: sigma must be > 0");
      out.inputs = ds.images.clone();
      const std::int64_t chw = ds.channels() * ds.height() * ds.width();
      for (std::int64_t i = 0; i < ds.size(); ++i) {
        SplitMix64 rng(derive_seed(seed, 0x6a55ULL + static_cast<std::uint64_t>(i)));
        float* p = out.inputs.raw() + i * chw;
        for (std::int64_t q = 0; q < chw; ++q)
          p[q] = std::clamp(p[q] + params.sigma * static_cast<float>(rng.normal()), 0.0f, 1.0f);
      }
      return out;
    }
    case ReconTask::adv_denoise: {
      if (params.adv_cache) {
        if (params.adv_cache->shape() != ds.images.shape())
          throw ConfigError("adv_denoise: cached adversarial set does not match dataset shape");
        out.inputs = params.adv_cache->clone();
        return out;
      }
      if (!params.victim) throw ConfigError("adv_denoise: needs a victim classifier");
      AttackConfig atk = params.attack;
      atk.seed = derive_seed(seed, 0xadfULL);
      out.inputs = attack_images(*params.victim, ds.images, ds.labels, atk);
      return out;
    }
  }
  throw ConfigError("make_task_pairs: bad task");
}

// --------------------------------------------------------------------------
// stage-1 training

namespace {

/// Fine-grid coordinates in the coarse latent frame for x2 superres:
/// fine row i sits at coarse coordinate (i - 0.5) / 2.
void superres_coords(std::int64_t n, std::int64_t fine_h, std::int64_t fine_w, Tensor& u, Tensor& v) {
  u = Tensor::zeros({n, 1, fine_h, fine_w});
  v = Tensor::zeros({n, 1, fine_h, fine_w});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < fine_h; ++i)
      for (std::int64_t j = 0; j < fine_w; ++j) {
        u.data()[(b * fine_h + i) * fine_w + j] = (static_cast<float>(i) - 0.5f) / 2.0f;
        v.data()[(b * fine_h + i) * fine_w + j] = (static_cast<float>(j) - 0.5f) / 2.0f;
      }
}

}  // namespace

ImplicitModel train_implicit(const ImplicitConfig& cfg, const TaskParams& params,
                             const LabeledDataset& ds, const ReconTrainHyper& hyper,
                             std::uint64_t seed, TrainCurve* curve) {
  if (cfg.img_channels != ds.channels())
    throw ConfigError("train_implicit: config channels do not match dataset");
  PairedData pairs = make_task_pairs(params, ds, derive_seed(seed, 0x9a17ULL));
  const std::int64_t n = pairs.inputs.dim(0);
  ImplicitModel m = init_implicit(cfg, seed, true);
  Adam opt(m.parameters(), {.lr = hyper.lr});

  const std::int64_t in_chw = pairs.inputs.numel() / n;
  const std::int64_t tg_chw = pairs.targets.numel() / n;
  const bool superres = params.task == ReconTask::superres;

  for (std::int64_t e = 0; e < hyper.epochs; ++e) {
    // seeded epoch shuffle
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    SplitMix64 rng(derive_seed(seed, 0xe90cULL + static_cast<std::uint64_t>(e)));
    for (std::int64_t i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);

    double loss_sum = 0.0;
    std::int64_t nb = 0;
    for (std::int64_t from = 0; from < n; from += hyper.batch) {
      const std::int64_t count = std::min(hyper.batch, n - from);
      std::vector<std::int64_t> idx(order.begin() + from, order.begin() + from + count);
      Tensor xb = take_rows(pairs.inputs, idx);
      Tensor yb = take_rows(pairs.targets, idx);
      (void)in_chw;
      (void)tg_chw;

      Tensor funf = unfold3x3(encode(m, xb));
      Tensor recon;
      if (superres) {
        Tensor u, v;
        superres_coords(count, yb.dim(2), yb.dim(3), u, v);
        recon = implicit_query(m, funf, u, v);
      } else {
        recon = implicit_query_grid(m, funf);
      }
      Tensor loss = l1_loss(recon, yb);
      if (!std::isfinite(loss.item())) throw TrainError("train_implicit: loss diverged");
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.item();
      ++nb;
    }
    if (curve) curve->loss.push_back(loss_sum / static_cast<double>(nb));
  }
  return m;
}

// --------------------------------------------------------------------------
// checkpoints

void save_implicit(const std::string& path, const ImplicitModel& m, const std::string& task_tag) {
  NamedTensors ts;
  ts.emplace_back("stem.w", m.stem_w);
  ts.emplace_back("stem.b", m.stem_b);
  for (std::size_t i = 0; i < m.res_w1.size(); ++i) {
    const std::string p = "res" + std::to_string(i);
    ts.emplace_back(p + ".w1", m.res_w1[i]);
    ts.emplace_back(p + ".b1", m.res_b1[i]);
    ts.emplace_back(p + ".w2", m.res_w2[i]);
    ts.emplace_back(p + ".b2", m.res_b2[i]);
  }
  for (std::size_t i = 0; i < m.mlp_w.size(); ++i) {
    ts.emplace_back("mlp" + std::to_string(i) + ".w", m.mlp_w[i]);
    ts.emplace_back("mlp" + std::to_string(i) + ".b", m.mlp_b[i]);
  }
  save_checkpoint(path, ts);

  nlohmann::json j;
  j["blocks"] = m.config.blocks;
  j["channels"] = m.config.channels;
  j["mlp_hidden"] = m.config.mlp_hidden;
  j["mlp_layers"] = m.config.mlp_layers;
  j["img_channels"] = m.config.img_channels;
  j["task"] = task_tag;
  std::ofstream os(path + ".json");
  if (!os) throw IoError("cannot open for write: " + path + ".json");
  os << j.dump(2) << "\n";
}

ImplicitModel load_implicit(const std::string& path, bool requires_grad) {
  std::ifstream is(path + ".json");
  if (!is) throw IoError("cannot open: " + path + ".json");
  nlohmann::json j;
  is >> j;
  ImplicitConfig cfg;
  cfg.blocks = j.at("blocks").get<std::int64_t>();
  cfg.channels = j.at("channels").get<std::int64_t>();
  cfg.mlp_hidden = j.at("mlp_hidden").get<std::int64_t>();
  cfg.mlp_layers = j.at("mlp_layers").get<std::int64_t>();
  cfg.img_channels = j.at("img_channels").get<std::int64_t>();

  NamedTensors ts = load_checkpoint(path);
  auto find = [&](const std::string& name) -> Tensor {
    for (auto& [nm, t] : ts)
      if (nm == name) return requires_grad ? t.clone(true) : t;
    throw FormatError("checkpoint missing tensor: " + name);
  };
  ImplicitModel m;
  m.config = cfg;
  m.stem_w = find("stem.w");
  m.stem_b = find("stem.b");
  for (std::int64_t i = 0; i < cfg.blocks; ++i) {
    const std::string p = "res" + std::to_string(i);
    m.res_w1.push_back(find(p + ".w1"));
    m.res_b1.push_back(find(p + ".b1"));
    m.res_w2.push_back(find(p + ".w2"));
    m.res_b2.push_back(find(p + ".b2"));
  }
  for (std::int64_t i = 0; i < cfg.mlp_layers; ++i) {
    m.mlp_w.push_back(find("mlp" + std::to_string(i) + ".w"));
    m.mlp_b.push_back(find("mlp" + std::to_string(i) + ".b"));
  }
  return m;
}

}  // namespace rsd
