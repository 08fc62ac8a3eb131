#include "rsd/attacks.hpp"

#include <algorithm>
#include <sstream>

namespace rsd {

std::string AttackConfig::describe() const {
  std::ostringstream os;
  os << kind_to_string(kind) << " eps=" << epsilon << " steps=" << steps << " step=" << step_size
     << " rinit=" << (random_init ? 1 : 0) << " seed=" << seed;
  return os.str();
}

AttackConfig::Kind AttackConfig::kind_from_string(const std::string& s) {
  if (s == "fgsm") return Kind::fgsm;
  if (s == "bim") return Kind::bim;
  if (s == "pgd") return Kind::pgd;
  if (s == "bpda_pgd") return Kind::bpda_pgd;
  throw ConfigError("unknown attack kind: " + s);
}

std::string AttackConfig::kind_to_string(Kind k) {
  switch (k) {
    case Kind::fgsm: return "fgsm";
    case Kind::bim: return "bim";
    case Kind::pgd: return "pgd";
    case Kind::bpda_pgd: return "bpda_pgd";
  }
  return "?";
}

Tensor attack_batch(const ClassifierModel& victim, const Tensor& x, const std::vector<std::int32_t>& y,
                    const AttackConfig& raw_cfg, std::int64_t first_index, const DefenseFn* defense) {
  const AttackConfig cfg = raw_cfg.normalized();
  if (x.rank() != 4) throw DimensionError("attack: images must be [N,C,H,W]");
  const std::int64_t n = x.dim(0), chw = x.numel() / std::max<std::int64_t>(n, 1);
  if (static_cast<std::int64_t>(y.size()) != n) throw DimensionError("attack: label count mismatch");

  const Array<float>& x0 = x.data();
  Tensor cur = x.clone();
  if (cfg.random_init && cfg.epsilon > 0.0f) {
    for (std::int64_t i = 0; i < n; ++i) {
      SplitMix64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(first_index + i)));
      float* p = cur.raw() + i * chw;
      for (std::int64_t q = 0; q < chw; ++q)
        p[q] += static_cast<float>(rng.uniform(-cfg.epsilon, cfg.epsilon));
    }
    cur.data() = cur.data().max(0.0f).min(1.0f);
  }

  for (std::int64_t s = 0; s < cfg.steps; ++s) {
    // forward through the defense when given; gradient taken at its output
    // (straight-through identity for the defense itself)
    Tensor z = (defense && *defense) ? (*defense)(cur, first_index) : cur;
    Tensor z_leaf = z.clone(true);
    Tensor loss = softmax_cross_entropy(predict(victim, z_leaf), y);
    backward(loss);
    Array<float> g = z_leaf.grad();
    cur.data() += cfg.step_size * g.sign();
    cur.data() = cur.data().max(x0 - cfg.epsilon).min(x0 + cfg.epsilon);
    cur.data() = cur.data().max(0.0f).min(1.0f);
  }
  return cur;
}

Tensor fgsm(const ClassifierModel& victim, const Tensor& x, const std::vector<std::int32_t>& y,
            float epsilon) {
  AttackConfig cfg;
  cfg.kind = AttackConfig::Kind::fgsm;
  cfg.epsilon = epsilon;
  return attack_batch(victim, x, y, cfg);
}

Tensor bim(const ClassifierModel& victim, const Tensor& x, const std::vector<std::int32_t>& y,
           const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.kind = AttackConfig::Kind::bim;
  return attack_batch(victim, x, y, c);
}

Tensor pgd(const ClassifierModel& victim, const Tensor& x, const std::vector<std::int32_t>& y,
           const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.kind = AttackConfig::Kind::pgd;
  return attack_batch(victim, x, y, c);
}

Tensor bpda_pgd(const ClassifierModel& victim, const DefenseFn& defense, const Tensor& x,
                const std::vector<std::int32_t>& y, const AttackConfig& cfg) {
  AttackConfig c = cfg;
  c.kind = AttackConfig::Kind::bpda_pgd;
  return attack_batch(victim, x, y, c, 0, &defense);
}

Tensor attack_images(const ClassifierModel& victim, const Tensor& images,
                     const std::vector<std::int32_t>& labels, const AttackConfig& cfg,
                     const DefenseFn* defense, std::int64_t batch_size) {
  const std::int64_t n = images.dim(0);
  const std::int64_t chw = images.numel() / std::max<std::int64_t>(n, 1);
  Tensor out = Tensor::zeros(images.shape());
  const std::int64_t n_batches = (n + batch_size - 1) / batch_size;
  parallel_for(n_batches, [&](std::int64_t b) {
    const std::int64_t from = b * batch_size;
    const std::int64_t count = std::min(batch_size, n - from);
    Tensor batch = Tensor::zeros({count, images.dim(1), images.dim(2), images.dim(3)});
    std::copy_n(images.raw() + from * chw, count * chw, batch.raw());
    std::vector<std::int32_t> yb(labels.begin() + from, labels.begin() + from + count);
    Tensor adv = attack_batch(victim, batch, yb, cfg, from, defense);
    std::copy_n(adv.raw(), count * chw, out.raw() + from * chw);
  });
  return out;
}

}  // namespace rsd
