#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "rsd/attacks.hpp"
#include "rsd/digits.hpp"

using namespace rsd;

namespace {

struct Fixture {
  LabeledDataset train = make_digits(2000, 51);
  LabeledDataset test = make_digits(300, 52);
  ClassifierModel model;
  Fixture() {
    ClassifierConfig cfg = ClassifierConfig::tiny(1, 28, 28, 10);
    model = train_classifier(cfg, train, 2, 1e-3f, 7, nullptr, 64).frozen();
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.raw(), b.raw(), static_cast<std::size_t>(a.numel()) * 4) == 0;
}

}  // namespace

TEST_CASE("fgsm with zero budget returns the input") {
  const auto& f = fixture();
  Tensor x = slice_dataset(f.test, 0, 8).images;
  std::vector<std::int32_t> y(f.test.labels.begin(), f.test.labels.begin() + 8);
  CHECK(bit_equal(fgsm(f.model, x, y, 0.0f), x));
}

TEST_CASE("attack outputs satisfy the epsilon ball and [0,1] containment") {
  const auto& f = fixture();
  LabeledDataset sub = slice_dataset(f.test, 0, 64);
  AttackConfig cfg;
  cfg.kind = AttackConfig::Kind::pgd;
  cfg.epsilon = 0.1f;
  cfg.steps = 5;
  cfg.step_size = 0.05f;
  cfg.seed = 3;
  Tensor adv = attack_images(f.model, sub.images, sub.labels, cfg);
  CHECK((adv.data() - sub.images.data()).abs().maxCoeff() <= 0.1f + 1e-6f);
  CHECK(adv.data().minCoeff() >= 0.0f);
  CHECK(adv.data().maxCoeff() <= 1.0f);
}

TEST_CASE("fgsm reduces to one-step pgd bit-exactly") {
  const auto& f = fixture();
  Tensor x = slice_dataset(f.test, 0, 16).images;
  std::vector<std::int32_t> y(f.test.labels.begin(), f.test.labels.begin() + 16);
  AttackConfig cfg;
  cfg.kind = AttackConfig::Kind::pgd;
  cfg.epsilon = 0.07f;
  cfg.steps = 1;
  cfg.step_size = 0.07f;
  cfg.random_init = false;
  CHECK(bit_equal(fgsm(f.model, x, y, 0.07f), pgd(f.model, x, y, cfg)));
}

TEST_CASE("bim reduces to pgd without random init bit-exactly") {
  const auto& f = fixture();
  Tensor x = slice_dataset(f.test, 0, 16).images;
  std::vector<std::int32_t> y(f.test.labels.begin(), f.test.labels.begin() + 16);
  AttackConfig cfg;
  cfg.epsilon = 0.1f;
  cfg.steps = 4;
  cfg.step_size = 0.03f;
  AttackConfig no_init = cfg;
  no_init.kind = AttackConfig::Kind::pgd;
  no_init.random_init = false;
  CHECK(bit_equal(bim(f.model, x, y, cfg), pgd(f.model, x, y, no_init)));
}

TEST_CASE("bpda with the identity defense equals pgd bit-exactly") {
  const auto& f = fixture();
  Tensor x = slice_dataset(f.test, 0, 16).images;
  std::vector<std::int32_t> y(f.test.labels.begin(), f.test.labels.begin() + 16);
  AttackConfig cfg;
  cfg.kind = AttackConfig::Kind::pgd;
  cfg.epsilon = 0.1f;
  cfg.steps = 3;
  cfg.step_size = 0.04f;
  cfg.random_init = true;
  cfg.seed = 17;
  DefenseFn identity = [](const Tensor& b, std::int64_t) { return b; };
  CHECK(bit_equal(bpda_pgd(f.model, identity, x, y, cfg), pgd(f.model, x, y, cfg)));
}

TEST_CASE("attacks are deterministic under a fixed seed") {
  const auto& f = fixture();
  LabeledDataset sub = slice_dataset(f.test, 0, 32);
  AttackConfig cfg;
  cfg.epsilon = 0.1f;
  cfg.steps = 3;
  cfg.step_size = 0.03f;
  cfg.random_init = true;
  cfg.seed = 23;
  Tensor a = attack_images(f.model, sub.images, sub.labels, cfg);
  Tensor b = attack_images(f.model, sub.images, sub.labels, cfg);
  CHECK(bit_equal(a, b));
  // and independent of the batch split
  Tensor c = attack_images(f.model, sub.images, sub.labels, cfg, nullptr, 7);
  CHECK(bit_equal(a, c));
}

TEST_CASE("attack success at desk scale; more steps are at least as strong") {
  const auto& f = fixture();
  LabeledDataset sub = slice_dataset(f.test, 0, 200);
  const double clean_acc = accuracy(f.model, sub);
  CHECK(clean_acc >= 0.9);

  Tensor x_fgsm = fgsm(f.model, sub.images, sub.labels, 0.1f);
  const double acc_fgsm = accuracy(f.model, x_fgsm, sub.labels);
  CHECK(acc_fgsm < 0.5);

  AttackConfig strong;
  strong.kind = AttackConfig::Kind::pgd;
  strong.epsilon = 0.1f;
  strong.steps = 40;
  strong.step_size = 0.01f;
  strong.random_init = true;
  strong.seed = 5;
  Tensor x_pgd = attack_images(f.model, sub.images, sub.labels, strong);
  const double acc_pgd = accuracy(f.model, x_pgd, sub.labels);
  CHECK(acc_pgd < 0.1);

  AttackConfig bim_cfg = strong;
  bim_cfg.kind = AttackConfig::Kind::bim;
  bim_cfg.steps = 10;
  Tensor x_bim = attack_images(f.model, sub.images, sub.labels, bim_cfg);
  CHECK(accuracy(f.model, x_bim, sub.labels) <= acc_fgsm + 1e-9);
}

TEST_CASE("config validation") {
  AttackConfig cfg;
  cfg.epsilon = -1.0f;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.epsilon = 0.1f;
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(AttackConfig::kind_from_string("evil"), ConfigError);

  AttackConfig f;
  f.kind = AttackConfig::Kind::fgsm;
  f.epsilon = 0.25f;
  f.steps = 99;
  f.random_init = true;
  AttackConfig n = f.normalized();
  CHECK(n.steps == 1);
  CHECK(n.step_size == 0.25f);
  CHECK(n.random_init == false);
}
