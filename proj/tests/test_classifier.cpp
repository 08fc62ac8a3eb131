#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "rsd/classifier.hpp"
#include "rsd/digits.hpp"
#include "rsd/grad_check.hpp"

using namespace rsd;

TEST_CASE("zero-initialized final layer gives all-equal logits") {
  ClassifierConfig cfg = ClassifierConfig::tiny(1, 16, 16, 4);
  ClassifierModel m = init_classifier(cfg, 1);
  m.fc2_w.data().setZero();
  m.fc2_b.data().setZero();
  LabeledDataset ds = make_synthetic(4, 2);
  Tensor logits = predict(m, ds.images);
  for (std::int64_t i = 0; i < logits.dim(0); ++i)
    for (std::int64_t k = 1; k < logits.dim(1); ++k)
      CHECK(logits.data()[i * logits.dim(1) + k] == logits.data()[i * logits.dim(1)]);
}

TEST_CASE("batch independence: duplicated rows give duplicated logits") {
  ClassifierConfig cfg = ClassifierConfig::tiny(1, 16, 16, 3);
  ClassifierModel m = init_classifier(cfg, 3);
  LabeledDataset ds = make_synthetic(2, 5);
  Tensor dup = Tensor::zeros({2, 1, 16, 16});
  std::copy_n(ds.images.raw(), 256, dup.raw());
  std::copy_n(ds.images.raw(), 256, dup.raw() + 256);
  Tensor logits = predict(m, dup);
  for (std::int64_t k = 0; k < 3; ++k)
    CHECK(logits.data()[k] == logits.data()[3 + k]);
}

TEST_CASE("input shape mismatch is a dimension error") {
  ClassifierConfig cfg = ClassifierConfig::tiny(1, 16, 16, 2);
  ClassifierModel m = init_classifier(cfg, 4);
  CHECK_THROWS_AS(predict(m, Tensor::zeros({1, 1, 8, 8})), DimensionError);
}

TEST_CASE("cross-entropy gradient w.r.t. input pixels matches finite differences") {
  ClassifierConfig cfg = ClassifierConfig::tiny(1, 8, 8, 3);
  cfg.conv_channels = {4};
  cfg.hidden = 16;
  ClassifierModel m = init_classifier(cfg, 7);
  SplitMix64 rng(9);
  Tensor x = Tensor::zeros({1, 1, 8, 8});
  for (std::int64_t i = 0; i < x.numel(); ++i)
    x.data()[i] = static_cast<float>(rng.uniform(0.1, 0.9));
  auto md = m.cast<double>();
  auto f = [&](const auto& t) {
    using S = std::decay_t<decltype(t.data()[0])>;
    if constexpr (std::is_same_v<S, float>)
      return softmax_cross_entropy(predict(m, t), {1});
    else
      return softmax_cross_entropy(predict(md, t), {1});
  };
  CHECK(grad_check(f, x, 1e-3) < 1e-3);
}

TEST_CASE("synthetic fixture trains above 95 percent") {
  LabeledDataset ds = make_synthetic(240, 6);
  ClassifierConfig cfg = ClassifierConfig::tiny(1, 16, 16, 2);
  TrainLog log;
  // ~15 batches/epoch x 14 epochs ~ 200 steps
  ClassifierModel m = train_classifier(cfg, ds, 14, 1e-3f, 11, &log, 16);
  CHECK(log.epoch_accuracy.back() >= 0.95);
  CHECK(accuracy(m, ds) >= 0.95);
}

TEST_CASE("training is deterministic under a fixed seed") {
  LabeledDataset ds = make_synthetic(64, 8);
  ClassifierConfig cfg = ClassifierConfig::tiny(1, 16, 16, 2);
  ClassifierModel a = train_classifier(cfg, ds, 2, 1e-3f, 21, nullptr, 16);
  ClassifierModel b = train_classifier(cfg, ds, 2, 1e-3f, 21, nullptr, 16);
  auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(std::memcmp(pa[i].raw(), pb[i].raw(),
                      static_cast<std::size_t>(pa[i].numel()) * 4) == 0);
}

TEST_CASE("accuracy with the identity defense equals plain accuracy") {
  LabeledDataset ds = make_synthetic(32, 9);
  ClassifierConfig cfg = ClassifierConfig::tiny(1, 16, 16, 2);
  ClassifierModel m = init_classifier(cfg, 5);
  DefenseFn identity = [](const Tensor& b, std::int64_t) { return b; };
  CHECK(accuracy(m, ds) == accuracy(m, ds, &identity));
}

TEST_CASE("degenerate and chance-level accuracy") {
  LabeledDataset one = make_synthetic(2, 10);
  ClassifierConfig cfg = ClassifierConfig::tiny(1, 16, 16, 2);
  ClassifierModel m = train_classifier(cfg, one, 30, 1e-3f, 3, nullptr, 2);
  LabeledDataset single = slice_dataset(one, 0, 1);
  CHECK(accuracy(m, single) == 1.0);

  // randomly permuted labels on a 10-class set sit near chance level
  LabeledDataset digits = make_digits(600, 13);
  ClassifierConfig dcfg = ClassifierConfig::tiny(1, 28, 28, 10);
  ClassifierModel dm = train_classifier(dcfg, digits, 2, 1e-3f, 17, nullptr, 64);
  std::vector<std::int32_t> permuted = digits.labels;
  SplitMix64 rng(99);
  for (std::int64_t i = static_cast<std::int64_t>(permuted.size()) - 1; i > 0; --i)
    std::swap(permuted[static_cast<std::size_t>(i)],
              permuted[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
  const double chance = accuracy(dm, digits.images, permuted);
  CHECK(chance < 0.2);
}

TEST_CASE("checkpoint save/load reproduces predictions bit-exactly") {
  ClassifierConfig cfg = ClassifierConfig::tiny(1, 16, 16, 2);
  ClassifierModel m = init_classifier(cfg, 31);
  const std::string path = (std::filesystem::temp_directory_path() / "rsd_cls.ckpt").string();
  save_classifier(path, m);
  ClassifierModel back = load_classifier(path);
  LabeledDataset ds = make_synthetic(4, 12);
  Tensor la = predict(m, ds.images), lb = predict(back, ds.images);
  CHECK(std::memcmp(la.raw(), lb.raw(), static_cast<std::size_t>(la.numel()) * 4) == 0);
}
