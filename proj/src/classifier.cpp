#include "rsd/classifier.hpp"

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

ClassifierModel init_classifier(const ClassifierConfig& cfg, std::uint64_t seed, bool requires_grad) {
  if (cfg.conv_channels.empty()) throw ConfigError("classifier: need at least one conv block");
  SplitMix64 rng(seed);
  ClassifierModel m;
  m.config = cfg;
  std::int64_t in_c = cfg.in_channels;
  for (auto out_c : cfg.conv_channels) {
    m.conv_w.push_back(kaiming_uniform({out_c, in_c, 3, 3}, in_c * 9, rng, requires_grad));
    m.conv_b.push_back(Tensor::zeros({out_c}, requires_grad));
    in_c = out_c;
  }
  const std::int64_t flat = cfg.flat_features();
  m.fc1_w = kaiming_uniform({flat, cfg.hidden}, flat, rng, requires_grad);
  m.fc1_b = Tensor::zeros({cfg.hidden}, requires_grad);
  m.fc2_w = kaiming_uniform({cfg.hidden, cfg.num_classes}, cfg.hidden, rng, requires_grad);
  m.fc2_b = Tensor::zeros({cfg.num_classes}, requires_grad);
  return m;
}

ClassifierModel train_classifier(const ClassifierConfig& cfg, const LabeledDataset& dataset,
                                 std::int64_t epochs, float lr, std::uint64_t seed, TrainLog* log,
                                 std::int64_t batch_size) {
  dataset.validate();
  if (dataset.channels() != cfg.in_channels || dataset.height() != cfg.in_h ||
      dataset.width() != cfg.in_w)
    throw ConfigError("train_classifier: dataset shape does not match config");
  ClassifierModel m = init_classifier(cfg, seed, true);
  Adam opt(m.parameters(), {.lr = lr});
  for (std::int64_t e = 0; e < epochs; ++e) {
    BatchIter it(dataset, batch_size, derive_seed(seed, 0x5eed0000ULL + static_cast<std::uint64_t>(e)));
    Tensor xb;
    std::vector<std::int32_t> yb;
    double loss_sum = 0.0;
    std::int64_t nb = 0, correct = 0, total = 0;
    while (it.next(xb, yb)) {
      Tensor logits = predict(m, xb);
      Tensor loss = softmax_cross_entropy(logits, yb);
      if (!std::isfinite(loss.item())) throw TrainError("train_classifier: loss diverged");
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.item();
      ++nb;
      for (std::int64_t i = 0; i < logits.dim(0); ++i) {
        Eigen::Map<const Array<float>> row(logits.raw() + i * cfg.num_classes, cfg.num_classes);
        Eigen::Index arg;
        row.maxCoeff(&arg);
        if (static_cast<std::int32_t>(arg) == yb[static_cast<std::size_t>(i)]) ++correct;
        ++total;
      }
    }
    if (log) {
      log->epoch_loss.push_back(loss_sum / static_cast<double>(nb));
      log->epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(total));
    }
  }
  return m;
}

std::vector<std::int32_t> predict_classes(const ClassifierModel& m, const Tensor& images) {
  Tensor logits = predict(m, images);
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  std::vector<std::int32_t> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Eigen::Map<const Array<float>> row(logits.raw() + i * k, k);
    Eigen::Index arg;
    row.maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(arg);
  }
  return out;
}

double accuracy(const ClassifierModel& m, const Tensor& images, const std::vector<std::int32_t>& labels,
                const DefenseFn* defense, std::int64_t batch_size) {
  const std::int64_t n = images.dim(0);
  if (static_cast<std::int64_t>(labels.size()) != n) throw DimensionError("accuracy: label count mismatch");
  if (n == 0) return 0.0;
  const std::int64_t chw = images.numel() / n;
  const std::int64_t n_batches = (n + batch_size - 1) / batch_size;
  std::vector<std::int64_t> correct(static_cast<std::size_t>(n_batches), 0);
  parallel_for(n_batches, [&](std::int64_t b) {
    const std::int64_t from = b * batch_size;
    const std::int64_t count = std::min(batch_size, n - from);
    Tensor batch = Tensor::zeros({count, images.dim(1), images.dim(2), images.dim(3)});
    std::copy_n(images.raw() + from * chw, count * chw, batch.raw());
    if (defense && *defense) batch = (*defense)(batch, from);
    std::vector<std::int32_t> pred = predict_classes(m, batch);
    std::int64_t c = 0;
    for (std::int64_t i = 0; i < count; ++i)
      if (pred[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(from + i)]) ++c;
    correct[static_cast<std::size_t>(b)] = c;
  });
  std::int64_t total = 0;
  for (auto c : correct) total += c;
  return static_cast<double>(total) / static_cast<double>(n);
}

double accuracy(const ClassifierModel& m, const LabeledDataset& ds, const DefenseFn* defense,
                std::int64_t batch_size) {
  return accuracy(m, ds.images, ds.labels, defense, batch_size);
}

void save_classifier(const std::string& path, const ClassifierModel& m) {
  NamedTensors ts;
  for (std::size_t i = 0; i < m.conv_w.size(); ++i) {
    ts.emplace_back("conv" + std::to_string(i) + ".w", m.conv_w[i]);
    ts.emplace_back("conv" + std::to_string(i) + ".b", m.conv_b[i]);
  }
  ts.emplace_back("fc1.w", m.fc1_w);
  ts.emplace_back("fc1.b", m.fc1_b);
  ts.emplace_back("fc2.w", m.fc2_w);
  ts.emplace_back("fc2.b", m.fc2_b);
  save_checkpoint(path, ts);

  nlohmann::json j;
  j["conv_channels"] = m.config.conv_channels;
  j["hidden"] = m.config.hidden;
  j["num_classes"] = m.config.num_classes;
  j["in_channels"] = m.config.in_channels;
  j["in_h"] = m.config.in_h;
  j["in_w"] = m.config.in_w;
  std::ofstream os(path + ".json");
  if (!os) throw IoError("cannot open for write: " + path + ".json");
  os << j.dump(2) << "\n";
}

ClassifierModel load_classifier(const std::string& path, bool requires_grad) {
  std::ifstream is(path + ".json");
  if (!is) throw IoError("cannot open: " + path + ".json");
  nlohmann::json j;
  is >> j;
  ClassifierConfig cfg;
  cfg.conv_channels = j.at("conv_channels").get<std::vector<std::int64_t>>();
  cfg.hidden = j.at("hidden").get<std::int64_t>();
  cfg.num_classes = j.at("num_classes").get<std::int64_t>();
  cfg.in_channels = j.at("in_channels").get<std::int64_t>();
  cfg.in_h = j.at("in_h").get<std::int64_t>();
  cfg.in_w = j.at("in_w").get<std::int64_t>();

  NamedTensors ts = load_checkpoint(path);
  auto find = [&](const std::string& name) -> Tensor {
    for (auto& [n, t] : ts)
      if (n == name) return requires_grad ? t.clone(true) : t;
    throw FormatError("checkpoint missing tensor: " + name);
  };
  ClassifierModel m;
  m.config = cfg;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    m.conv_w.push_back(find("conv" + std::to_string(i) + ".w"));
    m.conv_b.push_back(find("conv" + std::to_string(i) + ".b"));
  }
  m.fc1_w = find("fc1.w");
  m.fc1_b = find("fc1.b");
  m.fc2_w = find("fc2.w");
  m.fc2_b = find("fc2.b");
  return m;
}

}  // namespace rsd
