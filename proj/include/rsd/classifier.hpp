#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsd/dataset.hpp"
#include "rsd/defense_fn.hpp"
#include "rsd/ops.hpp"

namespace rsd {

/// Stack of conv3x3(stride 1, pad 1) + relu + 2x2 average pool blocks,
/// then dense -> relu -> dense logits.
struct ClassifierConfig {
  std::vector<std::int64_t> conv_channels{16, 32};
  std::int64_t hidden = 128;
  std::int64_t num_classes = 10;
  std::int64_t in_channels = 1;
  std::int64_t in_h = 28;
  std::int64_t in_w = 28;

  static ClassifierConfig small(std::int64_t in_c, std::int64_t h, std::int64_t w,
                                std::int64_t classes) {
    return {{16, 32}, 128, classes, in_c, h, w};
  }
  static ClassifierConfig tiny(std::int64_t in_c, std::int64_t h, std::int64_t w,
                               std::int64_t classes) {
    return {{8, 16}, 64, classes, in_c, h, w};
  }

  std::int64_t flat_features() const {
    std::int64_t h = in_h, w = in_w;
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
      if (h % 2 || w % 2) throw DimensionError("classifier: spatial dims must halve cleanly");
      h /= 2;
      w /= 2;
    }
    return conv_channels.empty() ? in_channels * h * w : conv_channels.back() * h * w;
  }
};

template <typename S>
struct ClassifierModelT {
  ClassifierConfig config;
  std::vector<TensorT<S>> conv_w, conv_b;
  TensorT<S> fc1_w, fc1_b, fc2_w, fc2_b;

  std::vector<TensorT<S>> parameters() const {
    std::vector<TensorT<S>> ps;
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
      ps.push_back(conv_w[i]);
      ps.push_back(conv_b[i]);
    }
    ps.push_back(fc1_w);
    ps.push_back(fc1_b);
    ps.push_back(fc2_w);
    ps.push_back(fc2_b);
    return ps;
  }

  template <typename T>
  ClassifierModelT<T> cast() const {
    ClassifierModelT<T> m;
    m.config = config;
    for (const auto& w : conv_w) m.conv_w.push_back(w.template cast<T>());
    for (const auto& b : conv_b) m.conv_b.push_back(b.template cast<T>());
    m.fc1_w = fc1_w.template cast<T>();
    m.fc1_b = fc1_b.template cast<T>();
    m.fc2_w = fc2_w.template cast<T>();
    m.fc2_b = fc2_b.template cast<T>();
    return m;
  }

  ClassifierModelT<S> frozen() const {
    ClassifierModelT<S> m;
    m.config = config;
    for (const auto& w : conv_w) m.conv_w.push_back(w.detach());
    for (const auto& b : conv_b) m.conv_b.push_back(b.detach());
    m.fc1_w = fc1_w.detach();
    m.fc1_b = fc1_b.detach();
    m.fc2_w = fc2_w.detach();
    m.fc2_b = fc2_b.detach();
    return m;
  }
};

using ClassifierModel = ClassifierModelT<float>;

/// Kaiming-uniform fan-in init, zero biases, seeded.
ClassifierModel init_classifier(const ClassifierConfig& cfg, std::uint64_t seed,
                                bool requires_grad = true);

/// Logits [N,num_classes]; pure function of (model, images), differentiable
/// w.r.t. images and parameters.
template <typename S>
TensorT<S> predict(const ClassifierModelT<S>& m, const TensorT<S>& images) {
  if (images.rank() != 4 || images.dim(1) != m.config.in_channels ||
      images.dim(2) != m.config.in_h || images.dim(3) != m.config.in_w)
    throw DimensionError("predict: images " + shape_str(images.shape()) + " do not match config");
  TensorT<S> h = images;
  for (std::size_t i = 0; i < m.conv_w.size(); ++i) {
    h = conv2d(h, m.conv_w[i], 1, 1);
    h = add_channel_bias(h, m.conv_b[i]);
    h = relu(h);
    h = avg_pool2(h);
  }
  h = reshape(h, {h.dim(0), h.numel() / h.dim(0)});
  h = relu(add_rowvec(matmul(h, m.fc1_w), m.fc1_b));
  return add_rowvec(matmul(h, m.fc2_w), m.fc2_b);
}

struct TrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
};

/// Adam + cross-entropy training. Throws TrainError on NaN loss.
ClassifierModel train_classifier(const ClassifierConfig& cfg, const LabeledDataset& dataset,
                                 std::int64_t epochs, float lr, std::uint64_t seed,
                                 TrainLog* log = nullptr, std::int64_t batch_size = 128);

std::vector<std::int32_t> predict_classes(const ClassifierModel& m, const Tensor& images);

/// Fraction of argmax-correct predictions; if a defense is given every
/// image is passed through it first.
double accuracy(const ClassifierModel& m, const Tensor& images, const std::vector<std::int32_t>& labels,
                const DefenseFn* defense = nullptr, std::int64_t batch_size = 64);
double accuracy(const ClassifierModel& m, const LabeledDataset& ds,
                const DefenseFn* defense = nullptr, std::int64_t batch_size = 64);

void save_classifier(const std::string& path, const ClassifierModel& m);
ClassifierModel load_classifier(const std::string& path, bool requires_grad = false);

}  // namespace rsd
