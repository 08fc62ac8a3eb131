#include <doctest.h>

#include <cmath>
#include <cstring>

#include "rsd/grad_check.hpp"
#include "rsd/ops.hpp"
#include "rsd/optim.hpp"

using namespace rsd;

namespace {

Tensor random_tensor(Shape shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

/// Keeps every coordinate at least `margin` away from `kink`.
Tensor random_away_from(Shape shape, SplitMix64& rng, float kink, float margin) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    float& v = t.data()[i];
    if (std::abs(v - kink) < margin) v = kink + (v >= kink ? margin : -margin) * 2.0f;
  }
  return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.raw(), b.raw(), static_cast<std::size_t>(a.numel()) * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("matmul basics and brute-force oracle") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(bit_equal(matmul(eye, a), a));

  Tensor sel = Tensor::from({1, 2}, {1, 0});
  Tensor col = Tensor::from({2, 1}, {0, 5});
  CHECK(matmul(sel, col).item() == 0.0f);

  SplitMix64 rng(11);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor y = random_tensor({4, 2}, rng);
  Tensor z = matmul(x, y);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double acc = 0.0;  // independent triple-loop oracle
      for (int k = 0; k < 4; ++k)
        acc += static_cast<double>(x.data()[i * 4 + k]) * static_cast<double>(y.data()[k * 2 + j]);
      CHECK(z.data()[i * 2 + j] == doctest::Approx(acc).epsilon(1e-5));
    }

  CHECK_THROWS_AS(matmul(x, x), DimensionError);
}

TEST_CASE("conv2d examples and sliding-window oracle") {
  Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor k22 = Tensor::full({1, 1, 2, 2}, 1.0f);
  Tensor out = conv2d(ones, k22, 1, 0);
  CHECK(out.shape() == Shape{1, 1, 2, 2});
  for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 4.0f);

  SplitMix64 rng(3);
  Tensor x = random_tensor({1, 1, 5, 5}, rng);
  Tensor ident = Tensor::from({1, 1, 1, 1}, {1.0f});
  CHECK(bit_equal(reshape(conv2d(x, ident, 1, 0), x.shape()), x));

  Tensor k = random_tensor({1, 1, 3, 3}, rng);
  Tensor y = conv2d(x, k, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int u = 0; u < 3; ++u)
        for (int v = 0; v < 3; ++v)
          acc += static_cast<double>(x.data()[(i + u) * 5 + (j + v)]) *
                 static_cast<double>(k.data()[u * 3 + v]);
      CHECK(y.data()[i * 3 + j] == doctest::Approx(acc).epsilon(1e-5));
    }

  // rank-3 input convention
  Tensor x3 = random_tensor({1, 5, 5}, rng);
  CHECK(conv2d(x3, k, 1, 0).shape() == Shape{1, 3, 3});
  // stride/padding shape arithmetic
  CHECK(conv2d(x, k, 2, 1).shape() == Shape{1, 1, 3, 3});
  Tensor kbig = Tensor::full({1, 1, 7, 7}, 1.0f);
  CHECK_THROWS_AS(conv2d(x, kbig, 1, 0), DimensionError);
}

TEST_CASE("elementwise kinds") {
  Tensor x = Tensor::from({3}, {-1, 0, 2});
  Tensor r = relu(x);
  CHECK(r.data()[0] == 0.0f);
  CHECK(r.data()[1] == 0.0f);
  CHECK(r.data()[2] == 2.0f);

  CHECK(tanh(Tensor::scalar(0.0f)).item() == 0.0f);

  Tensor c = clamp(Tensor::from({3}, {-0.2f, 0.5f, 1.3f}), 0.0f, 1.0f);
  CHECK(c.data()[0] == 0.0f);
  CHECK(c.data()[1] == 0.5f);
  CHECK(c.data()[2] == 1.0f);

  Tensor a = Tensor::from({2}, {1, 2});
  Tensor bad = Tensor::from({3}, {1, 2, 3});
  CHECK_THROWS_AS(add(a, bad), DimensionError);
  CHECK_THROWS_AS(mul(a, bad), DimensionError);
}

TEST_CASE("losses") {
  Tensor x = Tensor::from({2}, {1, 3});
  CHECK(l1_loss(x, x).item() == 0.0f);
  CHECK(l1_loss(x, Tensor::from({2}, {0, 1})).item() == doctest::Approx(1.5));

  Tensor logits = Tensor::from({1, 2}, {0, 0});
  CHECK(softmax_cross_entropy(logits, {0}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {2}), DomainError);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {-1}), DomainError);
}

TEST_CASE("backward basics") {
  // f(x) = x*x at 3 -> 6
  Tensor x = Tensor::scalar(3.0f, true);
  backward(mul(x, x));
  CHECK(x.grad()[0] == doctest::Approx(6.0));

  // dead relu branch
  Tensor y = Tensor::scalar(1.0f, true);
  backward(relu(mul_scalar(y, -1.0f)));
  CHECK(y.grad()[0] == 0.0f);

  // non-scalar root is a usage error
  Tensor v = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(add(v, v)), UsageError);

  // fan-out: x used twice accumulates both branch gradients
  Tensor z = Tensor::scalar(2.0f, true);
  backward(add(mul(z, z), mul_scalar(z, 3.0f)));  // d/dz (z^2 + 3z) = 2z + 3 = 7
  CHECK(z.grad()[0] == doctest::Approx(7.0));

  // repeated backward without zeroing accumulates
  Tensor w = Tensor::scalar(1.0f, true);
  backward(mul(w, w));
  backward(mul(w, w));
  CHECK(w.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("composed conv-relu-l1 pipeline gradient matches finite differences") {
  SplitMix64 rng(17);
  Tensor x = random_tensor({1, 1, 6, 6}, rng, 0.1, 0.9);
  Tensor kf = random_tensor({2, 1, 3, 3}, rng);
  Tensor target = random_tensor({2, 4, 4}, rng, -2.0, -1.0);  // keeps |pred-target| off the L1 kink

  auto f = [&](const auto& t) {
    using S = std::decay_t<decltype(t.data()[0])>;
    auto k = kf.template cast<S>();
    auto tg = reshape(target.template cast<S>(), {std::int64_t(1), 2, 4, 4});
    auto h = relu(conv2d(t, k, 1, 0));
    return l1_loss(h, tg);
  };
  CHECK(grad_check(f, x, 1e-3) < 1e-3);
}

TEST_CASE("adam recurrence") {
  // first step: g=1, lr=0.1, betas (0,0.9) -> update ~ -0.1
  Tensor p = Tensor::scalar(0.0f, true);
  Adam opt({p}, {.lr = 0.1f});
  backward(mul_scalar(p, 1.0f));  // dL/dp = 1
  opt.step();
  CHECK(p.data()[0] == doctest::Approx(-0.1).epsilon(1e-4));

  // zero gradient is a no-op on parameters
  Tensor q = Tensor::from({3}, {1, 2, 3}, true);
  Adam opt2({q}, {.lr = 0.5f});
  opt2.step();  // no grad accumulated = zero gradient
  CHECK(q.data()[0] == 1.0f);
  CHECK(q.data()[1] == 2.0f);
  CHECK(q.data()[2] == 3.0f);

  // two steps with constant gradient match a hand-rolled recurrence
  const double lr = 0.05, b1 = 0.0, b2 = 0.9, eps = 1e-8, g = 0.7;
  Tensor r = Tensor::scalar(2.0f, true);
  Adam opt3({r}, {.lr = static_cast<float>(lr)});
  double ref = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    r.clear_grad();
    backward(mul_scalar(r, static_cast<float>(g)));
    opt3.step();
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    ref -= lr * mh / (std::sqrt(vh) + eps);
    CHECK(r.data()[0] == doctest::Approx(ref).epsilon(1e-6));
  }
}

TEST_CASE("grad_check oracle behaviors") {
  SplitMix64 rng(23);
  Tensor x = random_tensor({8}, rng);
  CHECK(grad_check([](const auto& t) { return sum(mul(t, t)); }, x, 1e-4) < 1e-6);

  Tensor y = random_away_from({8}, rng, 0.0f, 0.05f);
  auto l1f = [](const auto& t) {
    using S = std::decay_t<decltype(t.data()[0])>;
    return l1_loss(t, TensorT<S>::zeros(t.shape()));
  };
  CHECK(grad_check(l1f, y, 1e-3) < 1e-4);
}

TEST_CASE("bilinear grid query gradient w.r.t. pixel values") {
  // query at fixed non-half-integer coordinates, differentiable in the image
  SplitMix64 rng(29);
  Tensor img = random_tensor({1, 1, 5, 5}, rng, 0.0, 1.0);
  const double qu = 1.3, qv = 2.6;
  const std::int32_t i0 = 1, j0 = 2;
  const float fu = static_cast<float>(qu - i0), fv = static_cast<float>(qv - j0);

  auto f = [&](const auto& t) {
    using S = std::decay_t<decltype(t.data()[0])>;
    TensorT<S> acc;
    const float wts[4] = {(1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv};
    for (int n = 0; n < 4; ++n) {
      std::vector<std::int32_t> r{static_cast<std::int32_t>(i0 + (n >> 1))};
      std::vector<std::int32_t> c{static_cast<std::int32_t>(j0 + (n & 1))};
      TensorT<S> g = gather_hw(t, r, c, 1, 1);
      TensorT<S> term = mul_scalar(g, static_cast<S>(wts[n]));
      acc = acc.defined() ? add(acc, term) : term;
    }
    return sum(acc);
  };
  CHECK(grad_check(f, img, 1e-3) < 1e-3);
}

TEST_CASE("every differentiable primitive passes finite-difference checks") {
  SplitMix64 rng(31);
  double worst = 0.0;
  auto record = [&](double e) {
    worst = std::max(worst, e);
    CHECK(e < 1e-3);
  };

  // >= 100 non-degenerate points per primitive across repeated draws
  for (int rep = 0; rep < 2; ++rep) {
    Tensor a = random_tensor({4, 16}, rng);
    Tensor b = random_tensor({4, 16}, rng);
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(add(t, b.template cast<S>()));
    }, a));
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(sub(b.template cast<S>(), t));
    }, a));
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(mul(t, b.template cast<S>()));
    }, a));
    record(grad_check([](const auto& t) { return mean(add_scalar(t, decltype(t.item())(0.7))); }, a));
    record(grad_check([](const auto& t) { return mean(mul_scalar(t, decltype(t.item())(-1.3))); }, a));
    record(grad_check([](const auto& t) { return mean(tanh(t)); }, a));

    Tensor ar = random_away_from({4, 16}, rng, 0.0f, 0.05f);
    record(grad_check([](const auto& t) { return mean(relu(t)); }, ar));

    Tensor ac = random_away_from(random_away_from({4, 16}, rng, -0.5f, 0.05f).shape(), rng, -0.5f, 0.05f);
    for (std::int64_t i = 0; i < ac.numel(); ++i)  // keep away from the 0.5 edge too
      if (std::abs(ac.data()[i] - 0.5f) < 0.05f) ac.data()[i] += 0.12f;
    record(grad_check([](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(clamp(t, S(-0.5), S(0.5)));
    }, ac));

    Tensor m1 = random_tensor({3, 5}, rng), m2 = random_tensor({5, 4}, rng);
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(matmul(t, m2.template cast<S>()));
    }, m1));
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(matmul(m1.template cast<S>(), t));
    }, m2));

    Tensor rv = random_tensor({4}, rng);
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(add_rowvec(matmul(m1.template cast<S>(), m2.template cast<S>()), t));
    }, rv));

    Tensor x4 = random_tensor({2, 3, 4, 4}, rng);
    Tensor kk = random_tensor({2, 3, 3, 3}, rng);
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(conv2d(t, kk.template cast<S>(), 1, 1));
    }, x4));
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(conv2d(x4.template cast<S>(), t, 1, 1));
    }, kk));

    Tensor cb = random_tensor({3}, rng);
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(add_channel_bias(t, cb.template cast<S>()));
    }, x4));
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(add_channel_bias(x4.template cast<S>(), t));
    }, cb));

    record(grad_check([](const auto& t) { return mean(avg_pool2(t)); }, x4));
    record(grad_check([](const auto& t) { return mean(unfold3x3(t)); }, x4));
    record(grad_check([](const auto& t) { return mean(reshape(t, {2, 48})); }, x4));
    record(grad_check([](const auto& t) { return sum(t); }, x4));
    record(grad_check([](const auto& t) { return mean(slice_channels(t, 1, 2)); }, x4));

    Tensor pw = random_tensor({2, 3}, rng), pb = random_tensor({2}, rng);
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(pointwise_linear(t, pw.template cast<S>(), pb.template cast<S>()));
    }, x4));
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(pointwise_linear(x4.template cast<S>(), t, pb.template cast<S>()));
    }, pw));
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(pointwise_linear(x4.template cast<S>(), pw.template cast<S>(), t));
    }, pb));

    Tensor other = random_tensor({2, 2, 4, 4}, rng);
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(concat_channels(t, other.template cast<S>()));
    }, x4));

    Tensor sc = random_tensor({2, 1, 4, 4}, rng);
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(scale_channels(t, sc.template cast<S>()));
    }, x4));
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return mean(scale_channels(x4.template cast<S>(), t));
    }, sc));

    std::vector<std::int32_t> rows, cols;
    for (int i = 0; i < 2 * 9; ++i) {
      rows.push_back(static_cast<std::int32_t>(rng.below(4)));
      cols.push_back(static_cast<std::int32_t>(rng.below(4)));
    }
    record(grad_check([&](const auto& t) { return mean(gather_hw(t, rows, cols, 3, 3)); }, x4));

    Tensor logits = random_tensor({4, 5}, rng);
    std::vector<std::int32_t> ys{0, 2, 4, 1};
    record(grad_check([&](const auto& t) { return softmax_cross_entropy(t, ys); }, logits));

    Tensor pred = random_away_from({4, 16}, rng, 0.0f, 0.05f);  // pred-target away from kink
    record(grad_check([&](const auto& t) {
      using S = std::decay_t<decltype(t.data()[0])>;
      return l1_loss(t, TensorT<S>::zeros(t.shape()));
    }, pred));
  }
  MESSAGE("worst relative error across primitives: " << worst);
}

TEST_CASE("primitives are deterministic within one build") {
  SplitMix64 rng(41);
  Tensor a = random_tensor({8, 8}, rng), b = random_tensor({8, 8}, rng);
  CHECK(bit_equal(matmul(a, b), matmul(a, b)));
  Tensor x = random_tensor({2, 3, 8, 8}, rng), k = random_tensor({4, 3, 3, 3}, rng);
  CHECK(bit_equal(conv2d(x, k, 1, 1), conv2d(x, k, 1, 1)));
  CHECK(bit_equal(tanh(a), tanh(a)));
}

TEST_CASE("non-finite results are rejected") {
  Tensor big = Tensor::full({4}, 3e38f);
  CHECK_THROWS_AS(add(big, big), NumericsError);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK_THROWS_AS(t.item(), UsageError);
}
