#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "iars/gradcheck.hpp"
#include "iars/ops.hpp"
#include "iars/random.hpp"
#include "iars/tensor.hpp"

using iars::Tensor;

namespace {

template <typename T>
Tensor<T> random_tensor(iars::Shape shape, std::uint64_t seed, T lo = T(-1), T hi = T(1)) {
  auto rng = iars::make_rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t = Tensor<T>::zeros(shape);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

// Tensor of distinct values in random order, spaced far enough apart that a
// finite-difference step can never flip a max-pool argmax.
template <typename T>
Tensor<T> distinct_tensor(iars::Shape shape, std::uint64_t seed) {
  Tensor<T> t = Tensor<T>::zeros(shape);
  std::vector<T> vals(t.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = T(0.01) * static_cast<T>(i) - T(1);
  auto rng = iars::make_rng(seed);
  std::shuffle(vals.begin(), vals.end(), rng);
  t.data() = vals;
  return t;
}

// Plain six-loop convolution used as the reference implementation.
template <typename T>
Tensor<T> conv_oracle(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b, int stride,
                      int pad) {
  const int N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;
  Tensor<T> out = Tensor<T>::zeros({N, O, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int oc = 0; oc < O; ++oc)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = b.data()[oc];
          for (int c = 0; c < C; ++c)
            for (int ki = 0; ki < KH; ++ki)
              for (int kj = 0; kj < KW; ++kj) {
                const int ih = oh * stride + ki - pad;
                const int iw = ow * stride + kj - pad;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += static_cast<double>(in.at4(n, c, ih, iw)) *
                       static_cast<double>(w.at4(oc, c, ki, kj));
              }
          out.data()[((static_cast<std::size_t>(n) * O + oc) * OH + oh) * OW + ow] =
              static_cast<T>(acc);
        }
  return out;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("tensor basics") {
  auto t = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t[4] == 5.0);
  CHECK(t.finite());
  t[0] = std::nan("");
  CHECK_FALSE(t.finite());

  auto c = t.clone();
  CHECK_FALSE(c.same_storage(t));
  auto alias = t;
  CHECK(alias.same_storage(t));

  CHECK_THROWS_AS(Tensor<double>::from({2, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("conv2d matches loop oracle over strides and paddings") {
  struct Case {
    iars::Shape in, w;
    int stride, pad;
  };
  const Case cases[] = {
      {{1, 1, 5, 5}, {1, 1, 3, 3}, 1, 0},
      {{2, 3, 8, 8}, {4, 3, 3, 3}, 1, 1},
      {{1, 2, 9, 9}, {3, 2, 3, 3}, 2, 1},
      {{2, 4, 9, 9}, {2, 4, 1, 1}, 1, 0},
      {{1, 1, 7, 9}, {2, 1, 5, 3}, 2, 2},
  };
  int seed = 100;
  for (const auto& k : cases) {
    auto x = random_tensor<double>(k.in, seed++);
    auto w = random_tensor<double>(k.w, seed++);
    auto b = random_tensor<double>({k.w[0]}, seed++);
    auto got = iars::conv2d(x, w, b, k.stride, k.pad);
    auto want = conv_oracle(x, w, b, k.stride, k.pad);
    CHECK(max_abs_diff(got, want) < 1e-10);
  }
}

TEST_CASE("conv2d rejects malformed inputs") {
  auto x = Tensor<double>::zeros({1, 2, 4, 4});
  auto w = Tensor<double>::zeros({1, 3, 3, 3});
  auto b = Tensor<double>::zeros({1});
  CHECK_THROWS_AS(iars::conv2d(x, w, b), std::invalid_argument);  // channel mismatch
  auto w2 = Tensor<double>::zeros({2, 2, 3, 3});
  CHECK_THROWS_AS(iars::conv2d(x, w2, b), std::invalid_argument);  // bias length
  auto b2 = Tensor<double>::zeros({2});
  CHECK_THROWS_AS(iars::conv2d(x, w2, b2, 3, 0), std::invalid_argument);  // non-integral output
  CHECK_THROWS_AS(iars::conv2d(Tensor<double>::zeros({4, 4}), w2, b2), std::invalid_argument);
}

TEST_CASE("max_pool_2x2 matches per-window scan and records argmax") {
  auto x = random_tensor<double>({2, 3, 6, 8}, 42);
  auto [out, idx] = iars::max_pool_2x2(x);
  REQUIRE(out.shape() == iars::Shape{2, 3, 3, 4});
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int oh = 0; oh < 3; ++oh)
        for (int ow = 0; ow < 4; ++ow) {
          double best = -1e300;
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj)
              best = std::max(best, x.at4(n, c, 2 * oh + di, 2 * ow + dj));
          CHECK(out.at4(n, c, oh, ow) == best);
        }
  // argmax positions land inside their window
  for (std::size_t p = 0; p < idx.idx.size(); ++p) {
    const int pos = idx.idx[p];
    const int ow = static_cast<int>(p % 4), oh = static_cast<int>((p / 4) % 3);
    CHECK(pos / 8 / 2 == oh);
    CHECK(pos % 8 / 2 == ow);
  }
}

TEST_CASE("max_pool_2x2 breaks ties toward the first row-major position") {
  auto x = Tensor<double>::from({1, 1, 2, 2}, {5, 5, 5, 5});
  auto [out, idx] = iars::max_pool_2x2(x);
  CHECK(out[0] == 5.0);
  CHECK(idx.idx[0] == 0);
  CHECK_THROWS_AS(iars::max_pool_2x2(Tensor<double>::zeros({1, 1, 3, 4})),
                  std::invalid_argument);
}

TEST_CASE("max_unpool_2x2 inverts pooling up to the zero mask") {
  auto x = distinct_tensor<double>({1, 2, 4, 6}, 7);
  auto [pooled, idx] = iars::max_pool_2x2(x);
  auto restored = iars::max_unpool_2x2(pooled, idx, 4, 6);
  REQUIRE(restored.shape() == x.shape());
  // every restored nonzero equals the original value at that position, and
  // exactly one cell per 2x2 window is nonzero
  int nonzero = 0;
  for (std::size_t i = 0; i < restored.size(); ++i)
    if (restored.data()[i] != 0.0) {
      CHECK(restored.data()[i] == x.data()[i]);
      ++nonzero;
    }
  CHECK(nonzero == static_cast<int>(pooled.size()));

  CHECK_THROWS_AS(iars::max_unpool_2x2(pooled, idx, 8, 6), std::invalid_argument);
  auto bad = idx;
  bad.idx[0] = 23;  // outside window (0,0)
  CHECK_THROWS_AS(iars::max_unpool_2x2(pooled, bad, 4, 6), std::invalid_argument);
}

TEST_CASE("upsample_nearest_2x replicates 2x2 blocks") {
  auto x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4});
  auto up = iars::upsample_nearest_2x(x);
  REQUIRE(up.shape() == iars::Shape{1, 1, 4, 4});
  const std::vector<double> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  CHECK(up.data() == want);
}

TEST_CASE("elementwise ops and concat") {
  auto a = Tensor<double>::from({1, 1, 1, 3}, {1, -2, 3});
  auto b = Tensor<double>::from({1, 1, 1, 3}, {10, 20, 30});
  CHECK(iars::add(a, b).data() == std::vector<double>{11, 18, 33});
  CHECK(iars::mul(a, b).data() == std::vector<double>{10, -40, 90});
  CHECK(iars::relu(a).data() == std::vector<double>{1, 0, 3});
  CHECK(iars::scale(a, 2.0).data() == std::vector<double>{2, -4, 6});
  CHECK(iars::sum(a).data()[0] == 2.0);

  auto cat = iars::concat_channels(a, b);
  REQUIRE(cat.shape() == iars::Shape{1, 2, 1, 3});
  CHECK(cat.data() == std::vector<double>{1, -2, 3, 10, 20, 30});
  CHECK_THROWS_AS(iars::concat_channels(a, Tensor<double>::zeros({1, 1, 2, 3})),
                  std::invalid_argument);
  CHECK_THROWS_AS(iars::add(a, Tensor<double>::zeros({3})), std::invalid_argument);
}

TEST_CASE("sigmoid is stable at extreme inputs") {
  auto x = Tensor<double>::from({4}, {0.0, 1000.0, -1000.0, 2.0});
  auto y = iars::sigmoid(x);
  CHECK(y[0] == 0.5);
  CHECK(y[1] == 1.0);
  CHECK(y[2] == 0.0);
  CHECK(y[3] == Catch::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
  CHECK(y.finite());
}

TEST_CASE("scale_by_map broadcasts over channels") {
  auto x = Tensor<double>::from({1, 2, 1, 2}, {1, 2, 3, 4});
  auto m = Tensor<double>::from({1, 1, 1, 2}, {10, 100});
  auto y = iars::scale_by_map(x, m);
  CHECK(y.data() == std::vector<double>{10, 200, 30, 400});
  CHECK_THROWS_AS(iars::scale_by_map(x, Tensor<double>::zeros({1, 2, 1, 2})),
                  std::invalid_argument);
}

TEST_CASE("batch_norm training mode normalizes each channel") {
  auto x = random_tensor<double>({4, 3, 5, 5}, 11, -3.0, 5.0);
  auto gamma = Tensor<double>::full({3}, 1.0);
  auto beta = Tensor<double>::zeros({3});
  iars::BatchNormState<double> st{Tensor<double>::zeros({3}), Tensor<double>::full({3}, 1.0)};
  auto y = iars::batch_norm(x, gamma, beta, st, true, 0.1, 1e-5);
  for (int c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    int cnt = 0;
    for (int n = 0; n < 4; ++n)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 5; ++w) {
          const double v = y.at4(n, c, h, w);
          s += v;
          s2 += v * v;
          ++cnt;
        }
    CHECK(std::abs(s / cnt) < 1e-9);
    CHECK(s2 / cnt == Catch::Approx(1.0).margin(1e-4));  // eps shrinks variance slightly
  }
  // running stats moved one momentum step toward the batch stats
  double mu0 = 0;
  for (int n = 0; n < 4; ++n)
    for (int h = 0; h < 5; ++h)
      for (int w = 0; w < 5; ++w) mu0 += x.at4(n, 0, h, w);
  mu0 /= 100.0;
  CHECK(st.running_mean[0] == Catch::Approx(0.9 * 0.0 + 0.1 * mu0).epsilon(1e-9));
}

TEST_CASE("batch_norm eval mode uses running statistics") {
  auto x = Tensor<double>::from({1, 1, 1, 2}, {3.0, 7.0});
  auto gamma = Tensor<double>::full({1}, 2.0);
  auto beta = Tensor<double>::full({1}, 1.0);
  iars::BatchNormState<double> st{Tensor<double>::full({1}, 5.0), Tensor<double>::full({1}, 4.0)};
  auto y = iars::batch_norm(x, gamma, beta, st, false, 0.1, 0.0);
  CHECK(y[0] == Catch::Approx(2.0 * (3.0 - 5.0) / 2.0 + 1.0));
  CHECK(y[1] == Catch::Approx(2.0 * (7.0 - 5.0) / 2.0 + 1.0));
  // eval mode must not touch the stats
  CHECK(st.running_mean[0] == 5.0);
  CHECK(st.running_var[0] == 4.0);
}

TEST_CASE("backward accumulates into reused tensors and tape clears") {
  auto x = Tensor<double>::from({2}, {3.0, 4.0}, true);
  iars::Tape<double> tape;
  auto y = iars::sum(iars::mul(x, x));  // d/dx = 2x
  CHECK(tape.size() == 2);
  tape.backward(y);
  CHECK(tape.size() == 0);
  CHECK(x.grad() == std::vector<double>{6.0, 8.0});

  // a second pass without zero_grad accumulates
  auto y2 = iars::sum(iars::mul(x, x));
  tape.backward(y2);
  CHECK(x.grad() == std::vector<double>{12.0, 16.0});
  x.zero_grad();
  CHECK(x.grad() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("no tape means no recording") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  auto y = iars::relu(x);  // outside any Tape scope
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("backward rejects non-scalar losses") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  iars::Tape<double> tape;
  auto y = iars::mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("finite differences validate conv2d gradients") {
  auto x = random_tensor<double>({2, 2, 6, 6}, 201);
  auto w = random_tensor<double>({3, 2, 3, 3}, 202);
  auto b = random_tensor<double>({3}, 203);
  auto weight_map = random_tensor<double>({2, 3, 6, 6}, 204);  // constant, no grad
  auto rep = iars::finite_diff_check<double>(
      {x, w, b}, [&] { return iars::sum(iars::mul(iars::conv2d(x, w, b, 1, 1), weight_map)); });
  INFO("worst " << rep.analytic << " vs " << rep.numeric);
  CHECK(rep.ok(1e-6));
}

TEST_CASE("finite differences validate strided conv2d gradients") {
  auto x = random_tensor<double>({1, 2, 9, 9}, 211);
  auto w = random_tensor<double>({2, 2, 3, 3}, 212);
  auto b = random_tensor<double>({2}, 213);
  auto weight_map = random_tensor<double>({1, 2, 5, 5}, 214);
  auto rep = iars::finite_diff_check<double>(
      {x, w, b}, [&] { return iars::sum(iars::mul(iars::conv2d(x, w, b, 2, 1), weight_map)); });
  CHECK(rep.ok(1e-6));
}

TEST_CASE("finite differences validate pooling and unpooling gradients") {
  auto x = distinct_tensor<double>({1, 2, 4, 4}, 21);
  auto weight_map = random_tensor<double>({1, 2, 4, 4}, 220);
  auto rep = iars::finite_diff_check<double>({x}, [&] {
    auto [p, idx] = iars::max_pool_2x2(x);
    auto u = iars::max_unpool_2x2(p, idx, 4, 4);
    return iars::sum(iars::mul(u, weight_map));
  });
  CHECK(rep.ok(1e-6));
}

TEST_CASE("finite differences validate upsample, attention arithmetic and concat") {
  auto x = random_tensor<double>({1, 2, 3, 3}, 31);
  auto g = random_tensor<double>({1, 1, 6, 6}, 32);
  auto s = random_tensor<double>({1, 2, 6, 6}, 33);
  auto weight_map = random_tensor<double>({1, 4, 6, 6}, 34);
  auto rep = iars::finite_diff_check<double>({x, g, s}, [&] {
    auto up = iars::upsample_nearest_2x(x);
    auto gated = iars::scale_by_map(s, iars::sigmoid(g));
    return iars::sum(iars::mul(iars::concat_channels(up, gated), weight_map));
  });
  CHECK(rep.ok(1e-6));
}

TEST_CASE("finite differences validate batch_norm gradients") {
  auto x = random_tensor<double>({3, 2, 4, 4}, 41, -2.0, 2.0);
  auto gamma = random_tensor<double>({2}, 42, 0.5, 1.5);
  auto beta = random_tensor<double>({2}, 43);
  auto weight_map = random_tensor<double>({3, 2, 4, 4}, 44);
  iars::BatchNormState<double> st{Tensor<double>::zeros({2}), Tensor<double>::full({2}, 1.0)};
  SECTION("training mode") {
    auto rep = iars::finite_diff_check<double>({x, gamma, beta}, [&] {
      return iars::sum(
          iars::mul(iars::batch_norm(x, gamma, beta, st, true, 0.1, 1e-5), weight_map));
    });
    INFO("worst " << rep.analytic << " vs " << rep.numeric);
    CHECK(rep.ok(1e-6));
  }
  SECTION("eval mode") {
    auto rep = iars::finite_diff_check<double>({x, gamma, beta}, [&] {
      return iars::sum(
          iars::mul(iars::batch_norm(x, gamma, beta, st, false, 0.1, 1e-5), weight_map));
    });
    CHECK(rep.ok(1e-6));
  }
}

TEST_CASE("finite differences validate relu away from the kink") {
  auto x = random_tensor<double>({1, 1, 4, 4}, 51);
  for (auto& v : x.data())
    if (std::abs(v) < 0.05) v += 0.1;  // keep clear of the nondifferentiable point
  auto weight_map = random_tensor<double>({1, 1, 4, 4}, 52);
  auto rep = iars::finite_diff_check<double>(
      {x}, [&] { return iars::sum(iars::mul(iars::relu(x), weight_map)); });
  CHECK(rep.ok(1e-6));
}

TEST_CASE("finite_diff_check flags a wrong gradient") {
  // sabotaged loss: analytic path sees x*x, numeric path sees x*x + drift via
  // a second, untaped contribution
  auto x = Tensor<double>::from({1}, {2.0});
  auto rep = iars::finite_diff_check<double>({x}, [&] {
    auto y = iars::sum(iars::mul(x, x));
    y.data()[0] += 0.5 * x.data()[0];  // invisible to the tape
    return y;
  });
  CHECK_FALSE(rep.ok(1e-4));
}
