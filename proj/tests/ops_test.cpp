#include <doctest.h>

#include <cmath>

#include "diffi2i/errors.hpp"
#include "diffi2i/ops.hpp"
#include "support/generators.hpp"
#include "support/gradcheck.hpp"

using namespace diffi2i;
using namespace diffi2i::testing;

namespace {

constexpr double kPrimitiveTol = 1e-4;

// Runs `make` kInstances times with fresh seeded inputs and checks gradients.
template <typename Make>
void check_primitive(std::uint64_t seed, Make make) {
  double worst = 0.0;
  for (int k = 0; k < kInstances; ++k) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(k)));
    auto [loss, wrt] = make(rng);
    worst = std::max(worst, gradcheck(loss, wrt).max_rel_error);
  }
  CHECK(worst < kPrimitiveTol);
}

double naive_depthwise(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t n,
                       std::size_t c, std::size_t i, std::size_t j) {
  const auto H = x.dim(2), W = x.dim(3);
  double acc = b.at(c);
  for (int di = -1; di <= 1; ++di)
    for (int dj = -1; dj <= 1; ++dj) {
      const auto ii = static_cast<long>(i) + di, jj = static_cast<long>(j) + dj;
      if (ii < 0 || jj < 0 || ii >= static_cast<long>(H) || jj >= static_cast<long>(W)) continue;
      acc += w.at(c * 9 + static_cast<std::size_t>((di + 1) * 3 + dj + 1)) *
             x.at(((n * x.dim(1) + c) * H + static_cast<std::size_t>(ii)) * W +
                  static_cast<std::size_t>(jj));
    }
  return acc;
}

}  // namespace

TEST_SUITE("ops") {

TEST_CASE("elementwise forward values") {
  Tensor a({2, 2}, {1, -2, 3, -4});
  Tensor b({2, 2}, {0.5, 0.5, -1, 2});
  CHECK(ops::add(a, b).at(3) == -2);
  CHECK(ops::sub(a, b).at(2) == 4);
  CHECK(ops::mul(a, b).at(1) == -1);
  CHECK(ops::scale(a, -2).at(0) == -2);
  CHECK(ops::add_scalar(a, 1).at(3) == -3);
  CHECK(ops::square(a).at(3) == 16);
  CHECK(ops::abs(a).at(1) == 2);
  CHECK(ops::exp(Tensor::scalar(0)).item() == 1);
  CHECK(ops::leaky_relu(a).at(1) == doctest::Approx(-0.2));
  CHECK(ops::leaky_relu(a).at(2) == 3);
  CHECK(ops::sum(a).item() == -2);
  CHECK(ops::mean(a).item() == -0.5);
}

TEST_CASE("shape mismatches are dimension errors") {
  Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(ops::add(a, b), DimensionError);
  CHECK_THROWS_AS(ops::reshape(a, {4}), DimensionError);
  CHECK_THROWS_AS(ops::concat({a, b}, 1), DimensionError);
  CHECK_THROWS_AS(ops::simple_gate(Tensor::zeros({1, 3, 2, 2})), DimensionError);
  CHECK_THROWS_AS(ops::pixel_unshuffle(Tensor::zeros({1, 1, 3, 4}), 2), DimensionError);
  CHECK_THROWS_AS(ops::conv2d_pointwise(Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({3, 4}),
                                        Tensor::zeros({3})),
                  DimensionError);
}

TEST_CASE("pointwise conv matches a naive loop") {
  Rng rng(1);
  auto x = random_leaf(rng, {2, 3, 4, 5}, 1.0, false);
  auto w = random_leaf(rng, {4, 3}, 1.0, false);
  auto b = random_leaf(rng, {4}, 1.0, false);
  auto y = ops::conv2d_pointwise(x, w, b);
  REQUIRE(y.shape() == Shape{2, 4, 4, 5});
  double worst = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t p = 0; p < 20; ++p) {
        double acc = b.at(o);
        for (std::size_t i = 0; i < 3; ++i) acc += w.at(o * 3 + i) * x.at((n * 3 + i) * 20 + p);
        worst = std::max(worst, std::abs(acc - y.at((n * 4 + o) * 20 + p)));
      }
  CHECK(worst < 1e-12);
}

TEST_CASE("depthwise conv matches a naive loop, zero padded") {
  Rng rng(2);
  auto x = random_leaf(rng, {2, 3, 4, 5}, 1.0, false);
  auto w = random_leaf(rng, {3, 3, 3}, 1.0, false);
  auto b = random_leaf(rng, {3}, 1.0, false);
  auto y = ops::conv2d_depthwise(x, w, b);
  REQUIRE(y.shape() == x.shape());
  double worst = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j)
          worst = std::max(worst, std::abs(naive_depthwise(x, w, b, n, c, i, j) -
                                           y.at(((n * 3 + c) * 4 + i) * 5 + j)));
  CHECK(worst < 1e-12);
}

TEST_CASE("linear matches a naive loop") {
  Tensor x({1, 2}, {1, 2});
  Tensor w({3, 2}, {1, 0, 0, 1, 1, 1});
  Tensor b({3}, {0.5, 0, -1});
  auto y = ops::linear(x, w, b);
  CHECK(y.shape() == Shape{1, 3});
  CHECK(y.at(0) == 1.5);
  CHECK(y.at(1) == 2);
  CHECK(y.at(2) == 2);
}

TEST_CASE("layer norm normalizes over channels at each pixel") {
  Rng rng(3);
  auto x = random_leaf(rng, {2, 5, 3, 3}, 2.0, false);
  auto y = ops::layer_norm(x, Tensor::full({5}, 1.0), Tensor::zeros({5}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < 9; ++p) {
      double m = 0.0, v = 0.0, mx = 0.0, vx = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        m += y.at((n * 5 + c) * 9 + p) / 5;
        mx += x.at((n * 5 + c) * 9 + p) / 5;
      }
      for (std::size_t c = 0; c < 5; ++c) {
        v += std::pow(y.at((n * 5 + c) * 9 + p) - m, 2) / 5;
        vx += std::pow(x.at((n * 5 + c) * 9 + p) - mx, 2) / 5;
      }
      CHECK(std::abs(m) < 1e-12);
      // Population variance shrinks by var / (var + eps).
      CHECK(v == doctest::Approx(vx / (vx + ops::kLayerNormEps)).epsilon(1e-12));
    }
}

TEST_CASE("simple gate multiplies channel halves") {
  Tensor x({1, 4, 1, 1}, {1, 2, 3, 4});
  auto y = ops::simple_gate(x);
  CHECK(y.shape() == Shape{1, 2, 1, 1});
  CHECK(y.at(0) == 3);
  CHECK(y.at(1) == 8);
}

TEST_CASE("global average pool and channel broadcasts") {
  Tensor x({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  auto g = ops::global_avg_pool(x);
  CHECK(g.shape() == Shape{1, 2});
  CHECK(g.at(0) == 2.5);
  CHECK(g.at(1) == 25);
  Tensor s({1, 2}, {2, -1});
  CHECK(ops::mul_channel(x, s).at(3) == 8);
  CHECK(ops::mul_channel(x, s).at(4) == -10);
  CHECK(ops::add_channel(x, s).at(7) == 39);
}

TEST_CASE("pixel unshuffle layout and shuffle inverse") {
  // 1x1x2x2 -> 1x4x1x1: channel i*r + j holds x[i, j].
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  auto u = ops::pixel_unshuffle(x, 2);
  CHECK(u.shape() == Shape{1, 4, 1, 1});
  CHECK(u.at(0) == 1);
  CHECK(u.at(1) == 2);
  CHECK(u.at(2) == 3);
  CHECK(u.at(3) == 4);

  for (int k = 0; k < kInstances; ++k) {
    Rng rng(mix_seed(40, static_cast<std::uint64_t>(k)));
    const auto r = rand_dim(rng, 1, 3);
    auto t = random_leaf(rng, {rand_dim(rng, 1, 2), rand_dim(rng, 1, 3), r * rand_dim(rng, 1, 3),
                               r * rand_dim(rng, 1, 3)},
                         1.0, false);
    auto back = ops::pixel_shuffle(ops::pixel_unshuffle(t, r), r);
    REQUIRE(back.shape() == t.shape());
    bool same = true;
    for (std::size_t i = 0; i < t.size(); ++i) same = same && back.at(i) == t.at(i);
    CHECK(same);
  }
}

TEST_CASE("softmax rows sum to one; log_softmax is its log") {
  for (int k = 0; k < kInstances; ++k) {
    Rng rng(mix_seed(41, static_cast<std::uint64_t>(k)));
    auto x = random_leaf(rng, {3, rand_dim(rng, 2, 9)}, 5.0, false);
    auto p = ops::softmax(x);
    auto lp = ops::log_softmax(x);
    const auto d = x.dim(1);
    for (std::size_t n = 0; n < 3; ++n) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        s += p.at(n * d + i);
        CHECK(std::log(p.at(n * d + i)) == doctest::Approx(lp.at(n * d + i)).epsilon(1e-12));
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  // Large logits stay finite.
  auto big = ops::log_softmax(Tensor({1, 2}, {1000, 0}));
  CHECK(std::isfinite(big.at(1)));
  CHECK(big.at(1) == doctest::Approx(-1000));
}

TEST_CASE("concat along an inner axis") {
  Tensor a({2, 1}, {1, 2}), b({2, 2}, {3, 4, 5, 6});
  auto c = ops::concat({a, b}, 1);
  CHECK(c.shape() == Shape{2, 3});
  const double want[] = {1, 3, 4, 2, 5, 6};
  for (std::size_t i = 0; i < 6; ++i) CHECK(c.at(i) == want[i]);
}

TEST_CASE("macs are counted for conv and linear") {
  MacScope scope;
  (void)ops::conv2d_pointwise(Tensor::zeros({2, 3, 4, 4}), Tensor::zeros({5, 3}), Tensor::zeros({5}));
  CHECK(scope.elapsed() == 2u * 5 * 3 * 16);
  MacScope dw;
  (void)ops::conv2d_depthwise(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({3, 3, 3}), Tensor::zeros({3}));
  CHECK(dw.elapsed() == 3u * 16 * 9);
  MacScope lin;
  (void)ops::linear(Tensor::zeros({2, 7}), Tensor::zeros({4, 7}), Tensor::zeros({4}));
  CHECK(lin.elapsed() == 2u * 4 * 7);
}

// --- gradient checks ------------------------------------------------------------

TEST_CASE("gradcheck: binary elementwise") {
  check_primitive(100, [](Rng& rng) {
    Shape s{rand_dim(rng, 1, 3), rand_dim(rng, 1, 5)};
    auto a = random_leaf(rng, s), b = random_leaf(rng, s);
    std::function<Tensor()> f = [=] {
      return ops::add(random_projection(ops::add(a, b), 1),
                      ops::add(random_projection(ops::sub(a, b), 2),
                               random_projection(ops::mul(a, b), 3)));
    };
    return std::pair{f, std::vector<Tensor>{a, b}};
  });
}

TEST_CASE("gradcheck: unary elementwise and reductions") {
  check_primitive(101, [](Rng& rng) {
    auto a = away_from_zero(rng, {rand_dim(rng, 1, 3), rand_dim(rng, 2, 6)});
    std::function<Tensor()> f = [=] {
      Tensor acc = random_projection(ops::scale(a, -1.7), 1);
      acc = ops::add(acc, random_projection(ops::add_scalar(a, 0.3), 2));
      acc = ops::add(acc, random_projection(ops::square(a), 3));
      acc = ops::add(acc, random_projection(ops::abs(a), 4));
      acc = ops::add(acc, random_projection(ops::exp(a), 5));
      acc = ops::add(acc, random_projection(ops::leaky_relu(a), 6));
      acc = ops::add(acc, ops::scale(ops::mean(ops::square(a)), 0.9));
      return ops::add(acc, ops::sum(ops::reshape(a, {a.size()})));
    };
    return std::pair{f, std::vector<Tensor>{a}};
  });
}

TEST_CASE("gradcheck: concat") {
  check_primitive(102, [](Rng& rng) {
    auto a = random_leaf(rng, {2, rand_dim(rng, 1, 3), 3});
    auto b = random_leaf(rng, {2, rand_dim(rng, 1, 3), 3});
    std::function<Tensor()> f = [=] { return random_projection(ops::concat({a, b}, 1), 7); };
    return std::pair{f, std::vector<Tensor>{a, b}};
  });
}

TEST_CASE("gradcheck: pointwise conv") {
  check_primitive(103, [](Rng& rng) {
    const auto ci = rand_dim(rng, 1, 4), co = rand_dim(rng, 1, 4);
    auto x = random_leaf(rng, {rand_dim(rng, 1, 2), ci, rand_dim(rng, 1, 4), rand_dim(rng, 1, 4)});
    auto w = random_leaf(rng, {co, ci}), b = random_leaf(rng, {co});
    std::function<Tensor()> f = [=] { return random_projection(ops::conv2d_pointwise(x, w, b), 8); };
    return std::pair{f, std::vector<Tensor>{x, w, b}};
  });
}

TEST_CASE("gradcheck: depthwise conv") {
  check_primitive(104, [](Rng& rng) {
    const auto c = rand_dim(rng, 1, 3);
    auto x = random_leaf(rng, {rand_dim(rng, 1, 2), c, rand_dim(rng, 1, 5), rand_dim(rng, 1, 5)});
    auto w = random_leaf(rng, {c, 3, 3}), b = random_leaf(rng, {c});
    std::function<Tensor()> f = [=] { return random_projection(ops::conv2d_depthwise(x, w, b), 9); };
    return std::pair{f, std::vector<Tensor>{x, w, b}};
  });
}

TEST_CASE("gradcheck: linear") {
  check_primitive(105, [](Rng& rng) {
    const auto di = rand_dim(rng, 1, 6), d_out = rand_dim(rng, 1, 6);
    auto x = random_leaf(rng, {rand_dim(rng, 1, 3), di});
    auto w = random_leaf(rng, {d_out, di}), b = random_leaf(rng, {d_out});
    std::function<Tensor()> f = [=] { return random_projection(ops::linear(x, w, b), 10); };
    return std::pair{f, std::vector<Tensor>{x, w, b}};
  });
}

TEST_CASE("gradcheck: layer norm") {
  check_primitive(106, [](Rng& rng) {
    const auto c = rand_dim(rng, 2, 5);
    auto x = random_leaf(rng, {rand_dim(rng, 1, 2), c, rand_dim(rng, 1, 3), rand_dim(rng, 1, 3)});
    auto g = random_leaf(rng, {c}), b = random_leaf(rng, {c});
    std::function<Tensor()> f = [=] { return random_projection(ops::layer_norm(x, g, b), 11); };
    return std::pair{f, std::vector<Tensor>{x, g, b}};
  });
}

TEST_CASE("gradcheck: simple gate, pooling, channel broadcasts") {
  check_primitive(107, [](Rng& rng) {
    const auto n = rand_dim(rng, 1, 2), c = rand_dim(rng, 1, 3);
    const auto h = rand_dim(rng, 1, 3), w = rand_dim(rng, 1, 3);
    auto x = random_leaf(rng, {n, 2 * c, h, w});
    auto s = random_leaf(rng, {n, c});
    auto v = random_leaf(rng, {n, c});
    std::function<Tensor()> f = [=] {
      auto gated = ops::simple_gate(x);
      auto acc = random_projection(ops::mul_channel(gated, s), 12);
      acc = ops::add(acc, random_projection(ops::add_channel(gated, v), 13));
      return ops::add(acc, random_projection(ops::global_avg_pool(x), 14));
    };
    return std::pair{f, std::vector<Tensor>{x, s, v}};
  });
}

TEST_CASE("gradcheck: pixel shuffle and unshuffle") {
  check_primitive(108, [](Rng& rng) {
    const auto r = rand_dim(rng, 1, 3);
    auto x = random_leaf(rng, {1, rand_dim(rng, 1, 2), r * 2, r * rand_dim(rng, 1, 2)});
    auto y = random_leaf(rng, {1, r * r * rand_dim(rng, 1, 2), 2, 1});
    std::function<Tensor()> f = [=] {
      return ops::add(random_projection(ops::pixel_unshuffle(x, r), 15),
                      random_projection(ops::pixel_shuffle(y, r), 16));
    };
    return std::pair{f, std::vector<Tensor>{x, y}};
  });
}

TEST_CASE("gradcheck: softmax and log softmax") {
  check_primitive(109, [](Rng& rng) {
    auto x = random_leaf(rng, {rand_dim(rng, 1, 3), rand_dim(rng, 2, 6)}, 2.0);
    std::function<Tensor()> f = [=] {
      return ops::add(random_projection(ops::softmax(x), 17),
                      random_projection(ops::log_softmax(x), 18));
    };
    return std::pair{f, std::vector<Tensor>{x}};
  });
}

}  // TEST_SUITE
