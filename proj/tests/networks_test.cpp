#include <doctest.h>

#include <cmath>

#include "diffi2i/errors.hpp"
#include "diffi2i/networks.hpp"
#include "diffi2i/ops.hpp"
#include "support/generators.hpp"
#include "support/gradcheck.hpp"

using namespace diffi2i;
using namespace diffi2i::testing;

namespace {

constexpr double kCompositeTol = 1e-3;
constexpr std::size_t kCoordsPerTensor = 6;

std::vector<Tensor> leaves(const ParamSet& p) {
  std::vector<Tensor> out;
  for (const auto& q : p.params()) out.push_back(q.tensor);
  return out;
}

template <typename Make>
void check_composite(std::uint64_t seed, Make make) {
  double worst = 0.0;
  std::size_t checked = 0;
  for (int k = 0; k < kInstances; ++k) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(k)));
    auto [loss, wrt] = make(rng);
    Rng pick(mix_seed(seed + 1, static_cast<std::uint64_t>(k)));
    const auto r = gradcheck(loss, wrt, 1e-6, kCoordsPerTensor, &pick);
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
  }
  CAPTURE(checked);
  CHECK(worst < kCompositeTol);
}

}  // namespace

TEST_SUITE("networks") {

TEST_CASE("model config validation") {
  ModelConfig m;
  CHECK_NOTHROW(m.validate());
  CHECK(m.ipr_dim() == 32);
  CHECK(m.spatial_multiple() == 16);
  m.expansion = 4;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m = ModelConfig{};
  m.levels = 0;
  CHECK_THROWS_AS(m.validate(), ConfigError);
}

TEST_CASE("shapes through every network") {
  const auto m = tiny_model();
  Rng rng(1);
  const auto b = ModelBundle::init_stage2(ModelBundle::init_stage1(m, 1), 2);
  const auto x = random_leaf(rng, {3, 1, 8, 8}, 1.0, false);
  const auto z = cpen_s1_extract(x, x, b.cpen_s1, m);
  CHECK(z.values.shape() == Shape{3, 8});
  const auto d = cpen_s2_condition(x, *b.cpen_s2, m);
  CHECK(d.values.shape() == Shape{3, 8});
  CHECK(denoise_eps(z, 2, Schedule::linear(4, 0.1, 0.99), d, *b.denoiser, m).values.shape() ==
        Shape{3, 8});
  CHECK(di2iformer_decode(x, z, b.di2iformer, m).shape() == x.shape());
  CHECK_THROWS_AS(di2iformer_decode(random_leaf(rng, {1, 1, 6, 6}, 1.0, false), Ipr{Tensor::zeros({1, 8})},
                                    b.di2iformer, m),
                  DimensionError);
  CHECK_THROWS_AS(di2iformer_decode(x, Ipr{Tensor::zeros({3, 7})}, b.di2iformer, m), DimensionError);
  CHECK_THROWS_AS(denoise_eps(z, 0, Schedule::linear(4, 0.1, 0.99), d, *b.denoiser, m), ContractError);
  CHECK_THROWS_AS(denoise_eps(z, 5, Schedule::linear(4, 0.1, 0.99), d, *b.denoiser, m), ContractError);
}

TEST_CASE("all-zero decoder is the identity map") {
  const auto m = tiny_model();
  Rng rng(2);
  auto p = init_di2iformer(m, rng);
  p.fill(0.0);
  const auto x = random_leaf(rng, {2, 1, 8, 8}, 1.0, false);
  const auto y = di2iformer_decode(x, Ipr{random_leaf(rng, {2, 8}, 1.0, false)}, p, m);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.at(i) == x.at(i));
}

TEST_CASE("decoder output depends on the IPR") {
  const auto m = tiny_model();
  Rng rng(3);
  auto p = init_di2iformer(m, rng);
  randomize(p, rng);
  const auto x = random_leaf(rng, {1, 1, 8, 8}, 1.0, false);
  const auto a = di2iformer_decode(x, Ipr{Tensor::zeros({1, 8})}, p, m);
  const auto b = di2iformer_decode(x, Ipr{Tensor::full({1, 8}, 1.0)}, p, m);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a.at(i) - b.at(i));
  CHECK(diff > 1e-6);
}

TEST_CASE("dynamic blocks inject the IPR additively per channel") {
  // With every weight zero except W_l, DA and DFFN reduce to F + W_l z.
  DynamicBlockConfig cfg{3, 2, 4};
  Rng rng(4);
  ParamSet p;
  init_dynamic_attention(p, "da", cfg, rng);
  init_dffn(p, "ff", cfg, rng);
  p.fill(0.0);
  for (auto& q : p.params())
    if (q.id == "da.wl.b" || q.id == "ff.wl.b")
      for (auto& v : q.tensor.mutable_data()) v = 0.5;
  const auto f = random_leaf(rng, {1, 3, 4, 4}, 1.0, false);
  const Ipr z{random_leaf(rng, {1, 4}, 1.0, false)};
  const auto a = dynamic_attention(f, z, p, "da", cfg);
  const auto b = dffn(f, z, p, "ff", cfg);
  for (std::size_t i = 0; i < f.size(); ++i) {
    CHECK(a.at(i) == doctest::Approx(f.at(i) + 0.5));
    CHECK(b.at(i) == doctest::Approx(f.at(i) + 0.5));
  }
}

TEST_CASE("bundles carry stage-specific networks") {
  const auto m = tiny_model();
  const auto s1 = ModelBundle::init_stage1(m, 5);
  CHECK(s1.stage == Stage::s1);
  CHECK(!s1.cpen_s2.has_value());
  CHECK(!s1.denoiser.has_value());
  CHECK(s1.networks().size() == 2);
  const auto s2 = ModelBundle::init_stage2(s1, 6);
  CHECK(s2.stage == Stage::s2);
  CHECK(s2.networks().size() == 4);
  CHECK(s2.cpen_s1.bit_equal(s1.cpen_s1));
  CHECK(s2.di2iformer.bit_equal(s1.di2iformer));
  // Copies, not aliases.
  CHECK(s2.cpen_s1.params()[0].tensor.node() != s1.cpen_s1.params()[0].tensor.node());
  CHECK_THROWS_AS(ModelBundle::init_stage2(s2, 1), ConfigError);
  // Same seed, same init.
  CHECK(ModelBundle::init_stage1(m, 5).di2iformer.bit_equal(s1.di2iformer));
  CHECK(!ModelBundle::init_stage1(m, 6).di2iformer.bit_equal(s1.di2iformer));
}

TEST_CASE("parameter ids are unique and prefixed by network") {
  const auto b = ModelBundle::init_stage2(ModelBundle::init_stage1(ModelConfig{}, 0), 0);
  for (const auto& [name, set] : b.networks()) {
    for (const auto& p : set->params()) {
      CAPTURE(p.id);
      CHECK(p.id.rfind(name + ".", 0) == 0);
    }
  }
}

// --- composite gradient checks -------------------------------------------------

TEST_CASE("gradcheck: dynamic attention") {
  check_composite(700, [](Rng& rng) {
    DynamicBlockConfig cfg{static_cast<int>(rand_dim(rng, 2, 4)), 2, static_cast<int>(rand_dim(rng, 2, 5))};
    ParamSet p;
    init_dynamic_attention(p, "da", cfg, rng);
    randomize(p, rng);
    auto f = random_leaf(rng, {rand_dim(rng, 1, 2), static_cast<std::size_t>(cfg.channels), 4, 4});
    auto z = random_leaf(rng, {f.dim(0), static_cast<std::size_t>(cfg.ipr_dim)});
    std::function<Tensor()> loss = [=] { return random_projection(dynamic_attention(f, Ipr{z}, p, "da", cfg), 1); };
    auto wrt = leaves(p);
    wrt.push_back(f);
    wrt.push_back(z);
    return std::pair{loss, wrt};
  });
}

TEST_CASE("gradcheck: dffn") {
  check_composite(710, [](Rng& rng) {
    DynamicBlockConfig cfg{static_cast<int>(rand_dim(rng, 2, 4)), 2, static_cast<int>(rand_dim(rng, 2, 5))};
    ParamSet p;
    init_dffn(p, "ff", cfg, rng);
    randomize(p, rng);
    auto f = random_leaf(rng, {rand_dim(rng, 1, 2), static_cast<std::size_t>(cfg.channels), 4, 4});
    auto z = random_leaf(rng, {f.dim(0), static_cast<std::size_t>(cfg.ipr_dim)});
    std::function<Tensor()> loss = [=] { return random_projection(dffn(f, Ipr{z}, p, "ff", cfg), 2); };
    auto wrt = leaves(p);
    wrt.push_back(f);
    wrt.push_back(z);
    return std::pair{loss, wrt};
  });
}

TEST_CASE("gradcheck: cpen s1 and s2") {
  check_composite(720, [](Rng& rng) {
    const auto m = tiny_model();
    auto p1 = init_cpen(m, CpenKind::s1, rng);
    auto p2 = init_cpen(m, CpenKind::s2, rng);
    randomize(p1, rng);
    randomize(p2, rng);
    auto gt = random_leaf(rng, {rand_dim(rng, 1, 2), 1, 8, 8});
    auto in = random_leaf(rng, gt.shape());
    std::function<Tensor()> loss = [=] {
      return ops::add(random_projection(cpen_s1_extract(gt, in, p1, m).values, 3),
                      random_projection(cpen_s2_condition(in, p2, m).values, 4));
    };
    auto wrt = leaves(p1);
    for (const auto& t : leaves(p2)) wrt.push_back(t);
    wrt.push_back(gt);
    wrt.push_back(in);
    return std::pair{loss, wrt};
  });
}

TEST_CASE("gradcheck: denoiser") {
  check_composite(730, [](Rng& rng) {
    const auto m = tiny_model();
    auto p = init_denoiser(m, rng);
    randomize(p, rng);
    const auto s = Schedule::linear(4, 0.1, 0.99);
    const int t = static_cast<int>(rng.uniform_int(1, 4));
    auto zt = random_leaf(rng, {rand_dim(rng, 1, 3), 8});
    auto d = random_leaf(rng, zt.shape());
    std::function<Tensor()> loss = [=] {
      return random_projection(denoise_eps(Ipr{zt}, t, s, Condition{d}, p, m).values, 5);
    };
    auto wrt = leaves(p);
    wrt.push_back(zt);
    wrt.push_back(d);
    return std::pair{loss, wrt};
  });
}

TEST_CASE("gradcheck: full decoder") {
  check_composite(740, [](Rng& rng) {
    const auto m = tiny_model();
    auto p = init_di2iformer(m, rng);
    randomize(p, rng, 0.3);
    auto x = random_leaf(rng, {1, 1, 8, 8});
    auto z = random_leaf(rng, {1, 8});
    std::function<Tensor()> loss = [=] { return random_projection(di2iformer_decode(x, Ipr{z}, p, m), 6); };
    auto wrt = leaves(p);
    wrt.push_back(x);
    wrt.push_back(z);
    return std::pair{loss, wrt};
  });
}

}  // TEST_SUITE
