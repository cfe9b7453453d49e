#include <doctest.h>

#include <cmath>
#include <limits>

#include "diffi2i/errors.hpp"
#include "diffi2i/training.hpp"
#include "support/generators.hpp"

using namespace diffi2i;
using namespace diffi2i::testing;

namespace {

ToyDatasetSpec tiny_spec(std::uint64_t seed, int count = 8) {
  ToyDatasetSpec s;
  s.image_size = 8;
  s.count = count;
  s.seed = seed;
  return s;
}

TrainConfig tiny_train(Stage stage, int iterations, Variant v = Variant::v3_joint) {
  TrainConfig t;
  t.stage = stage;
  if (stage == Stage::s2) t.variant = v;
  t.iterations = iterations;
  t.batch_size = 4;
  t.lr = 5e-3;
  t.seed = 17;
  return t;
}

const Schedule& default_schedule() {
  static const Schedule s = Schedule::linear(4, 0.1, 0.99);
  return s;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("variant names and config validation") {
  for (auto v : {Variant::v1_no_dm, Variant::v2_traditional_dm, Variant::v3_joint,
                 Variant::v4_joint_with_noise})
    CHECK(parse_variant(variant_name(v)) == v);
  CHECK_THROWS_AS(parse_variant("v0"), ConfigError);
  auto t = tiny_train(Stage::s1, 1);
  t.variant = Variant::v2_traditional_dm;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = tiny_train(Stage::s1, 1);
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("stage 1 training reduces the task loss") {
  const auto data = make_dataset(tiny_spec(1));
  const auto init = ModelBundle::init_stage1(tiny_model(), 3);
  const auto before = evaluate(init, default_schedule(), Variant::v3_joint, data, 0);
  std::vector<double> losses;
  const auto trained = train_stage1(tiny_train(Stage::s1, 80), data, init.clone(),
                                    [&](const LossReport& r) { losses.push_back(r.l_task); });
  CHECK(losses.size() == 80);
  const auto after = evaluate(trained, default_schedule(), Variant::v3_joint, data, 0);
  CHECK(after.mean_l1 < before.mean_l1);
}

TEST_CASE("stage 2 keeps the teacher frozen and is seed deterministic") {
  const auto data = make_dataset(tiny_spec(2));
  const auto s1 = train_stage1(tiny_train(Stage::s1, 5), data, ModelBundle::init_stage1(tiny_model(), 4));
  for (auto v : {Variant::v1_no_dm, Variant::v2_traditional_dm, Variant::v3_joint,
                 Variant::v4_joint_with_noise}) {
    CAPTURE(variant_name(v));
    const auto a = train_stage2(tiny_train(Stage::s2, 4, v), data, s1, default_schedule());
    const auto b = train_stage2(tiny_train(Stage::s2, 4, v), data, s1, default_schedule());
    CHECK(a.stage == Stage::s2);
    CHECK(a.cpen_s1.bit_equal(s1.cpen_s1));
    CHECK(!a.di2iformer.bit_equal(s1.di2iformer));
    CHECK(a.di2iformer.bit_equal(b.di2iformer));
    CHECK(a.denoiser->bit_equal(*b.denoiser));
    CHECK(a.cpen_s2->bit_equal(*b.cpen_s2));
  }
}

TEST_CASE("v1 trains no denoiser; v2 to v4 do") {
  const auto data = make_dataset(tiny_spec(3));
  const auto s1 = ModelBundle::init_stage1(tiny_model(), 5);
  const auto v1 = train_stage2(tiny_train(Stage::s2, 3, Variant::v1_no_dm), data, s1, default_schedule());
  const auto fresh = ModelBundle::init_stage2(s1, tiny_train(Stage::s2, 3).seed);
  CHECK(v1.denoiser->bit_equal(*fresh.denoiser));
  const auto v3 = train_stage2(tiny_train(Stage::s2, 3), data, s1, default_schedule());
  CHECK(!v3.denoiser->bit_equal(*fresh.denoiser));
}

TEST_CASE("non-finite losses raise a numerical error") {
  auto data = make_dataset(tiny_spec(4, 2));
  for (auto& s : data) s.gt.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  const auto s1 = ModelBundle::init_stage1(tiny_model(), 6);
  CHECK_THROWS_AS(train_stage1(tiny_train(Stage::s1, 2), data, s1.clone()), NumericalError);
  CHECK_THROWS_AS(train_stage2(tiny_train(Stage::s2, 2), data, s1, default_schedule()), NumericalError);
}

TEST_CASE("inference: D is deterministic, the seed only moves Z_T") {
  const auto data = make_dataset(tiny_spec(5, 2));
  const auto s1 = ModelBundle::init_stage1(tiny_model(), 7);
  const auto s2 = train_stage2(tiny_train(Stage::s2, 2), data, s1, default_schedule());
  const auto input = stack_images({data[0].model_input()});
  const auto d = cpen_s2_condition(input, *s2.cpen_s2, s2.config);
  const auto v1 = estimate_ipr(s2, default_schedule(), Variant::v1_no_dm, input, 1);
  for (std::size_t i = 0; i < d.values.size(); ++i) CHECK(v1.values.at(i) == d.values.at(i));

  const auto a = estimate_ipr(s2, default_schedule(), Variant::v3_joint, input, 1);
  const auto b = estimate_ipr(s2, default_schedule(), Variant::v3_joint, input, 1);
  const auto c = estimate_ipr(s2, default_schedule(), Variant::v3_joint, input, 2);
  double same = 0.0, diff = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    same += std::abs(a.values.at(i) - b.values.at(i));
    diff += std::abs(a.values.at(i) - c.values.at(i));
  }
  CHECK(same == 0.0);
  CHECK(diff > 0.0);

  CHECK_THROWS_WITH_AS(estimate_ipr(s1, default_schedule(), Variant::v3_joint, input, 1),
                       "inference requires stage-2 model", ConfigError);
}

TEST_CASE("evaluation reports one row per sample and repeats exactly") {
  const auto data = make_dataset(tiny_spec(6, 5));
  const auto s1 = ModelBundle::init_stage1(tiny_model(), 8);
  const auto r1 = evaluate(s1, default_schedule(), Variant::v3_joint, data, 0);
  CHECK(r1.rows.size() == 5);
  CHECK(r1.stage == Stage::s1);
  CHECK(std::isnan(r1.mean_l_diff));
  const auto s2 = ModelBundle::init_stage2(s1, 9);
  const auto a = evaluate(s2, default_schedule(), Variant::v3_joint, data, 3);
  const auto b = evaluate(s2, default_schedule(), Variant::v3_joint, data, 3);
  CHECK(a.rows.size() == 5);
  CHECK(std::isfinite(a.mean_l_diff));
  CHECK(a.mean_psnr == b.mean_psnr);
  for (std::size_t i = 0; i < 5; ++i) CHECK(a.rows[i].psnr == b.rows[i].psnr);
  // Noise seeds follow the sample index, so a prefix gives the same rows.
  const auto head = evaluate(s2, default_schedule(), Variant::v3_joint, std::span(data).first(1), 3);
  CHECK(head.rows[0].psnr == a.rows[0].psnr);
}

TEST_CASE("the denoiser chain costs under one percent of a decoder pass") {
  const auto macs = count_macs(ModelConfig{}, default_schedule(), 32);
  CHECK(macs.decoder > 0);
  CHECK(macs.chain > 0);
  CHECK(static_cast<double>(macs.chain) < 0.01 * static_cast<double>(macs.decoder));
  // Chain cost is linear in T.
  const auto t8 = count_macs(ModelConfig{}, Schedule::linear(8, 0.1, 0.99), 32);
  CHECK(t8.chain == 2 * macs.chain);
  CHECK(t8.decoder == macs.decoder);
}

}  // TEST_SUITE
