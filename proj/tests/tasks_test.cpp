#include <doctest.h>

#include <cmath>

#include "diffi2i/errors.hpp"
#include "diffi2i/tasks.hpp"
#include "support/generators.hpp"

using namespace diffi2i;
using namespace diffi2i::testing;

TEST_SUITE("tasks") {

TEST_CASE("generation is deterministic and in range") {
  ToyDatasetSpec spec;
  spec.count = 8;
  spec.seed = 3;
  for (int i = 0; i < spec.count; ++i) {
    const auto a = generate_image(spec, i), b = generate_image(spec, i);
    REQUIRE(a.shape() == Shape{1, 32, 32});
    bool same = true, in_range = true;
    for (std::size_t k = 0; k < a.size(); ++k) {
      same = same && a.at(k) == b.at(k);
      in_range = in_range && a.at(k) >= 0.0 && a.at(k) <= 1.0;
    }
    CHECK(same);
    CHECK(in_range);
  }
  CHECK_THROWS_AS(generate_image(spec, 8), ContractError);
  // Different indices and seeds give different images.
  CHECK(mse(generate_image(spec, 0), generate_image(spec, 1)) > 1e-4);
  auto other = spec;
  other.seed = 4;
  CHECK(mse(generate_image(spec, 0), generate_image(other, 0)) > 1e-4);
}

TEST_CASE("inpainting masks cover the requested fraction exactly") {
  for (int k = 0; k < kInstances; ++k) {
    Rng rng(mix_seed(800, static_cast<std::uint64_t>(k)));
    ToyDatasetSpec spec;
    spec.image_size = 16 * static_cast<int>(rng.uniform_int(1, 3));
    spec.mask_ratio = rng.uniform(0.0, 1.0);
    spec.count = 2;
    spec.seed = rng.next_u64();
    const auto s = make_sample(spec, 1);
    const auto pixels = static_cast<std::size_t>(spec.image_size * spec.image_size);
    REQUIRE(s.mask.size() == pixels);
    std::size_t masked = 0;
    for (auto m : s.mask) masked += m;
    CHECK(masked == static_cast<std::size_t>(std::llround(spec.mask_ratio * static_cast<double>(pixels))));
    // Unmasked pixels are untouched; masked ones hold the fill value.
    for (std::size_t p = 0; p < pixels; ++p) {
      if (s.mask[p]) {
        CHECK(s.input.at(p) == 0.5);
      } else {
        CHECK(s.input.at(p) == s.gt.at(p));
      }
    }
  }
}

TEST_CASE("super-resolution pairs") {
  ToyDatasetSpec spec;
  spec.kind = TaskKind::sr;
  spec.count = 2;
  spec.scale = 4;
  const auto s = make_sample(spec, 0);
  CHECK(s.input.shape() == Shape{1, 8, 8});
  CHECK(s.model_input().shape() == s.gt.shape());
  CHECK(s.mask.empty());
  // The low-res input is the block mean.
  double m = 0.0;
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) m += s.gt.at(y * 32 + x) / 16;
  CHECK(s.input.at(0) == doctest::Approx(m).epsilon(1e-12));
}

TEST_CASE("box downsample inverts nearest upsample") {
  for (int k = 0; k < kInstances; ++k) {
    Rng rng(mix_seed(801, static_cast<std::uint64_t>(k)));
    const auto r = static_cast<int>(rng.uniform_int(1, 4));
    auto x = random_leaf(rng, {rand_dim(rng, 1, 3), rand_dim(rng, 1, 5), rand_dim(rng, 1, 5)}, 1.0, false);
    CHECK(mse(box_downsample(nearest_upsample(x, r), r), x) < 1e-28);
  }
  CHECK_THROWS_AS(box_downsample(Tensor::zeros({1, 5, 4}), 2), DimensionError);
}

TEST_CASE("psnr and error metrics") {
  const auto a = Tensor::zeros({1, 2, 2});
  const auto b = Tensor::full({1, 2, 2}, 0.1);
  CHECK(mse(a, b) == doctest::Approx(0.01));
  CHECK(mean_abs_error(a, b) == doctest::Approx(0.1));
  CHECK(psnr(a, b) == doctest::Approx(20.0));
  CHECK(psnr(a, a) == kPsnrCapDb);
  CHECK_THROWS_AS(mse(a, Tensor::zeros({1, 2, 3})), DimensionError);
}

TEST_CASE("stack and unstack round trip") {
  const auto a = Tensor::full({1, 2, 2}, 1.0), b = Tensor::full({1, 2, 2}, 2.0);
  const auto s = stack_images({a, b});
  CHECK(s.shape() == Shape{2, 1, 2, 2});
  CHECK(unstack_image(s, 1).at(3) == 2.0);
  CHECK_THROWS_AS(stack_images({a, Tensor::zeros({1, 3, 2})}), DimensionError);
}

TEST_CASE("spec validation and task names") {
  ToyDatasetSpec spec;
  spec.mask_ratio = 1.5;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = ToyDatasetSpec{};
  spec.kind = TaskKind::sr;
  spec.scale = 3;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK(parse_task_kind("sr") == TaskKind::sr);
  CHECK(std::string(task_kind_name(TaskKind::inpaint)) == "inpaint");
  CHECK_THROWS_AS(parse_task_kind("deblur"), ConfigError);
  spec = ToyDatasetSpec{};
  spec.count = 5;
  CHECK(make_dataset(spec).size() == 5);
}

}  // TEST_SUITE
