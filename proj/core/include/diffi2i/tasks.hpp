#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffi2i/tensor.hpp"

namespace diffi2i {

enum class TaskKind { inpaint, sr };

const char* task_kind_name(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);  // throws ConfigError

struct ToyDatasetSpec {
  TaskKind kind = TaskKind::inpaint;
  int image_size = 32;
  int channels = 1;
  int count = 512;
  std::uint64_t seed = 0;
  double mask_ratio = 0.3;  // inpaint: fraction of pixels masked
  int scale = 2;            // sr: downsampling factor

  void validate() const;  // throws ConfigError
};

// Images are [C, H, W] with values in [0, 1].
struct TaskSample {
  TaskKind kind = TaskKind::inpaint;
  Tensor input;  // corrupted image; low resolution for sr
  Tensor gt;
  std::vector<std::uint8_t> mask;  // inpaint: H*W bitmap, 1 = missing
  int scale = 1;

  // What the decoder and the CPENs see: the input, nearest-upsampled to the
  // ground-truth size for sr.
  Tensor model_input() const;
};

// Deterministic procedural image: a random smooth gradient overlaid with
// anti-aliased discs and rectangles. Throws ContractError when
// index >= spec.count.
Tensor generate_image(const ToyDatasetSpec& spec, int index);

// Ground truth plus task corruption.
TaskSample make_sample(const ToyDatasetSpec& spec, int index);

std::vector<TaskSample> make_dataset(const ToyDatasetSpec& spec);

// Block means over scale x scale tiles of a [C, H, W] image.
Tensor box_downsample(const Tensor& image, int scale);
Tensor nearest_upsample(const Tensor& image, int scale);

// Stacks [C, H, W] images into [N, C, H, W].
Tensor stack_images(const std::vector<Tensor>& images);
// Image `index` of a [N, C, H, W] batch as [C, H, W].
Tensor unstack_image(const Tensor& batch, std::size_t index);

double mse(const Tensor& a, const Tensor& b);
double mean_abs_error(const Tensor& a, const Tensor& b);

inline constexpr double kPsnrCapDb = 99.0;

// 10 log10(1 / MSE) for unit dynamic range, capped at 99 dB when
// MSE < 1e-10.
double psnr(const Tensor& a, const Tensor& b);

}  // namespace diffi2i
