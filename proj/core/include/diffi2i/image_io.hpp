#pragma once

#include <filesystem>

#include "diffi2i/tensor.hpp"

namespace diffi2i {

// 8-bit PNG <-> [C, H, W] tensor in [0, 1]. Gray images give C = 1, colour
// images C = 3; alpha is dropped. Throws Error on I/O or decode failure.
Tensor read_png(const std::filesystem::path& path, int channels);

// Values are clamped to [0, 1] and rounded to 8 bits. C must be 1 or 3.
void write_png(const std::filesystem::path& path, const Tensor& image);

}  // namespace diffi2i
