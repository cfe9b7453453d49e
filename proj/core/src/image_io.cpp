#include "diffi2i/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "diffi2i/errors.hpp"

namespace diffi2i {

Tensor read_png(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) throw ContractError("read_png: channels must be 1 or 3");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw Error("cannot read PNG '" + path.string() + "': " + img.message);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  const std::size_t h = img.height, w = img.width, c = static_cast<std::size_t>(channels);
  std::vector<double> data(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k)
        data[(k * h + y) * w + x] = buf[(y * w + x) * c + k] / 255.0;
  return Tensor({c, h, w}, std::move(data));
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3) throw DimensionError("write_png expects [C, H, W], got " + shape_string(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (c != 1 && c != 3) throw DimensionError("write_png: channels must be 1 or 3");
  const auto& src = image.data();
  std::vector<png_byte> buf(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) {
        const double v = std::clamp(src[(k * h + y) * w + x], 0.0, 1.0);
        buf[(y * w + x) * c + k] = static_cast<png_byte>(std::lround(v * 255.0));
      }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw Error("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

}  // namespace diffi2i
