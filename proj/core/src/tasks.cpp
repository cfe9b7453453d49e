#include "diffi2i/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "diffi2i/errors.hpp"
#include "diffi2i/rng.hpp"

namespace diffi2i {
namespace {

constexpr int kSupersample = 4;

// Stream ids for mix_seed so image content, masks and anything added later
// never share a random sequence.
constexpr std::uint64_t kImageStream = 0;
constexpr std::uint64_t kMaskStream = 1;

void require_image(const char* op, const Tensor& x) {
  if (x.rank() != 3) {
    throw DimensionError(std::string(op) + ": expected [C,H,W], got " +
                         shape_string(x.shape()));
  }
}

struct Primitive {
  bool disc = true;
  double cx = 0, cy = 0, rx = 0, ry = 0;  // centre and radius / half-extent
  std::vector<double> color;
};

bool covers(const Primitive& p, double x, double y) {
  const double dx = (x - p.cx) / p.rx;
  const double dy = (y - p.cy) / p.ry;
  return p.disc ? dx * dx + dy * dy <= 1.0 : (std::fabs(dx) <= 1.0 && std::fabs(dy) <= 1.0);
}

std::vector<std::uint8_t> make_mask(const ToyDatasetSpec& spec, int index) {
  const int n = spec.image_size;
  const auto pixels = static_cast<std::size_t>(n) * n;
  const auto masked = static_cast<std::size_t>(std::llround(spec.mask_ratio * pixels));
  std::vector<std::uint8_t> mask(pixels, 0);
  if (masked == 0) return mask;
  if (masked >= pixels) {
    std::fill(mask.begin(), mask.end(), 1);
    return mask;
  }
  // Low-frequency random field; the lowest `masked` values form blob-shaped
  // holes with exactly the requested coverage.
  Rng rng(mix_seed(spec.seed, 2 * static_cast<std::uint64_t>(index) + kMaskStream));
  struct Wave { double fx, fy, phase, amp; };
  std::vector<Wave> waves(3);
  for (auto& w : waves) {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double freq = rng.uniform(1.0, 3.0) * 2.0 * std::numbers::pi;
    w = Wave{freq * std::cos(angle), freq * std::sin(angle),
             rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.5, 1.0)};
  }
  std::vector<double> field(pixels);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double u = (x + 0.5) / n, v = (y + 0.5) / n;
      double f = 0.0;
      for (const auto& w : waves) f += w.amp * std::sin(w.fx * u + w.fy * v + w.phase);
      field[static_cast<std::size_t>(y) * n + x] = f;
    }
  }
  std::vector<std::size_t> order(pixels);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return field[a] < field[b]; });
  for (std::size_t k = 0; k < masked; ++k) mask[order[k]] = 1;
  return mask;
}

}  // namespace

const char* task_kind_name(TaskKind kind) {
  return kind == TaskKind::inpaint ? "inpaint" : "sr";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "inpaint") return TaskKind::inpaint;
  if (name == "sr") return TaskKind::sr;
  throw ConfigError("unknown task kind '" + name + "' (expected inpaint or sr)");
}

void ToyDatasetSpec::validate() const {
  if (image_size < 1) throw ConfigError("task.image_size must be >= 1");
  if (channels < 1) throw ConfigError("task.channels must be >= 1");
  if (count < 0) throw ConfigError("dataset count must be >= 0");
  if (kind == TaskKind::inpaint && !(mask_ratio >= 0.0 && mask_ratio <= 1.0)) {
    throw ConfigError("task.mask_ratio must lie in [0, 1], got " + std::to_string(mask_ratio));
  }
  if (kind == TaskKind::sr && (scale < 1 || image_size % scale != 0)) {
    throw ConfigError("task.scale must be >= 1 and divide task.image_size");
  }
}

Tensor TaskSample::model_input() const {
  return kind == TaskKind::sr ? nearest_upsample(input, scale) : input;
}

Tensor generate_image(const ToyDatasetSpec& spec, int index) {
  spec.validate();
  if (index < 0 || index >= spec.count) {
    throw ContractError("image index " + std::to_string(index) + " outside [0, " +
                        std::to_string(spec.count) + ")");
  }
  Rng rng(mix_seed(spec.seed, 2 * static_cast<std::uint64_t>(index) + kImageStream));
  const int n = spec.image_size;
  const int c_count = spec.channels;

  std::vector<double> base(static_cast<std::size_t>(c_count)), gx(base.size()), gy(base.size());
  for (int c = 0; c < c_count; ++c) {
    base[c] = rng.uniform(0.2, 0.8);
    gx[c] = rng.uniform(-0.4, 0.4);
    gy[c] = rng.uniform(-0.4, 0.4);
  }
  const int shapes = static_cast<int>(rng.uniform_int(2, 4));
  std::vector<Primitive> prims(static_cast<std::size_t>(shapes));
  for (auto& p : prims) {
    p.disc = rng.uniform() < 0.5;
    p.cx = rng.uniform(0.15, 0.85);
    p.cy = rng.uniform(0.15, 0.85);
    p.rx = rng.uniform(0.08, 0.3);
    p.ry = p.disc ? p.rx : rng.uniform(0.08, 0.3);
    p.color.resize(static_cast<std::size_t>(c_count));
    for (auto& v : p.color) v = rng.uniform();
  }

  std::vector<double> img(static_cast<std::size_t>(c_count) * n * n);
  const double sub = 1.0 / (kSupersample * n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double u = (x + 0.5) / n, v = (y + 0.5) / n;
      for (int c = 0; c < c_count; ++c) {
        img[(static_cast<std::size_t>(c) * n + y) * n + x] =
            base[c] + gx[c] * (u - 0.5) + gy[c] * (v - 0.5);
      }
      for (const auto& p : prims) {
        int hits = 0;
        for (int sy = 0; sy < kSupersample; ++sy) {
          for (int sx = 0; sx < kSupersample; ++sx) {
            const double px = static_cast<double>(x) / n + (sx + 0.5) * sub;
            const double py = static_cast<double>(y) / n + (sy + 0.5) * sub;
            hits += covers(p, px, py) ? 1 : 0;
          }
        }
        const double cov = static_cast<double>(hits) / (kSupersample * kSupersample);
        if (cov == 0.0) continue;
        for (int c = 0; c < c_count; ++c) {
          auto& dst = img[(static_cast<std::size_t>(c) * n + y) * n + x];
          dst = dst * (1.0 - cov) + p.color[c] * cov;
        }
      }
    }
  }
  for (auto& v : img) v = std::clamp(v, 0.0, 1.0);
  return Tensor({static_cast<std::size_t>(c_count), static_cast<std::size_t>(n),
                 static_cast<std::size_t>(n)},
                std::move(img));
}

TaskSample make_sample(const ToyDatasetSpec& spec, int index) {
  TaskSample s;
  s.kind = spec.kind;
  s.gt = generate_image(spec, index);
  if (spec.kind == TaskKind::inpaint) {
    s.mask = make_mask(spec, index);
    const std::size_t hw = s.mask.size();
    std::vector<double> in(s.gt.data().begin(), s.gt.data().end());
    for (std::size_t k = 0; k < in.size(); ++k) {
      if (s.mask[k % hw]) in[k] = 0.5;
    }
    s.input = Tensor(s.gt.shape(), std::move(in));
  } else {
    s.scale = spec.scale;
    s.input = box_downsample(s.gt, spec.scale);
  }
  return s;
}

std::vector<TaskSample> make_dataset(const ToyDatasetSpec& spec) {
  spec.validate();
  std::vector<TaskSample> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) out.push_back(make_sample(spec, i));
  return out;
}

Tensor box_downsample(const Tensor& image, int scale) {
  require_image("box_downsample", image);
  const auto r = static_cast<std::size_t>(scale);
  if (scale < 1 || image.dim(1) % r != 0 || image.dim(2) % r != 0) {
    throw DimensionError("box_downsample: " + shape_string(image.shape()) +
                         " not divisible by scale " + std::to_string(scale));
  }
  const std::size_t c_count = image.dim(0), h = image.dim(1) / r, w = image.dim(2) / r;
  const std::size_t src_w = image.dim(2);
  auto src = image.data();
  std::vector<double> out(c_count * h * w);
  const double inv = 1.0 / static_cast<double>(r * r);
  for (std::size_t c = 0; c < c_count; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < r; ++j)
            acc += src[(c * image.dim(1) + y * r + i) * src_w + x * r + j];
        out[(c * h + y) * w + x] = acc * inv;
      }
  return Tensor({c_count, h, w}, std::move(out));
}

Tensor nearest_upsample(const Tensor& image, int scale) {
  require_image("nearest_upsample", image);
  if (scale < 1) throw DimensionError("nearest_upsample: scale must be >= 1");
  const auto r = static_cast<std::size_t>(scale);
  const std::size_t c_count = image.dim(0), h = image.dim(1) * r, w = image.dim(2) * r;
  auto src = image.data();
  std::vector<double> out(c_count * h * w);
  for (std::size_t c = 0; c < c_count; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out[(c * h + y) * w + x] = src[(c * image.dim(1) + y / r) * image.dim(2) + x / r];
  return Tensor({c_count, h, w}, std::move(out));
}

Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw DimensionError("stack_images: no images");
  const Shape& ref = images.front().shape();
  std::vector<double> out;
  out.reserve(images.size() * images.front().size());
  for (const auto& im : images) {
    if (im.shape() != ref) {
      throw DimensionError("stack_images: " + shape_string(im.shape()) + " vs " +
                           shape_string(ref));
    }
    out.insert(out.end(), im.data().begin(), im.data().end());
  }
  Shape shape{images.size()};
  shape.insert(shape.end(), ref.begin(), ref.end());
  return Tensor(std::move(shape), std::move(out));
}

Tensor unstack_image(const Tensor& batch, std::size_t index) {
  if (batch.rank() != 4 || index >= batch.dim(0)) {
    throw DimensionError("unstack_image: bad batch " + shape_string(batch.shape()));
  }
  const std::size_t per = batch.size() / batch.dim(0);
  auto d = batch.data().subspan(index * per, per);
  return Tensor({batch.dim(1), batch.dim(2), batch.dim(3)}, std::vector<double>(d.begin(), d.end()));
}

double mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mse: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.at(i) - b.at(i);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double mean_abs_error(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mean_abs_error: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::fabs(a.at(i) - b.at(i));
  return acc / static_cast<double>(a.size());
}

double psnr(const Tensor& a, const Tensor& b) {
  const double m = mse(a, b);
  if (m < 1e-10) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / m));
}

}  // namespace diffi2i
