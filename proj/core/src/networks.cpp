#include "diffi2i/networks.hpp"

#include <cmath>

#include "diffi2i/errors.hpp"
#include "diffi2i/ops.hpp"

namespace diffi2i {
namespace {

using std::size_t;

size_t sz(int v) { return static_cast<size_t>(v); }

double fan_in_bound(int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

void init_pointwise(ParamSet& p, const std::string& id, int c_out, int c_in, Rng& rng) {
  p.uniform(id + ".w", {sz(c_out), sz(c_in)}, fan_in_bound(c_in), rng);
  p.zeros(id + ".b", {sz(c_out)});
}

void init_depthwise(ParamSet& p, const std::string& id, int channels, Rng& rng) {
  p.uniform(id + ".w", {sz(channels), 3, 3}, fan_in_bound(9), rng);
  p.zeros(id + ".b", {sz(channels)});
}

void init_linear(ParamSet& p, const std::string& id, int d_out, int d_in, Rng& rng) {
  p.uniform(id + ".w", {sz(d_out), sz(d_in)}, fan_in_bound(d_in), rng);
  p.zeros(id + ".b", {sz(d_out)});
}

Tensor pointwise(const Tensor& x, const ParamSet& p, const std::string& id) {
  return ops::conv2d_pointwise(x, p.at(id + ".w"), p.at(id + ".b"));
}

Tensor depthwise(const Tensor& x, const ParamSet& p, const std::string& id) {
  return ops::conv2d_depthwise(x, p.at(id + ".w"), p.at(id + ".b"));
}

Tensor dense(const Tensor& x, const ParamSet& p, const std::string& id) {
  return ops::linear(x, p.at(id + ".w"), p.at(id + ".b"));
}

void check_block_input(const char* op, const Tensor& f, const Ipr& z,
                       const DynamicBlockConfig& cfg) {
  if (f.rank() != 4 || f.dim(1) != sz(cfg.channels)) {
    throw DimensionError(std::string(op) + ": feature map " + shape_string(f.shape()) +
                         " does not have " + std::to_string(cfg.channels) +
                         " channels on axis 1");
  }
  if (z.values.rank() != 2 || z.length() != sz(cfg.ipr_dim)) {
    throw DimensionError(std::string(op) + ": ipr " + shape_string(z.values.shape()) +
                         " does not have length " + std::to_string(cfg.ipr_dim) +
                         " on axis 1");
  }
  if (z.batch() != f.dim(0)) {
    throw DimensionError(std::string(op) + ": ipr batch " + std::to_string(z.batch()) +
                         " vs feature batch " + std::to_string(f.dim(0)));
  }
}

// W_c Norm(F) followed by the first depth-wise conv; shared by DA and DFFN.
Tensor widen(const Tensor& f, const ParamSet& p, const std::string& prefix) {
  auto n = ops::layer_norm(f, p.at(prefix + ".norm.gamma"), p.at(prefix + ".norm.beta"));
  return depthwise(pointwise(n, p, prefix + ".wc"), p, prefix + ".wd1");
}

void init_widen(ParamSet& p, const std::string& prefix, const DynamicBlockConfig& cfg,
                Rng& rng) {
  cfg.validate();
  const int wide = cfg.expansion * cfg.channels;
  p.ones(prefix + ".norm.gamma", {sz(cfg.channels)});
  p.zeros(prefix + ".norm.beta", {sz(cfg.channels)});
  init_pointwise(p, prefix + ".wc", wide, cfg.channels, rng);
  init_depthwise(p, prefix + ".wd1", wide, rng);
}

DynamicBlockConfig block_config(const ModelConfig& cfg, int level) {
  return DynamicBlockConfig{cfg.channels << level, cfg.expansion, cfg.ipr_dim()};
}

void init_block_pair(ParamSet& p, const std::string& prefix,
                     const DynamicBlockConfig& cfg, Rng& rng) {
  init_dynamic_attention(p, prefix + ".da", cfg, rng);
  init_dffn(p, prefix + ".ffn", cfg, rng);
}

Tensor block_pair(const Tensor& x, const Ipr& z, const ParamSet& p,
                  const std::string& prefix, const DynamicBlockConfig& cfg) {
  return dffn(dynamic_attention(x, z, p, prefix + ".da", cfg), z, p, prefix + ".ffn", cfg);
}

void check_image(const char* op, const Tensor& x, const ModelConfig& cfg) {
  if (x.rank() != 4 || x.dim(1) != sz(cfg.image_channels)) {
    throw DimensionError(std::string(op) + ": image " + shape_string(x.shape()) +
                         " must be [N," + std::to_string(cfg.image_channels) + ",H,W]");
  }
  const size_t m = sz(cfg.spatial_multiple());
  if (x.dim(2) % m != 0 || x.dim(3) % m != 0) {
    throw DimensionError(std::string(op) + ": spatial dims " + std::to_string(x.dim(2)) +
                         "x" + std::to_string(x.dim(3)) + " not divisible by " +
                         std::to_string(m));
  }
}

std::string cpen_prefix(CpenKind kind) { return kind == CpenKind::s1 ? "cpen_s1" : "cpen_s2"; }

Tensor cpen_forward(const Tensor& unshuffled, const ParamSet& p, const ModelConfig& cfg,
                    const std::string& prefix) {
  auto x = ops::leaky_relu(pointwise(unshuffled, p, prefix + ".stem"));
  for (int b = 0; b < cfg.cpen_blocks; ++b) {
    const std::string id = prefix + ".block" + std::to_string(b);
    if (b > 0) x = pointwise(ops::pixel_unshuffle(x, 2), p, id + ".down");
    auto y = pointwise(x, p, id + ".pw1");
    y = ops::leaky_relu(depthwise(y, p, id + ".dw"));
    x = ops::add(x, pointwise(y, p, id + ".pw2"));
  }
  auto v = ops::global_avg_pool(x);
  v = ops::leaky_relu(dense(v, p, prefix + ".fc1"));
  return dense(v, p, prefix + ".fc2");
}

}  // namespace

int ModelConfig::spatial_multiple() const noexcept {
  const int cpen = cpen_unshuffle * (1 << (cpen_blocks > 0 ? cpen_blocks - 1 : 0));
  const int dec = 1 << (levels - 1);
  return std::max(cpen, dec);
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  require(image_channels >= 1, "image_channels must be >= 1");
  require(ipr_base >= 1, "ipr_base must be >= 1");
  require(channels >= 1, "channels must be >= 1");
  require(levels >= 1 && levels <= 5, "levels must be in [1, 5]");
  // Both blocks end in a depth-wise conv back to the block width, so the
  // gate output (expansion * C / 2 channels) must already be C wide.
  require(expansion == 2, "expansion must be 2");
  require(cpen_unshuffle >= 1, "cpen_unshuffle must be >= 1");
  require(cpen_width >= 1, "cpen_width must be >= 1");
  require(cpen_blocks >= 1, "cpen_blocks must be >= 1");
  require(denoiser_hidden >= 1, "denoiser_hidden must be >= 1");
}

void DynamicBlockConfig::validate() const {
  if (channels < 1 || ipr_dim < 1 || expansion < 2 || expansion % 2 != 0) {
    throw ConfigError("dynamic block: need channels >= 1, ipr_dim >= 1, even expansion >= 2");
  }
}

void init_dynamic_attention(ParamSet& params, const std::string& prefix,
                            const DynamicBlockConfig& cfg, Rng& rng) {
  init_widen(params, prefix, cfg, rng);
  if (cfg.expansion != 2) {
    throw ConfigError("dynamic_attention: depth-wise W_d needs expansion == 2");
  }
  init_depthwise(params, prefix + ".wd_out", cfg.channels, rng);
  init_linear(params, prefix + ".wl", cfg.channels, cfg.ipr_dim, rng);
}

Tensor dynamic_attention(const Tensor& f, const Ipr& z, const ParamSet& params,
                         const std::string& prefix, const DynamicBlockConfig& cfg) {
  check_block_input("dynamic_attention", f, z, cfg);
  auto gated = ops::simple_gate(widen(f, params, prefix));
  if (gated.dim(1) != f.dim(1)) {
    throw DimensionError("dynamic_attention: gate yields " + std::to_string(gated.dim(1)) +
                         " channels, block has " + std::to_string(f.dim(1)));
  }
  auto attended = ops::mul_channel(gated, ops::global_avg_pool(gated));
  auto out = depthwise(attended, params, prefix + ".wd_out");
  out = ops::add_channel(out, dense(z.values, params, prefix + ".wl"));
  return ops::add(out, f);
}

void init_dffn(ParamSet& params, const std::string& prefix, const DynamicBlockConfig& cfg,
               Rng& rng) {
  init_widen(params, prefix, cfg, rng);
  // After the gate the width is expansion*C/2; W_d2 is depth-wise so that
  // must already equal C.
  if (cfg.expansion != 2) {
    throw ConfigError("dffn: depth-wise W_d2 needs expansion == 2");
  }
  init_depthwise(params, prefix + ".wd2", cfg.channels, rng);
  init_linear(params, prefix + ".wl", cfg.channels, cfg.ipr_dim, rng);
}

Tensor dffn(const Tensor& f, const Ipr& z, const ParamSet& params,
            const std::string& prefix, const DynamicBlockConfig& cfg) {
  check_block_input("dffn", f, z, cfg);
  auto gated = ops::simple_gate(widen(f, params, prefix));
  auto out = depthwise(gated, params, prefix + ".wd2");
  out = ops::add_channel(out, dense(z.values, params, prefix + ".wl"));
  return ops::add(out, f);
}

ParamSet init_di2iformer(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamSet p;
  const std::string root = "di2iformer";
  init_pointwise(p, root + ".embed.pw", cfg.channels, cfg.image_channels, rng);
  init_depthwise(p, root + ".embed.dw", cfg.channels, rng);
  for (int l = 0; l + 1 < cfg.levels; ++l) {
    const int c = cfg.channels << l;
    init_block_pair(p, root + ".enc" + std::to_string(l), block_config(cfg, l), rng);
    init_pointwise(p, root + ".down" + std::to_string(l), 2 * c, 4 * c, rng);
  }
  init_block_pair(p, root + ".mid", block_config(cfg, cfg.levels - 1), rng);
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const int c = cfg.channels << l;
    init_pointwise(p, root + ".up" + std::to_string(l), 4 * c, 2 * c, rng);
    init_block_pair(p, root + ".dec" + std::to_string(l), block_config(cfg, l), rng);
  }
  init_pointwise(p, root + ".head", cfg.image_channels, cfg.channels, rng);
  return p;
}

Tensor di2iformer_decode(const Tensor& input, const Ipr& z, const ParamSet& params,
                         const ModelConfig& cfg) {
  check_image("di2iformer_decode", input, cfg);
  if (z.values.rank() != 2 || z.length() != sz(cfg.ipr_dim()) ||
      z.batch() != input.dim(0)) {
    throw DimensionError("di2iformer_decode: ipr " + shape_string(z.values.shape()) +
                         " must be [" + std::to_string(input.dim(0)) + "," +
                         std::to_string(cfg.ipr_dim()) + "]");
  }
  const std::string root = "di2iformer";
  auto x = depthwise(pointwise(input, params, root + ".embed.pw"), params, root + ".embed.dw");
  std::vector<Tensor> skips;
  for (int l = 0; l + 1 < cfg.levels; ++l) {
    x = block_pair(x, z, params, root + ".enc" + std::to_string(l), block_config(cfg, l));
    skips.push_back(x);
    x = pointwise(ops::pixel_unshuffle(x, 2), params, root + ".down" + std::to_string(l));
  }
  x = block_pair(x, z, params, root + ".mid", block_config(cfg, cfg.levels - 1));
  for (int l = cfg.levels - 2; l >= 0; --l) {
    x = ops::pixel_shuffle(pointwise(x, params, root + ".up" + std::to_string(l)), 2);
    x = ops::add(x, skips[sz(l)]);
    x = block_pair(x, z, params, root + ".dec" + std::to_string(l), block_config(cfg, l));
  }
  return ops::add(input, pointwise(x, params, root + ".head"));
}

ParamSet init_cpen(const ModelConfig& cfg, CpenKind kind, Rng& rng) {
  cfg.validate();
  ParamSet p;
  const std::string prefix = cpen_prefix(kind);
  const int images = kind == CpenKind::s1 ? 2 : 1;
  const int in_ch = images * cfg.image_channels * cfg.cpen_unshuffle * cfg.cpen_unshuffle;
  const int w = cfg.cpen_width;
  init_pointwise(p, prefix + ".stem", w, in_ch, rng);
  for (int b = 0; b < cfg.cpen_blocks; ++b) {
    const std::string id = prefix + ".block" + std::to_string(b);
    if (b > 0) init_pointwise(p, id + ".down", w, 4 * w, rng);
    init_pointwise(p, id + ".pw1", w, w, rng);
    init_depthwise(p, id + ".dw", w, rng);
    init_pointwise(p, id + ".pw2", w, w, rng);
  }
  init_linear(p, prefix + ".fc1", cfg.ipr_dim(), w, rng);
  init_linear(p, prefix + ".fc2", cfg.ipr_dim(), cfg.ipr_dim(), rng);
  return p;
}

Ipr cpen_s1_extract(const Tensor& gt, const Tensor& input, const ParamSet& params,
                    const ModelConfig& cfg) {
  check_image("cpen_s1_extract", gt, cfg);
  check_image("cpen_s1_extract", input, cfg);
  if (gt.shape() != input.shape()) {
    throw DimensionError("cpen_s1_extract: gt " + shape_string(gt.shape()) +
                         " vs input " + shape_string(input.shape()));
  }
  auto u = ops::pixel_unshuffle(ops::concat({gt, input}, 1), sz(cfg.cpen_unshuffle));
  return Ipr{cpen_forward(u, params, cfg, "cpen_s1")};
}

Condition cpen_s2_condition(const Tensor& input, const ParamSet& params,
                            const ModelConfig& cfg) {
  check_image("cpen_s2_condition", input, cfg);
  auto u = ops::pixel_unshuffle(input, sz(cfg.cpen_unshuffle));
  return Condition{cpen_forward(u, params, cfg, "cpen_s2")};
}

ParamSet init_denoiser(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamSet p;
  const int d = cfg.ipr_dim();
  const int h = cfg.denoiser_hidden;
  init_linear(p, "denoiser.in", h, 2 * d + 1, rng);
  init_linear(p, "denoiser.res0", h, h, rng);
  init_linear(p, "denoiser.res1", h, h, rng);
  init_linear(p, "denoiser.out", d, h, rng);
  return p;
}

Ipr denoise_eps(const Ipr& z_t, int t, const Schedule& schedule, const Condition& d,
                const ParamSet& params, const ModelConfig& cfg) {
  const int steps = schedule.steps();
  if (t < 1 || t > steps) {
    throw ContractError("denoise_eps: step " + std::to_string(t) + " outside [1, " +
                        std::to_string(steps) + "]");
  }
  const size_t dim = sz(cfg.ipr_dim());
  if (z_t.values.rank() != 2 || z_t.length() != dim || d.values.rank() != 2 ||
      d.length() != dim || d.batch() != z_t.batch()) {
    throw DimensionError("denoise_eps: z_t " + shape_string(z_t.values.shape()) +
                         " and d " + shape_string(d.values.shape()) + " must both be [N," +
                         std::to_string(dim) + "]");
  }
  auto tcol = Tensor::full({z_t.batch(), 1}, static_cast<double>(t) / steps);
  auto x = ops::concat({z_t.values, d.values, tcol}, 1);
  auto h = ops::leaky_relu(dense(x, params, "denoiser.in"));
  h = ops::add(h, ops::leaky_relu(dense(h, params, "denoiser.res0")));
  h = ops::add(h, ops::leaky_relu(dense(h, params, "denoiser.res1")));
  const auto z0 = dense(h, params, "denoiser.out");
  const double ab = schedule.alpha_bar(t);
  return Ipr{ops::scale(ops::sub(z_t.values, ops::scale(z0, std::sqrt(ab))),
                        1.0 / std::sqrt(1.0 - ab))};
}

const char* stage_name(Stage s) { return s == Stage::s1 ? "s1" : "s2"; }

ModelBundle ModelBundle::init_stage1(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelBundle b;
  b.stage = Stage::s1;
  b.config = cfg;
  Rng cpen_rng(mix_seed(seed, 1));
  Rng dec_rng(mix_seed(seed, 2));
  b.cpen_s1 = init_cpen(cfg, CpenKind::s1, cpen_rng);
  b.di2iformer = init_di2iformer(cfg, dec_rng);
  return b;
}

ModelBundle ModelBundle::init_stage2(const ModelBundle& s1, std::uint64_t seed) {
  if (s1.stage != Stage::s1) throw ConfigError("stage-2 init needs a stage-1 bundle");
  ModelBundle b;
  b.stage = Stage::s2;
  b.config = s1.config;
  b.cpen_s1 = s1.cpen_s1.clone();
  b.di2iformer = s1.di2iformer.clone();
  Rng cpen_rng(mix_seed(seed, 3));
  Rng den_rng(mix_seed(seed, 4));
  b.cpen_s2 = init_cpen(s1.config, CpenKind::s2, cpen_rng);
  b.denoiser = init_denoiser(s1.config, den_rng);
  return b;
}

std::vector<std::pair<std::string, const ParamSet*>> ModelBundle::networks() const {
  std::vector<std::pair<std::string, const ParamSet*>> out{{"cpen_s1", &cpen_s1},
                                                           {"di2iformer", &di2iformer}};
  if (cpen_s2) out.emplace_back("cpen_s2", &*cpen_s2);
  if (denoiser) out.emplace_back("denoiser", &*denoiser);
  return out;
}

std::vector<std::pair<std::string, ParamSet*>> ModelBundle::networks() {
  std::vector<std::pair<std::string, ParamSet*>> out{{"cpen_s1", &cpen_s1},
                                                     {"di2iformer", &di2iformer}};
  if (cpen_s2) out.emplace_back("cpen_s2", &*cpen_s2);
  if (denoiser) out.emplace_back("denoiser", &*denoiser);
  return out;
}

ModelBundle ModelBundle::clone() const {
  ModelBundle b;
  b.stage = stage;
  b.config = config;
  b.cpen_s1 = cpen_s1.clone();
  b.di2iformer = di2iformer.clone();
  if (cpen_s2) b.cpen_s2 = cpen_s2->clone();
  if (denoiser) b.denoiser = denoiser->clone();
  return b;
}

}  // namespace diffi2i
