#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "diffi2i/param.hpp"
#include "diffi2i/schedule.hpp"
#include "diffi2i/tensor.hpp"

namespace diffi2i {

// Sizes for the desk-scale model. Defaults give an IPR of length 32.
struct ModelConfig {
  int image_channels = 1;
  int ipr_base = 8;        // C'; the IPR has 4 * C' entries
  int channels = 16;       // decoder width at the top U-net level
  int levels = 2;          // U-net levels; width doubles per level
  int expansion = 2;       // pre-gate widening in DA and DFFN
  int cpen_unshuffle = 4;  // pixel-unshuffle factor at the CPEN input
  int cpen_width = 32;
  int cpen_blocks = 3;     // residual blocks, stride-2 downsample between
  int denoiser_hidden = 64;

  int ipr_dim() const noexcept { return 4 * ipr_base; }
  // Spatial dims must be divisible by this for both CPEN and decoder.
  int spatial_multiple() const noexcept;
  void validate() const;  // throws ConfigError

  bool operator==(const ModelConfig&) const = default;
};

struct DynamicBlockConfig {
  int channels = 16;
  int expansion = 2;  // >= 2 and even: the gate splits expansion*C in half
  int ipr_dim = 32;
  void validate() const;
};

// Compact prior Z (and its estimates): [N, 4C'].
struct Ipr {
  Tensor values;
  std::size_t batch() const { return values.dim(0); }
  std::size_t length() const { return values.dim(1); }
};

// Condition vector D from CPEN_S2: [N, 4C'].
struct Condition {
  Tensor values;
  std::size_t batch() const { return values.dim(0); }
  std::size_t length() const { return values.dim(1); }
};

// --- dynamic transformer blocks -------------------------------------------

void init_dynamic_attention(ParamSet& params, const std::string& prefix,
                            const DynamicBlockConfig& cfg, Rng& rng);

// F' = W_d W_c Norm(F); F_sg = SG(F'); F_ca = F_sg * GAP(F_sg);
// out = W_d' F_ca + W_l z + F, with W_l z broadcast over space.
Tensor dynamic_attention(const Tensor& f, const Ipr& z, const ParamSet& params,
                         const std::string& prefix, const DynamicBlockConfig& cfg);

void init_dffn(ParamSet& params, const std::string& prefix,
               const DynamicBlockConfig& cfg, Rng& rng);

// out = W_d2 SG(W_d1 W_c Norm(F)) + W_l z + F.
Tensor dffn(const Tensor& f, const Ipr& z, const ParamSet& params,
            const std::string& prefix, const DynamicBlockConfig& cfg);

// --- networks ---------------------------------------------------------------

ParamSet init_di2iformer(const ModelConfig& cfg, Rng& rng);

// U-shaped decoder. The same z modulates every block; the network output is
// added to the input image, so an all-zero parameter set is the identity.
Tensor di2iformer_decode(const Tensor& input, const Ipr& z,
                         const ParamSet& params, const ModelConfig& cfg);

enum class CpenKind { s1, s2 };

ParamSet init_cpen(const ModelConfig& cfg, CpenKind kind, Rng& rng);

// Teacher IPR from (ground truth, input).
Ipr cpen_s1_extract(const Tensor& gt, const Tensor& input,
                    const ParamSet& params, const ModelConfig& cfg);

// Condition vector from the input alone.
Condition cpen_s2_condition(const Tensor& input, const ParamSet& params,
                            const ModelConfig& cfg);

ParamSet init_denoiser(const ModelConfig& cfg, Rng& rng);

// Residual MLP on [z_t, d, t/T] whose head estimates the clean IPR z0;
// returns the implied noise (z_t - sqrt(abar_t) z0) / sqrt(1 - abar_t).
// Throws ContractError unless 1 <= t <= T.
Ipr denoise_eps(const Ipr& z_t, int t, const Schedule& schedule, const Condition& d,
                const ParamSet& params, const ModelConfig& cfg);

// --- bundle -------------------------------------------------------------------

enum class Stage { s1, s2 };

struct ModelBundle {
  Stage stage = Stage::s1;
  ModelConfig config;
  ParamSet cpen_s1;
  ParamSet di2iformer;
  std::optional<ParamSet> cpen_s2;
  std::optional<ParamSet> denoiser;

  static ModelBundle init_stage1(const ModelConfig& cfg, std::uint64_t seed);

  // Copies CPEN_S1 and DI2Iformer from a stage-1 bundle and initializes
  // CPEN_S2 and the denoiser.
  static ModelBundle init_stage2(const ModelBundle& s1, std::uint64_t seed);

  // (name, params) in checkpoint order: cpen_s1, di2iformer, then the
  // stage-2 networks when present.
  std::vector<std::pair<std::string, const ParamSet*>> networks() const;
  std::vector<std::pair<std::string, ParamSet*>> networks();

  ModelBundle clone() const;
};

const char* stage_name(Stage s);

}  // namespace diffi2i
