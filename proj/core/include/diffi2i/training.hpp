#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "diffi2i/diffusion.hpp"
#include "diffi2i/losses.hpp"
#include "diffi2i/networks.hpp"
#include "diffi2i/schedule.hpp"
#include "diffi2i/tasks.hpp"

namespace diffi2i {

// Stage-2 training schemes compared in the ablation suite.
enum class Variant {
  v1_no_dm,            // CPEN_S2 regresses the IPR directly, no diffusion
  v2_traditional_dm,   // random-timestep noise regression, decoder on teacher IPR
  v3_joint,            // full variance-free chain trained jointly with the decoder
  v4_joint_with_noise  // as v3 with sigma_t noise in the reverse chain
};

const char* variant_name(Variant v);  // v1 .. v4
Variant parse_variant(const std::string& name);

struct TrainConfig {
  Stage stage = Stage::s1;
  Variant variant = Variant::v3_joint;
  DmLoss dm_loss = DmLoss::l_diff;
  double lr = 2e-4;
  int iterations = 200;
  int batch_size = 8;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables
  int eval_every = 0;      // 0: no periodic evaluation

  void validate() const;  // throws ConfigError
};

struct LossReport {
  long step = 0;
  double l_task = 0.0;
  double l_diff = 0.0;  // DM loss of the step (0 in stage 1)
  double l_all = 0.0;   // l_task + l_diff
  double eval_psnr = std::numeric_limits<double>::quiet_NaN();
};

using ReportSink = std::function<void(const LossReport&)>;

// Joint CPEN_S1 + DI2Iformer training on L1 reconstruction. Throws
// NumericalError on a non-finite loss.
ModelBundle train_stage1(const TrainConfig& cfg, std::span<const TaskSample> train,
                         ModelBundle bundle, const ReportSink& sink = {},
                         std::span<const TaskSample> eval = {});

// Stage-2 training from a trained stage-1 bundle. CPEN_S1 stays frozen as
// the teacher; the variant selects the DM training scheme.
ModelBundle train_stage2(const TrainConfig& cfg, std::span<const TaskSample> train,
                         const ModelBundle& s1, const Schedule& schedule,
                         const ReportSink& sink = {},
                         std::span<const TaskSample> eval = {});

// --- inference ----------------------------------------------------------------

// Stage-2 IPR estimate for a batch of model inputs: D from CPEN_S2, then
// (v2..v4) the reverse chain from z_T ~ N(0, 1) drawn with `noise_seed`;
// v1 returns D itself.
Ipr estimate_ipr(const ModelBundle& bundle, const Schedule& schedule, Variant variant,
                 const Tensor& input, std::uint64_t noise_seed);

// Decoder output for one sample. Stage 1 uses the teacher IPR, stage 2 the
// estimate above.
Tensor restore(const ModelBundle& bundle, const Schedule& schedule, Variant variant,
               const TaskSample& sample, std::uint64_t noise_seed);

struct EvalRow {
  int index = 0;
  double psnr = 0.0;
  double l1 = 0.0;
  double l_diff = std::numeric_limits<double>::quiet_NaN();  // stage 2 only
};

struct EvalReport {
  Stage stage = Stage::s1;
  std::vector<EvalRow> rows;
  double mean_psnr = 0.0;
  double mean_l1 = 0.0;
  double mean_l_diff = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t decoder_macs = 0;  // one decoder forward, single sample
  std::uint64_t chain_macs = 0;    // all T denoiser calls, single sample
};

// Per-sample noise seeds are mix_seed(seed, index), so results do not depend
// on evaluation order.
EvalReport evaluate(const ModelBundle& bundle, const Schedule& schedule, Variant variant,
                    std::span<const TaskSample> data, std::uint64_t seed);

// MAC counts for one sample: a decoder forward and the T-step denoiser chain.
struct MacCounts {
  std::uint64_t decoder = 0;
  std::uint64_t chain = 0;
};
MacCounts count_macs(const ModelConfig& cfg, const Schedule& schedule, int image_size);

}  // namespace diffi2i
