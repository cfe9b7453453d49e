#include "diffi2i/training.hpp"

#include <cmath>
#include <sstream>

#include "diffi2i/errors.hpp"
#include "diffi2i/ops.hpp"
#include "diffi2i/optimizer.hpp"

namespace diffi2i {
namespace {

// Stream ids for mix_seed(cfg.seed, ...).
constexpr std::uint64_t kBatchStream = 11;
constexpr std::uint64_t kNoiseStream = 12;
constexpr std::uint64_t kChainStream = 13;
constexpr std::uint64_t kEvalStream = 14;

struct Batch {
  Tensor input;
  Tensor gt;
};

// Draws batches of distinct-by-chance sample indices with replacement.
class Batcher {
 public:
  Batcher(std::span<const TaskSample> data, int batch_size, std::uint64_t seed)
      : batch_size_(batch_size), rng_(seed) {
    if (data.empty()) throw ConfigError("training set is empty");
    inputs_.reserve(data.size());
    gts_.reserve(data.size());
    for (const auto& s : data) {
      inputs_.push_back(s.model_input());
      gts_.push_back(s.gt);
    }
  }

  Batch next() {
    std::vector<Tensor> in, gt;
    in.reserve(static_cast<std::size_t>(batch_size_));
    gt.reserve(static_cast<std::size_t>(batch_size_));
    const auto last = static_cast<std::int64_t>(inputs_.size()) - 1;
    for (int i = 0; i < batch_size_; ++i) {
      const auto k = static_cast<std::size_t>(rng_.uniform_int(0, last));
      in.push_back(inputs_[k]);
      gt.push_back(gts_[k]);
    }
    return Batch{stack_images(in), stack_images(gt)};
  }

 private:
  int batch_size_;
  Rng rng_;
  std::vector<Tensor> inputs_;
  std::vector<Tensor> gts_;
};

void check_finite(const LossReport& r) {
  if (std::isfinite(r.l_task) && std::isfinite(r.l_diff) && std::isfinite(r.l_all)) return;
  std::ostringstream os;
  os << "non-finite loss at step " << r.step << ": l_task=" << r.l_task
     << " l_diff=" << r.l_diff << " l_all=" << r.l_all;
  throw NumericalError(os.str());
}

ReverseMode mode_for(Variant v) {
  return v == Variant::v4_joint_with_noise ? ReverseMode::noise_inclusive
                                           : ReverseMode::variance_free;
}

EpsilonFn denoiser_fn(const ModelBundle& b, const Condition& d, const Schedule& schedule) {
  return [&b, d, &schedule](const Tensor& z_t, int t) {
    return denoise_eps(Ipr{z_t}, t, schedule, d, *b.denoiser, b.config).values;
  };
}

Ipr teacher_ipr(const ModelBundle& b, const Tensor& gt, const Tensor& input) {
  NoGradGuard no_grad;
  return cpen_s1_extract(gt, input, b.cpen_s1, b.config);
}

void require_stage2(const ModelBundle& b) {
  if (b.stage != Stage::s2 || !b.cpen_s2 || !b.denoiser) {
    throw ConfigError("inference requires stage-2 model");
  }
}

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::v1_no_dm: return "v1";
    case Variant::v2_traditional_dm: return "v2";
    case Variant::v3_joint: return "v3";
    case Variant::v4_joint_with_noise: return "v4";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "v1") return Variant::v1_no_dm;
  if (name == "v2") return Variant::v2_traditional_dm;
  if (name == "v3") return Variant::v3_joint;
  if (name == "v4") return Variant::v4_joint_with_noise;
  throw ConfigError("unknown variant '" + name + "' (expected v1, v2, v3 or v4)");
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be >= 0");
  if (iterations < 0) throw ConfigError("train iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (eval_every < 0) throw ConfigError("train.eval_every must be >= 0");
  if (stage == Stage::s1 && (variant != Variant::v3_joint || dm_loss != DmLoss::l_diff)) {
    throw ConfigError("variant and dm loss choices apply to stage s2 only");
  }
}

ModelBundle train_stage1(const TrainConfig& cfg, std::span<const TaskSample> train,
                         ModelBundle bundle, const ReportSink& sink,
                         std::span<const TaskSample> eval) {
  cfg.validate();
  if (cfg.stage != Stage::s1 || bundle.stage != Stage::s1) {
    throw ConfigError("train_stage1 needs stage s1 config and bundle");
  }
  Batcher batcher(train, cfg.batch_size, mix_seed(cfg.seed, kBatchStream));
  std::vector<ParamSet*> groups{&bundle.cpen_s1, &bundle.di2iformer};
  Adam adam(groups, AdamOptions{.lr = cfg.lr});
  const Schedule unused = Schedule::linear(1, 0.5, 0.5);

  for (long step = 1; step <= cfg.iterations; ++step) {
    adam.zero_grad();
    const auto batch = batcher.next();
    const auto z = cpen_s1_extract(batch.gt, batch.input, bundle.cpen_s1, bundle.config);
    const auto out = di2iformer_decode(batch.input, z, bundle.di2iformer, bundle.config);
    const auto loss = loss_task_l1(out, batch.gt);

    LossReport report{step, loss.item(), 0.0, loss.item()};
    check_finite(report);
    backward(loss);
    if (cfg.clip_norm > 0.0) clip_grad_norm(groups, cfg.clip_norm);
    adam.step();

    if (cfg.eval_every > 0 && !eval.empty() && step % cfg.eval_every == 0) {
      report.eval_psnr =
          evaluate(bundle, unused, Variant::v3_joint, eval, mix_seed(cfg.seed, kEvalStream))
              .mean_psnr;
    }
    if (sink) sink(report);
  }
  return bundle;
}

ModelBundle train_stage2(const TrainConfig& cfg, std::span<const TaskSample> train,
                         const ModelBundle& s1, const Schedule& schedule,
                         const ReportSink& sink, std::span<const TaskSample> eval) {
  cfg.validate();
  if (cfg.stage != Stage::s2) throw ConfigError("train_stage2 needs a stage s2 config");
  ModelBundle bundle = ModelBundle::init_stage2(s1, cfg.seed);
  const auto& mcfg = bundle.config;
  const int steps = schedule.steps();
  const auto dim = static_cast<std::size_t>(mcfg.ipr_dim());

  Batcher batcher(train, cfg.batch_size, mix_seed(cfg.seed, kBatchStream));
  Rng noise_rng(mix_seed(cfg.seed, kNoiseStream));
  std::vector<ParamSet*> dm_groups{&*bundle.cpen_s2, &*bundle.denoiser};
  std::vector<ParamSet*> dec_groups{&bundle.di2iformer};
  std::vector<ParamSet*> groups{&*bundle.cpen_s2, &*bundle.denoiser, &bundle.di2iformer};
  Adam adam(groups, AdamOptions{.lr = cfg.lr});

  for (long step = 1; step <= cfg.iterations; ++step) {
    adam.zero_grad();
    const auto batch = batcher.next();
    const auto n = batch.input.dim(0);
    const Ipr z = teacher_ipr(bundle, batch.gt, batch.input);
    const Condition d = cpen_s2_condition(batch.input, *bundle.cpen_s2, mcfg);

    Tensor task_loss, dm;
    switch (cfg.variant) {
      case Variant::v1_no_dm: {
        const Ipr z_hat{d.values};
        task_loss = loss_task_l1(di2iformer_decode(batch.input, z_hat, bundle.di2iformer, mcfg),
                                 batch.gt);
        dm = dm_loss(cfg.dm_loss, z_hat.values, z.values);
        break;
      }
      case Variant::v2_traditional_dm: {
        const int t = static_cast<int>(noise_rng.uniform_int(1, steps));
        const auto eps = noise_rng.normal_tensor({n, dim});
        const Ipr z_t{diffuse_to_step(z.values, t, schedule, eps)};
        const auto eps_hat = denoise_eps(z_t, t, schedule, d, *bundle.denoiser, mcfg);
        dm = loss_epsilon(eps_hat.values, eps);
        task_loss = loss_task_l1(di2iformer_decode(batch.input, z, bundle.di2iformer, mcfg),
                                 batch.gt);
        break;
      }
      case Variant::v3_joint:
      case Variant::v4_joint_with_noise: {
        const auto noise = noise_rng.normal_tensor({n, dim});
        const auto z_T = diffuse_to_T(z.values, schedule, noise);
        const ReverseConfig rcfg{mode_for(cfg.variant), schedule,
                                 mix_seed(mix_seed(cfg.seed, kChainStream),
                                          static_cast<std::uint64_t>(step))};
        const Ipr z_hat{reverse_chain(z_T, denoiser_fn(bundle, d, schedule), rcfg)};
        task_loss = loss_task_l1(di2iformer_decode(batch.input, z_hat, bundle.di2iformer, mcfg),
                                 batch.gt);
        dm = dm_loss(cfg.dm_loss, z_hat.values, z.values);
        break;
      }
    }
    const auto total = ops::add(task_loss, dm);
    LossReport report{step, task_loss.item(), dm.item(), total.item()};
    check_finite(report);
    backward(total);
    if (cfg.clip_norm > 0.0) {
      if (cfg.variant == Variant::v2_traditional_dm) {
        // Decoupled objectives: clip each side against its own norm.
        clip_grad_norm(dm_groups, cfg.clip_norm);
        clip_grad_norm(dec_groups, cfg.clip_norm);
      } else {
        clip_grad_norm(groups, cfg.clip_norm);
      }
    }
    adam.step();

    if (cfg.eval_every > 0 && !eval.empty() && step % cfg.eval_every == 0) {
      report.eval_psnr =
          evaluate(bundle, schedule, cfg.variant, eval, mix_seed(cfg.seed, kEvalStream))
              .mean_psnr;
    }
    if (sink) sink(report);
  }
  return bundle;
}

Ipr estimate_ipr(const ModelBundle& bundle, const Schedule& schedule, Variant variant,
                 const Tensor& input, std::uint64_t noise_seed) {
  require_stage2(bundle);
  const Condition d = cpen_s2_condition(input, *bundle.cpen_s2, bundle.config);
  if (variant == Variant::v1_no_dm) return Ipr{d.values};
  Rng rng(noise_seed);
  const auto z_T = rng.normal_tensor({input.dim(0), static_cast<std::size_t>(bundle.config.ipr_dim())});
  const ReverseConfig rcfg{mode_for(variant), schedule, mix_seed(noise_seed, 1)};
  return Ipr{reverse_chain(z_T, denoiser_fn(bundle, d, schedule), rcfg)};
}

Tensor restore(const ModelBundle& bundle, const Schedule& schedule, Variant variant,
               const TaskSample& sample, std::uint64_t noise_seed) {
  NoGradGuard no_grad;
  const auto input = stack_images({sample.model_input()});
  Ipr z;
  if (bundle.stage == Stage::s1) {
    z = cpen_s1_extract(stack_images({sample.gt}), input, bundle.cpen_s1, bundle.config);
  } else {
    z = estimate_ipr(bundle, schedule, variant, input, noise_seed);
  }
  return unstack_image(di2iformer_decode(input, z, bundle.di2iformer, bundle.config), 0);
}

EvalReport evaluate(const ModelBundle& bundle, const Schedule& schedule, Variant variant,
                    std::span<const TaskSample> data, std::uint64_t seed) {
  NoGradGuard no_grad;
  EvalReport report;
  report.stage = bundle.stage;
  const bool stage2 = bundle.stage == Stage::s2;
  double sum_psnr = 0.0, sum_l1 = 0.0, sum_diff = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& sample = data[i];
    const auto input = stack_images({sample.model_input()});
    const auto gt = stack_images({sample.gt});
    const Ipr teacher = cpen_s1_extract(gt, input, bundle.cpen_s1, bundle.config);
    EvalRow row;
    row.index = static_cast<int>(i);
    Ipr z = teacher;
    if (stage2) {
      z = estimate_ipr(bundle, schedule, variant, input, mix_seed(seed, i));
      row.l_diff = loss_diff(z.values, teacher.values).item();
      sum_diff += row.l_diff;
    }
    const auto out = di2iformer_decode(input, z, bundle.di2iformer, bundle.config);
    row.psnr = psnr(out, gt);
    row.l1 = mean_abs_error(out, gt);
    sum_psnr += row.psnr;
    sum_l1 += row.l1;
    report.rows.push_back(row);
  }
  if (!data.empty()) {
    const auto n = static_cast<double>(data.size());
    report.mean_psnr = sum_psnr / n;
    report.mean_l1 = sum_l1 / n;
    if (stage2) report.mean_l_diff = sum_diff / n;
    const auto macs = count_macs(bundle.config, schedule,
                                 static_cast<int>(data.front().gt.dim(1)));
    report.decoder_macs = macs.decoder;
    report.chain_macs = macs.chain;
  }
  return report;
}

MacCounts count_macs(const ModelConfig& cfg, const Schedule& schedule, int image_size) {
  NoGradGuard no_grad;
  const auto s1 = ModelBundle::init_stage1(cfg, 0);
  const auto b = ModelBundle::init_stage2(s1, 0);
  const auto side = static_cast<std::size_t>(image_size);
  const auto input = Tensor::zeros({1, static_cast<std::size_t>(cfg.image_channels), side, side});
  const Ipr z{Tensor::zeros({1, static_cast<std::size_t>(cfg.ipr_dim())})};
  const Condition d{z.values};
  MacCounts counts;
  {
    MacScope scope;
    (void)di2iformer_decode(input, z, b.di2iformer, cfg);
    counts.decoder = scope.elapsed();
  }
  {
    MacScope scope;
    const ReverseConfig rcfg{ReverseMode::variance_free, schedule, 0};
    (void)reverse_chain(z.values, denoiser_fn(b, d, schedule), rcfg);
    counts.chain = scope.elapsed();
  }
  return counts;
}

}  // namespace diffi2i
