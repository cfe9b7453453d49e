#include "diffi2i/ablation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "diffi2i/errors.hpp"
#include "diffi2i/rng.hpp"

namespace diffi2i {
namespace {

constexpr std::uint64_t kRepeatStream = 400;
constexpr std::uint64_t kAblationEvalStream = 401;

struct Arm {
  std::string label;
  Variant variant;
  DmLoss loss;
  Schedule schedule;
};

std::vector<Arm> arms_for(const RunConfig& base, AblationSuite suite) {
  std::vector<Arm> arms;
  switch (suite) {
    case AblationSuite::variants:
      for (auto v : {Variant::v1_no_dm, Variant::v2_traditional_dm, Variant::v3_joint,
                     Variant::v4_joint_with_noise}) {
        arms.push_back({variant_name(v), v, base.dm_loss, base.schedule()});
      }
      break;
    case AblationSuite::losses:
      for (auto l : {DmLoss::l_diff, DmLoss::l_2, DmLoss::l_kl}) {
        arms.push_back({dm_loss_name(l), base.variant, l, base.schedule()});
      }
      break;
    case AblationSuite::iterations:
      for (int t : kIterationSweep) {
        arms.push_back({"T=" + std::to_string(t), base.variant, base.dm_loss,
                        sweep_schedule(t, base.beta_start, base.beta_end)});
      }
      break;
  }
  return arms;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v, int prec) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

}  // namespace

const char* suite_name(AblationSuite s) {
  switch (s) {
    case AblationSuite::variants: return "variants";
    case AblationSuite::losses: return "losses";
    case AblationSuite::iterations: return "iterations";
  }
  return "?";
}

AblationSuite parse_suite(const std::string& name) {
  if (name == "variants") return AblationSuite::variants;
  if (name == "losses") return AblationSuite::losses;
  if (name == "iterations") return AblationSuite::iterations;
  throw ConfigError("unknown suite '" + name + "' (expected variants, losses or iterations)");
}

double AblationResult::median_psnr(const std::string& label) const {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.label == label) v.push_back(r.psnr);
  return median(std::move(v));
}

double AblationResult::repeat_psnr(const std::string& label, int repeat) const {
  for (const auto& r : rows)
    if (r.label == label && r.repeat == repeat) return r.psnr;
  throw ContractError("no ablation row for " + label + " repeat " + std::to_string(repeat));
}

int AblationResult::repeats() const {
  int n = 0;
  for (const auto& r : rows) n = std::max(n, r.repeat + 1);
  return n;
}

AblationResult run_ablation(const RunConfig& base, AblationSuite suite, int repeats,
                            const AblationProgress& progress,
                            std::vector<ModelBundle>* stage1_cache) {
  base.validate();
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  const auto arms = arms_for(base, suite);
  AblationResult result;
  result.suite = suite;
  for (const auto& a : arms) result.labels.push_back(a.label);

  const auto train = make_dataset(base.train_spec());
  const auto eval = make_dataset(base.eval_spec());
  std::vector<double> s1_psnr;

  for (int r = 0; r < repeats; ++r) {
    RunConfig cfg = base;
    cfg.seed = mix_seed(base.seed, kRepeatStream + static_cast<std::uint64_t>(r));
    const auto eval_seed = mix_seed(cfg.seed, kAblationEvalStream);

    ModelBundle s1;
    double s1_secs = 0.0;
    if (stage1_cache != nullptr && static_cast<std::size_t>(r) < stage1_cache->size()) {
      s1 = (*stage1_cache)[static_cast<std::size_t>(r)].clone();
    } else {
      if (progress) progress("repeat " + std::to_string(r) + ": stage s1");
      const auto t0 = std::chrono::steady_clock::now();
      s1 = train_stage1(cfg.train_config(Stage::s1), train,
                        ModelBundle::init_stage1(cfg.model, cfg.init_seed()));
      s1_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (stage1_cache != nullptr) stage1_cache->push_back(s1.clone());
    }
    result.stage1_seconds.push_back(s1_secs);
    s1_psnr.push_back(evaluate(s1, cfg.schedule(), cfg.variant, eval, eval_seed).mean_psnr);

    for (const auto& arm : arms) {
      if (progress) progress("repeat " + std::to_string(r) + ": " + arm.label);
      auto tcfg = cfg.train_config(Stage::s2);
      tcfg.variant = arm.variant;
      tcfg.dm_loss = arm.loss;
      const auto t0 = std::chrono::steady_clock::now();
      const auto s2 = train_stage2(tcfg, train, s1, arm.schedule);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const auto rep = evaluate(s2, arm.schedule, arm.variant, eval, eval_seed);
      result.rows.push_back({arm.label, r, rep.mean_psnr, rep.mean_l1, rep.mean_l_diff, secs});
    }
  }
  result.stage1_psnr_median = median(s1_psnr);
  return result;
}

std::string ablation_table(const AblationResult& r) {
  std::ostringstream os;
  os << "suite " << suite_name(r.suite) << ", " << r.repeats() << " repeat(s), stage-1 PSNR "
     << fmt(r.stage1_psnr_median, 3) << " dB\n";
  os << "arm     psnr_med  l1_med    ldiff_med  psnr per repeat\n";
  for (const auto& label : r.labels) {
    std::vector<double> l1, ld;
    std::string raw;
    for (const auto& row : r.rows) {
      if (row.label != label) continue;
      l1.push_back(row.l1);
      ld.push_back(row.l_diff);
      raw += (raw.empty() ? "" : " ") + fmt(row.psnr, 3);
    }
    char line[160];
    std::snprintf(line, sizeof line, "%-7s %8.3f  %8.5f  %9.5f  ", label.c_str(),
                  r.median_psnr(label), median(l1), median(ld));
    os << line << raw << '\n';
  }
  return os.str();
}

std::string ablation_csv(const AblationResult& r) {
  std::ostringstream os;
  os << "suite,label,repeat,psnr,l1,l_diff,seconds\n";
  for (const auto& row : r.rows) {
    os << suite_name(r.suite) << ',' << row.label << ',' << row.repeat << ','
       << fmt(row.psnr, 6) << ',' << fmt(row.l1, 8) << ',' << fmt(row.l_diff, 8) << ','
       << fmt(row.seconds, 2) << '\n';
  }
  return os.str();
}

}  // namespace diffi2i
