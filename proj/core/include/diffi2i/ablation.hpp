#pragma once

#include <functional>
#include <string>
#include <vector>

#include "diffi2i/run_config.hpp"

namespace diffi2i {

enum class AblationSuite { variants, losses, iterations };

const char* suite_name(AblationSuite s);
AblationSuite parse_suite(const std::string& name);  // throws ConfigError

struct AblationRow {
  std::string label;  // "v1".."v4", loss name, or "T=<n>"
  int repeat = 0;
  double psnr = 0.0;
  double l1 = 0.0;
  double l_diff = 0.0;
  double seconds = 0.0;  // stage-2 training time
};

struct AblationResult {
  AblationSuite suite = AblationSuite::variants;
  std::vector<std::string> labels;  // row order of the summary
  std::vector<AblationRow> rows;    // one per (repeat, label)
  double stage1_psnr_median = 0.0;  // teacher-IPR PSNR of the shared stage-1 models
  std::vector<double> stage1_seconds;  // per repeat; 0 when taken from the cache

  double median_psnr(const std::string& label) const;
  double repeat_psnr(const std::string& label, int repeat) const;
  int repeats() const;
};

using AblationProgress = std::function<void(const std::string&)>;

// Paired runs: repeat r derives its own seed from base.seed, trains one
// stage-1 bundle, then every arm trains stage 2 from that bundle
// with the same stage-2 seed and evaluates on the same eval set and noise.
// The variants and losses suites use base.schedule(); the iterations suite
// trains base.variant for T in {1, 2, 3, 4, 8} with sweep_schedule().
//
// Stage-1 bundles depend only on the base config and the repeat index. When
// `stage1_cache` is given, entry r is reused if present and appended if not,
// so several suites over one base config can share them.
AblationResult run_ablation(const RunConfig& base, AblationSuite suite, int repeats,
                            const AblationProgress& progress = {},
                            std::vector<ModelBundle>* stage1_cache = nullptr);

// Per-label summary: median PSNR, L1, L_diff over repeats, plus raw
// per-repeat PSNR.
std::string ablation_table(const AblationResult& r);
// One line per row: suite,label,repeat,psnr,l1,l_diff,seconds.
std::string ablation_csv(const AblationResult& r);

inline const std::vector<int> kIterationSweep = {1, 2, 3, 4, 8};

}  // namespace diffi2i
