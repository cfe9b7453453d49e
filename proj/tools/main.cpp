// diffi2i: train, infer, eval and ablate from the command line.
//
// Exit codes: 0 ok, 1 config or usage error, 2 checkpoint error,
// 3 numerical failure, 4 any other error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "diffi2i/ablation.hpp"
#include "diffi2i/checkpoint.hpp"
#include "diffi2i/errors.hpp"
#include "diffi2i/image_io.hpp"
#include "diffi2i/run_config.hpp"
#include "diffi2i/training.hpp"

namespace fs = std::filesystem;
using namespace diffi2i;

namespace {

enum Exit { kOk = 0, kConfig = 1, kCheckpoint = 2, kNumerical = 3, kOther = 4 };

struct TrainArgs {
  std::string config;
  std::string stage = "s1";
  std::string variant;
  std::string dm_loss;
  std::string init;
  std::string out;
  std::string log;
  std::vector<std::string> overrides;
};

struct InferArgs {
  std::string checkpoint;
  std::string input;
  std::uint64_t seed = 0;
  std::string out;
};

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string report;
  std::uint64_t seed = 0;
};

struct AblateArgs {
  std::string config;
  std::string suite = "variants";
  int repeats = 3;
  std::string csv;
  std::vector<std::string> overrides;
};

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::load(path);
  apply_overrides(cfg, overrides);
  return cfg;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config, a.overrides);
  if (a.stage == "s1") {
    cfg.stage = Stage::s1;
    if (!a.variant.empty() || !a.dm_loss.empty()) {
      throw ConfigError("--variant and --dm-loss apply to --stage s2 only");
    }
    if (!a.init.empty()) throw ConfigError("--init applies to --stage s2 only");
  } else if (a.stage == "s2") {
    cfg.stage = Stage::s2;
    if (a.init.empty()) throw ConfigError("--stage s2 requires --init <stage-1 checkpoint>");
    if (!a.variant.empty()) cfg.variant = parse_variant(a.variant);
    if (!a.dm_loss.empty()) cfg.dm_loss = parse_dm_loss(a.dm_loss);
  } else {
    throw ConfigError("unknown stage '" + a.stage + "' (expected s1 or s2)");
  }

  const fs::path log_path = a.log.empty() ? fs::path(a.out + ".log") : fs::path(a.log);
  std::ostringstream log;
  const ReportSink sink = [&log](const LossReport& r) {
    log << "step=" << r.step << " l_task=" << fmt(r.l_task) << " l_diff=" << fmt(r.l_diff)
        << " l_all=" << fmt(r.l_all);
    if (r.eval_psnr == r.eval_psnr) log << " eval_psnr=" << fmt(r.eval_psnr);
    log << '\n';
  };
  const auto train = make_dataset(cfg.train_spec());
  std::vector<TaskSample> eval;
  if (cfg.eval_every > 0) eval = make_dataset(cfg.eval_spec());

  Checkpoint out;
  if (cfg.stage == Stage::s1) {
    out.schedule = cfg.schedule();
    out.bundle = train_stage1(cfg.train_config(Stage::s1), train,
                              ModelBundle::init_stage1(cfg.model, cfg.init_seed()), sink, eval);
  } else {
    const auto init = load_checkpoint(a.init);
    if (init.bundle.stage != Stage::s1) {
      throw CheckpointError("--init must be a stage-1 checkpoint");
    }
    if (!(init.bundle.config == cfg.model)) {
      throw ConfigError("model.* keys differ from the --init checkpoint");
    }
    out.schedule = cfg.schedule();
    out.bundle = train_stage2(cfg.train_config(Stage::s2), train, init.bundle, out.schedule,
                              sink, eval);
  }
  out.config = cfg;
  save_checkpoint(a.out, out);
  write_text(log_path, log.str());
  std::cout << "wrote " << a.out << " (" << stage_name(cfg.stage) << "), log " << log_path.string()
            << '\n';
  return kOk;
}

int cmd_infer(const InferArgs& a) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  if (ckpt.bundle.stage != Stage::s2) throw CheckpointError("inference requires stage-2 model");
  const auto& cfg = ckpt.config;

  std::vector<TaskSample> samples;
  if (fs::path(a.input).extension() == ".png") {
    TaskSample s;
    s.kind = cfg.task_kind;
    s.scale = cfg.task_kind == TaskKind::sr ? cfg.scale : 1;
    s.input = read_png(a.input, cfg.channels);
    s.gt = s.model_input();
    samples.push_back(std::move(s));
  } else {
    samples = make_dataset(RunConfig::load(a.input).eval_spec());
  }

  fs::create_directories(a.out);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto image =
        restore(ckpt.bundle, ckpt.schedule, cfg.variant, samples[i], mix_seed(a.seed, i));
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04zu.png", i);
    write_png(fs::path(a.out) / name, image);
  }
  std::cout << "wrote " << samples.size() << " image(s) to " << a.out << '\n';
  return kOk;
}

std::string eval_report_text(const EvalReport& r, const std::string& checkpoint) {
  std::ostringstream os;
  os << "checkpoint " << checkpoint << '\n';
  os << "stage " << stage_name(r.stage) << '\n';
  os << "samples " << r.rows.size() << '\n';
  os << "mean_psnr " << fmt(r.mean_psnr) << '\n';
  os << "mean_l1 " << fmt(r.mean_l1) << '\n';
  os << "mean_l_diff " << fmt(r.mean_l_diff) << '\n';
  os << "decoder_macs " << r.decoder_macs << '\n';
  os << "chain_macs " << r.chain_macs << '\n';
  const double ratio = r.decoder_macs > 0 ? static_cast<double>(r.chain_macs) / r.decoder_macs : 0.0;
  os << "chain_to_decoder " << fmt(ratio) << '\n';
  os << "index,psnr,l1,l_diff\n";
  for (const auto& row : r.rows) {
    os << row.index << ',' << fmt(row.psnr) << ',' << fmt(row.l1) << ',' << fmt(row.l_diff) << '\n';
  }
  return os.str();
}

int cmd_eval(const EvalArgs& a) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  const RunConfig data_cfg = a.dataset.empty() ? ckpt.config : RunConfig::load(a.dataset);
  auto spec = data_cfg.eval_spec();
  if (spec.image_size % ckpt.config.model.spatial_multiple() != 0 ||
      spec.channels != ckpt.config.model.image_channels) {
    throw ConfigError("dataset images do not fit the checkpoint's model");
  }
  const auto data = make_dataset(spec);
  const auto report = evaluate(ckpt.bundle, ckpt.schedule, ckpt.config.variant, data, a.seed);
  const auto text = eval_report_text(report, a.checkpoint);
  if (a.report.empty()) {
    std::cout << text;
  } else {
    write_text(a.report, text);
    std::cout << "mean_psnr " << fmt(report.mean_psnr) << ", report " << a.report << '\n';
  }
  return kOk;
}

int cmd_ablate(const AblateArgs& a) {
  const RunConfig cfg = load_config(a.config, a.overrides);
  const auto suite = parse_suite(a.suite);
  if (a.repeats < 1) throw ConfigError("--repeats must be >= 1");
  const auto result = run_ablation(cfg, suite, a.repeats, [](const std::string& what) {
    std::cerr << "[ablate] " << what << '\n';
  });
  std::cout << ablation_table(result);
  if (!a.csv.empty()) write_text(a.csv, ablation_csv(result));
  return kOk;
}

std::string config_key_help() {
  std::ostringstream os;
  os << "\nConfig file keys (key = value, # comments):\n";
  for (const auto& k : RunConfig::documented_keys()) {
    char line[160];
    std::snprintf(line, sizeof line, "  %-22s default %-8s %s\n", k.key.c_str(),
                  k.default_value.c_str(), k.help.c_str());
    os << line;
  }
  os << "\nExit codes: 0 ok, 1 config error, 2 checkpoint error, 3 numerical failure (NaN),\n"
        "4 other error (I/O, contract).\n";
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion over compact image priors: toy image-to-image restoration"};
  app.footer(config_key_help());
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train stage s1 or s2 and write a checkpoint");
  t->add_option("--config", train.config, "Run config file (defaults if omitted)");
  t->add_option("--stage", train.stage, "s1 | s2")->capture_default_str();
  t->add_option("--variant", train.variant, "Stage-2 scheme v1..v4 (overrides train.variant)");
  t->add_option("--dm-loss", train.dm_loss, "l_diff | l2 | kl (overrides train.dm_loss)");
  t->add_option("--init", train.init, "Stage-1 checkpoint, required for --stage s2");
  t->add_option("--out", train.out, "Output checkpoint path")->required();
  t->add_option("--log", train.log, "Metrics log path (default <out>.log)");
  t->add_option("--set", train.overrides, "Override a config key: key=value");

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Restore images with a stage-2 checkpoint");
  i->add_option("checkpoint", infer.checkpoint, "Stage-2 checkpoint")->required();
  i->add_option("--input", infer.input, "PNG image, or a config file whose eval set is used")
      ->required();
  i->add_option("--seed", infer.seed, "Noise seed for Z_T")->capture_default_str();
  i->add_option("--out", infer.out, "Output directory for PNGs")->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a toy dataset");
  e->add_option("checkpoint", eval.checkpoint, "Checkpoint")->required();
  e->add_option("--dataset", eval.dataset, "Config file whose eval set is used (default: the checkpoint's)");
  e->add_option("--report", eval.report, "Report path (stdout if omitted)");
  e->add_option("--seed", eval.seed, "Noise seed")->capture_default_str();

  AblateArgs ablate;
  auto* b = app.add_subcommand("ablate", "Run a paired ablation suite");
  b->add_option("--config", ablate.config, "Base run config (defaults if omitted)");
  b->add_option("--suite", ablate.suite, "variants | losses | iterations")->capture_default_str();
  b->add_option("--repeats", ablate.repeats, "Paired repeats")->capture_default_str();
  b->add_option("--csv", ablate.csv, "Also write rows as CSV");
  b->add_option("--set", ablate.overrides, "Override a config key: key=value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kConfig;
  }

  try {
    if (*t) return cmd_train(train);
    if (*i) return cmd_infer(infer);
    if (*e) return cmd_eval(eval);
    if (*b) return cmd_ablate(ablate);
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return kConfig;
  } catch (const CheckpointError& ex) {
    std::cerr << "checkpoint error: " << ex.what() << '\n';
    return kCheckpoint;
  } catch (const NumericalError& ex) {
    std::cerr << "numerical failure: " << ex.what() << '\n';
    return kNumerical;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kOther;
  }
  return kOther;
}
