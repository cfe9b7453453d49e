#include "diffi2i/run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "diffi2i/errors.hpp"

namespace diffi2i {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

Stage parse_stage(const std::string& v) {
  if (v == "s1") return Stage::s1;
  if (v == "s2") return Stage::s2;
  throw ConfigError("unknown stage '" + v + "' (expected s1 or s2)");
}

struct Key {
  const char* name;
  const char* help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define DIFFI2I_INT_KEY(name, field, help)                                              \
  Key {                                                                                 \
    name, help, [](RunConfig& c, const std::string& v) { c.field = parse_int(name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                      \
  }
#define DIFFI2I_DOUBLE_KEY(name, field, help)                                    \
  Key {                                                                          \
    name, help,                                                                  \
        [](RunConfig& c, const std::string& v) { c.field = parse_double(name, v); }, \
        [](const RunConfig& c) { return format_double(c.field); }                \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"task.kind", "toy task: inpaint | sr",
          [](RunConfig& c, const std::string& v) { c.task_kind = parse_task_kind(v); },
          [](const RunConfig& c) { return std::string(task_kind_name(c.task_kind)); }},
      DIFFI2I_INT_KEY("task.image_size", image_size, "square image side in pixels"),
      DIFFI2I_INT_KEY("task.channels", channels, "image channels"),
      DIFFI2I_INT_KEY("task.train_count", train_count, "training samples"),
      DIFFI2I_INT_KEY("task.eval_count", eval_count, "evaluation samples"),
      DIFFI2I_DOUBLE_KEY("task.mask_ratio", mask_ratio, "inpaint: masked pixel fraction"),
      DIFFI2I_INT_KEY("task.scale", scale, "sr: downsampling factor"),
      DIFFI2I_INT_KEY("model.ipr_base", model.ipr_base, "C'; IPR length is 4*C'"),
      DIFFI2I_INT_KEY("model.channels", model.channels, "decoder width at the top level"),
      DIFFI2I_INT_KEY("model.levels", model.levels, "U-net levels"),
      DIFFI2I_INT_KEY("model.expansion", model.expansion, "pre-gate widening (must be 2)"),
      DIFFI2I_INT_KEY("model.cpen_unshuffle", model.cpen_unshuffle, "CPEN pixel-unshuffle factor"),
      DIFFI2I_INT_KEY("model.cpen_width", model.cpen_width, "CPEN channel width"),
      DIFFI2I_INT_KEY("model.cpen_blocks", model.cpen_blocks, "CPEN residual blocks"),
      DIFFI2I_INT_KEY("model.denoiser_hidden", model.denoiser_hidden, "denoiser MLP width"),
      DIFFI2I_INT_KEY("schedule.steps", schedule_steps, "diffusion steps T"),
      DIFFI2I_DOUBLE_KEY("schedule.beta_start", beta_start, "beta_1"),
      DIFFI2I_DOUBLE_KEY("schedule.beta_end", beta_end, "beta_T"),
      Key{"train.stage", "s1 | s2",
          [](RunConfig& c, const std::string& v) { c.stage = parse_stage(v); },
          [](const RunConfig& c) { return std::string(stage_name(c.stage)); }},
      Key{"train.variant", "stage-2 scheme: v1 | v2 | v3 | v4",
          [](RunConfig& c, const std::string& v) { c.variant = parse_variant(v); },
          [](const RunConfig& c) { return std::string(variant_name(c.variant)); }},
      Key{"train.dm_loss", "stage-2 IPR loss: l_diff | l2 | kl",
          [](RunConfig& c, const std::string& v) { c.dm_loss = parse_dm_loss(v); },
          [](const RunConfig& c) { return std::string(dm_loss_name(c.dm_loss)); }},
      DIFFI2I_DOUBLE_KEY("train.lr", lr, "Adam learning rate"),
      DIFFI2I_INT_KEY("train.batch_size", batch_size, "samples per step"),
      DIFFI2I_INT_KEY("train.s1_iterations", s1_iterations, "stage-1 steps"),
      DIFFI2I_INT_KEY("train.s2_iterations", s2_iterations, "stage-2 steps"),
      DIFFI2I_DOUBLE_KEY("train.clip_norm", clip_norm, "global gradient-norm clip (<=0 off)"),
      DIFFI2I_INT_KEY("train.eval_every", eval_every, "eval PSNR logging period (0 off)"),
      Key{"seed", "master seed for data, init, noise",
          [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
          [](const RunConfig& c) { return std::to_string(c.seed); }},
  };
  return table;
}

#undef DIFFI2I_INT_KEY
#undef DIFFI2I_DOUBLE_KEY

// Stream ids for mix_seed(seed, ...).
constexpr std::uint64_t kTrainDataStream = 100;
constexpr std::uint64_t kEvalDataStream = 101;
constexpr std::uint64_t kInitStream = 200;
constexpr std::uint64_t kStage1Stream = 201;
constexpr std::uint64_t kStage2Stream = 300;

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& k : keys()) {
    if (key == k.name) {
      k.set(*this, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto value = trim(std::string_view(body).substr(eq + 1));
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& k : keys()) {
    out += k.name;
    out += " = ";
    out += k.get(*this);
    out += '\n';
  }
  return out;
}

void RunConfig::validate() const {
  model.validate();
  train_spec().validate();
  eval_spec().validate();
  if (train_count < 1) throw ConfigError("task.train_count must be >= 1");
  if (image_size % model.spatial_multiple() != 0) {
    throw ConfigError("task.image_size " + std::to_string(image_size) +
                      " must be divisible by " + std::to_string(model.spatial_multiple()));
  }
  if (channels != model.image_channels) {
    throw ConfigError("task.channels must match the model's image channels");
  }
  (void)schedule();
  if (s1_iterations < 0 || s2_iterations < 0) throw ConfigError("iterations must be >= 0");
  train_config(Stage::s1).validate();
  train_config(Stage::s2).validate();
}

ToyDatasetSpec RunConfig::train_spec() const {
  return ToyDatasetSpec{task_kind, image_size, channels, train_count,
                        mix_seed(seed, kTrainDataStream), mask_ratio, scale};
}

ToyDatasetSpec RunConfig::eval_spec() const {
  return ToyDatasetSpec{task_kind, image_size, channels, eval_count,
                        mix_seed(seed, kEvalDataStream), mask_ratio, scale};
}

Schedule RunConfig::schedule() const {
  return Schedule::linear(schedule_steps, beta_start, beta_end);
}

TrainConfig RunConfig::train_config(Stage s) const {
  TrainConfig t;
  t.stage = s;
  if (s == Stage::s2) {
    t.variant = variant;
    t.dm_loss = dm_loss;
  }
  t.lr = lr;
  t.iterations = s == Stage::s1 ? s1_iterations : s2_iterations;
  t.batch_size = batch_size;
  t.seed = mix_seed(seed, s == Stage::s1 ? kStage1Stream : kStage2Stream);
  t.clip_norm = clip_norm;
  t.eval_every = eval_every;
  return t;
}

std::uint64_t RunConfig::init_seed() const { return mix_seed(seed, kInitStream); }

std::vector<RunConfig::KeyDoc> RunConfig::documented_keys() {
  const RunConfig defaults;
  std::vector<KeyDoc> out;
  for (const auto& k : keys()) out.push_back(KeyDoc{k.name, k.get(defaults), k.help});
  return out;
}

}  // namespace diffi2i
