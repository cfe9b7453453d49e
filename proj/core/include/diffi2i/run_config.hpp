#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "diffi2i/networks.hpp"
#include "diffi2i/schedule.hpp"
#include "diffi2i/tasks.hpp"
#include "diffi2i/training.hpp"

namespace diffi2i {

// Plain-text run configuration: one `key = value` per line, `#` starts a
// comment. Keys live under task.*, model.*, schedule.*, train.* plus the
// top-level `seed`. Unknown keys and malformed values are ConfigErrors.
struct RunConfig {
  // task.*
  TaskKind task_kind = TaskKind::inpaint;
  int image_size = 32;
  int channels = 1;
  int train_count = 512;
  int eval_count = 64;
  double mask_ratio = 0.3;
  int scale = 2;

  ModelConfig model;

  // schedule.*
  int schedule_steps = 4;
  double beta_start = 0.1;
  double beta_end = 0.99;

  // train.*
  Stage stage = Stage::s1;
  Variant variant = Variant::v3_joint;
  DmLoss dm_loss = DmLoss::l_diff;
  double lr = 3e-3;
  int batch_size = 8;
  int s1_iterations = 1000;
  int s2_iterations = 600;
  double clip_norm = 1.0;
  int eval_every = 0;

  std::uint64_t seed = 0;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  // Sets one key from its textual value.
  void set(const std::string& key, const std::string& value);

  // Canonical form: every key, fixed order, doubles in shortest round-trip form.
  std::string serialize() const;

  void validate() const;

  ToyDatasetSpec train_spec() const;
  ToyDatasetSpec eval_spec() const;
  Schedule schedule() const;
  TrainConfig train_config(Stage s) const;
  std::uint64_t init_seed() const;

  struct KeyDoc {
    std::string key;
    std::string default_value;
    std::string help;
  };
  static std::vector<KeyDoc> documented_keys();
};

}  // namespace diffi2i
