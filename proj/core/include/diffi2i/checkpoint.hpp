#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "diffi2i/networks.hpp"
#include "diffi2i/run_config.hpp"
#include "diffi2i/schedule.hpp"

namespace diffi2i {

// Binary checkpoint, all integers and floats little-endian:
//
//   "IPRD"                      4-byte magic
//   u32 version                 kCheckpointVersion
//   u32 T, f64 beta[T]          schedule block
//   u32 n, u8 text[n]           config block: RunConfig::serialize()
//   u32 count                   parameter table, then per entry:
//     u32 id_len, u8 id[id_len], u32 rank, u32 dim[rank], f64 value[prod dim]
//   u32 crc32                   CRC-32 (zlib polynomial) of all bytes above
//
// The stage is the config block's train.stage; the parameter table holds
// the bundle's networks in ModelBundle::networks() order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  Schedule schedule = Schedule::linear(4, 0.1, 0.99);
  ModelBundle bundle;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);

// Throws CheckpointError on bad magic, version, CRC, truncation, or a
// parameter table that does not match the embedded config.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Writes to a sibling temp file and renames it into place, so a failed save
// never leaves a partial checkpoint at `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Same atomic write for any byte payload.
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace diffi2i
