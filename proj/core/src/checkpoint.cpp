#include "diffi2i/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "diffi2i/errors.hpp"

namespace diffi2i {
namespace {

constexpr char kMagic[4] = {'I', 'P', 'R', 'D'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  void expect(const void* p, std::size_t n, const char* what) {
    need(n);
    if (std::memcmp(data_ + pos_, p, n) != 0) throw CheckpointError(std::string("bad ") + what);
    pos_ += n;
  }
  bool at_end() const { return pos_ == size_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large buffers.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  RunConfig cfg = ckpt.config;
  cfg.stage = ckpt.bundle.stage;
  cfg.model = ckpt.bundle.config;

  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  const auto betas = ckpt.schedule.betas();
  w.u32(static_cast<std::uint32_t>(betas.size()));
  for (double b : betas) w.f64(b);
  w.str(cfg.serialize());

  std::uint32_t count = 0;
  for (const auto& [name, set] : ckpt.bundle.networks()) count += static_cast<std::uint32_t>(set->size());
  w.u32(count);
  for (const auto& [name, set] : ckpt.bundle.networks()) {
    for (const auto& p : set->params()) {
      w.str(p.id);
      const auto& shape = p.tensor.shape();
      w.u32(static_cast<std::uint32_t>(shape.size()));
      for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
      for (double v : p.tensor.data()) w.f64(v);
    }
  }
  auto& buf = w.buffer();
  w.u32(crc32_of(buf.data(), buf.size()));
  return std::move(buf);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw CheckpointError("checkpoint too short");
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes.data() + body, 4);
  if (tail.u32() != crc32_of(bytes.data(), body)) {
    throw CheckpointError("checkpoint CRC mismatch");
  }

  Reader r(bytes.data(), body);
  r.expect(kMagic, 4, "checkpoint magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto steps = r.u32();
  std::vector<double> betas(steps);
  for (auto& b : betas) b = r.f64();

  Checkpoint ckpt;
  try {
    ckpt.schedule = Schedule::from_betas(std::move(betas));
    ckpt.config = RunConfig::parse(r.str());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint header invalid: ") + e.what());
  }

  // Rebuild the bundle layout from the config, then overwrite every value.
  auto s1 = ModelBundle::init_stage1(ckpt.config.model, 0);
  ckpt.bundle = ckpt.config.stage == Stage::s1 ? std::move(s1) : ModelBundle::init_stage2(s1, 0);

  std::map<std::string, Tensor> by_id;
  for (auto& [name, set] : ckpt.bundle.networks()) {
    for (auto& p : set->params()) by_id.emplace(p.id, p.tensor);
  }
  const auto count = r.u32();
  if (count != by_id.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " parameters, config implies " +
                          std::to_string(by_id.size()));
  }
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto id = r.str();
    auto it = by_id.find(id);
    if (it == by_id.end()) throw CheckpointError("unexpected parameter '" + id + "'");
    if (!seen.insert(id).second) throw CheckpointError("duplicate parameter '" + id + "'");
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    auto& tensor = it->second;
    if (shape != tensor.shape()) {
      throw CheckpointError("parameter '" + id + "' has shape " + shape_string(shape) +
                            ", expected " + shape_string(tensor.shape()));
    }
    for (auto& v : tensor.mutable_data()) v = r.f64();
  }
  if (!r.at_end()) throw CheckpointError("trailing bytes before CRC");
  return ckpt;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw CheckpointError("short write to '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw CheckpointError("cannot move checkpoint into place at '" + path.string() + "'");
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace diffi2i
