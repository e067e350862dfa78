#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "dejavu/harness/model.hpp"
#include "dejavu/nn/adam.hpp"

namespace dejavu::harness {

namespace fs = std::filesystem;

// Binary layout (little-endian):
//   "DJVCKPT1" | u32 len + config text | i32 epoch | i64 optimizer steps
//   | u32 count, then per parameter: u32 len + name, u32 numel, f64 x numel
//   | u32 count, then per norm buffer: u32 len + name, u32 C, f64 mean x C, f64 var x C
//   | per parameter: f64 first moment x numel, f64 second moment x numel
struct CheckpointInfo {
  std::string config_text;
  int epoch = 0;
  long optimizer_steps = 0;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& is) {
  std::string s(get_u32(is), '\0');
  is.read(s.data(), static_cast<std::streamsize>(s.size()));
  return s;
}
template <typename T>
void put_values(std::ostream& os, const Tensor<T>& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = static_cast<double>(t[i]);
    os.write(reinterpret_cast<const char*>(&v), 8);
  }
}
template <typename T>
void get_values(std::istream& is, Tensor<T>& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    t[i] = static_cast<T>(v);
  }
}

}  // namespace detail

// Writes to a temporary file in the same directory, then renames it over the
// target, so a reader never sees a partial checkpoint.
template <typename T>
void save_checkpoint(const fs::path& path, const TrainConfig& cfg, int epoch, nn::Adam<T>& opt) {
  using namespace detail;
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write("DJVCKPT1", 8);
    put_str(os, serialize_config(cfg));
    const auto e = static_cast<std::int32_t>(epoch);
    os.write(reinterpret_cast<const char*>(&e), 4);
    const auto steps = static_cast<std::int64_t>(opt.steps_taken());
    os.write(reinterpret_cast<const char*>(&steps), 8);
    const auto& ps = opt.params();
    put_u32(os, static_cast<std::uint32_t>(ps.params().size()));
    for (const auto& p : ps.params()) {
      put_str(os, p.name);
      put_u32(os, static_cast<std::uint32_t>(p.var.value().size()));
      put_values(os, p.var.value());
    }
    put_u32(os, static_cast<std::uint32_t>(ps.buffers().size()));
    for (const auto& b : ps.buffers()) {
      put_str(os, b.name);
      put_u32(os, static_cast<std::uint32_t>(b.state->running_mean.size()));
      put_values(os, b.state->running_mean);
      put_values(os, b.state->running_var);
    }
    for (std::size_t k = 0; k < ps.params().size(); ++k) {
      put_values(os, opt.first_moments()[k]);
      put_values(os, opt.second_moments()[k]);
    }
    os.flush();
    if (!os) throw IoError("short write on " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline CheckpointInfo read_checkpoint_info(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "DJVCKPT1", 8) != 0) throw FormatError(path.string() + " is not a checkpoint");
  CheckpointInfo info;
  info.config_text = detail::get_str(is);
  std::int32_t e = 0;
  std::int64_t s = 0;
  is.read(reinterpret_cast<char*>(&e), 4);
  is.read(reinterpret_cast<char*>(&s), 8);
  if (!is) throw FormatError(path.string() + ": truncated header");
  info.epoch = e;
  info.optimizer_steps = static_cast<long>(s);
  return info;
}

// Restores parameters, normalization statistics and optimizer state. The
// parameter inventory must match the checkpoint exactly.
template <typename T>
CheckpointInfo load_checkpoint(const fs::path& path, nn::Adam<T>& opt) {
  using namespace detail;
  CheckpointInfo info = read_checkpoint_info(path);
  std::ifstream is(path, std::ios::binary);
  is.seekg(8 + 4 + static_cast<std::streamoff>(info.config_text.size()) + 4 + 8);
  auto ps = opt.params();
  if (get_u32(is) != ps.params().size()) throw FormatError("checkpoint parameter count mismatch");
  for (auto& p : ps.params()) {
    if (get_str(is) != p.name) throw FormatError("checkpoint parameter name mismatch at " + p.name);
    if (get_u32(is) != p.var.value().size()) throw FormatError("checkpoint size mismatch at " + p.name);
    get_values(is, p.var.mutable_value());
  }
  if (get_u32(is) != ps.buffers().size()) throw FormatError("checkpoint buffer count mismatch");
  for (const auto& b : ps.buffers()) {
    if (get_str(is) != b.name) throw FormatError("checkpoint buffer name mismatch at " + b.name);
    if (get_u32(is) != b.state->running_mean.size()) throw FormatError("checkpoint buffer size mismatch");
    get_values(is, b.state->running_mean);
    get_values(is, b.state->running_var);
  }
  for (std::size_t k = 0; k < ps.params().size(); ++k) {
    get_values(is, opt.first_moments()[k]);
    get_values(is, opt.second_moments()[k]);
  }
  if (!is) throw FormatError(path.string() + ": truncated checkpoint");
  opt.set_steps_taken(info.optimizer_steps);
  return info;
}

}  // namespace dejavu::harness
