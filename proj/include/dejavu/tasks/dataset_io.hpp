#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "dejavu/core/image_io.hpp"
#include "dejavu/tasks/synthetic.hpp"

namespace dejavu::tasks {

namespace fs = std::filesystem;

// Binary tensor file:
//   magic "DVT1" | dtype u8 (0 = f32, 1 = i32, 2 = u8) | rank u8 | rank x u32 dims | raw little-endian data
template <typename Stored, typename T>
void write_tensor_file(const fs::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  const std::uint8_t dtype = std::is_same_v<Stored, float> ? 0 : std::is_same_v<Stored, std::int32_t> ? 1 : 2;
  const auto rank = static_cast<std::uint8_t>(t.rank());
  os.write("DVT1", 4);
  os.put(static_cast<char>(dtype));
  os.put(static_cast<char>(rank));
  for (int d : t.shape()) {
    const auto u = static_cast<std::uint32_t>(d);
    os.write(reinterpret_cast<const char*>(&u), 4);
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto v = static_cast<Stored>(t[i]);
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  if (!os) throw IoError("short write on " + path.string());
}

template <typename T>
Tensor<T> read_tensor_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DVT1", 4) != 0) throw FormatError(path.string() + ": bad tensor magic");
  const int dtype = is.get(), rank = is.get();
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& d : shape) {
    std::uint32_t u = 0;
    is.read(reinterpret_cast<char*>(&u), 4);
    d = static_cast<int>(u);
  }
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (dtype == 0) {
      float v;
      is.read(reinterpret_cast<char*>(&v), 4);
      t[i] = static_cast<T>(v);
    } else if (dtype == 1) {
      std::int32_t v;
      is.read(reinterpret_cast<char*>(&v), 4);
      t[i] = static_cast<T>(v);
    } else if (dtype == 2) {
      t[i] = static_cast<T>(static_cast<std::uint8_t>(is.get()));
    } else {
      throw FormatError(path.string() + ": unknown dtype");
    }
  }
  if (!is) throw FormatError(path.string() + ": truncated tensor data");
  return t;
}

inline nlohmann::json spec_to_json(const SyntheticSceneSpec& s) {
  return {{"height", s.height}, {"width", s.width}, {"num_shapes", s.num_shapes}, {"classes", s.shape_classes},
          {"seed", s.seed},     {"train", s.train}, {"val", s.val}};
}

inline SyntheticSceneSpec spec_from_json(const nlohmann::json& j) {
  SyntheticSceneSpec s;
  s.height = j.at("height");
  s.width = j.at("width");
  s.num_shapes = j.at("num_shapes");
  s.shape_classes = j.at("classes");
  s.seed = j.at("seed");
  s.train = j.at("train");
  s.val = j.at("val");
  return s;
}

// Layout:
//   DIR/manifest.json
//   DIR/<split>/<index>.png           8-bit RGB image
//   DIR/<split>/<index>.seg.dvt       i32  H x W labels
//   DIR/<split>/<index>.depth.dvt     f32  1 x H x W
//   DIR/<split>/<index>.normals.dvt   f32  3 x H x W
//   DIR/<split>/<index>.valid.dvt     u8   H x W
//   DIR/<split>/<index>.nvalid.dvt    u8   H x W
template <typename T>
void write_dataset(const fs::path& dir, const SyntheticSceneSpec& spec, const SyntheticDataset<T>& ds) {
  nlohmann::json manifest{{"format", "dejavu-synthetic"}, {"version", 1}, {"spec", spec_to_json(spec)}};
  for (const auto* split : {"train", "val"}) {
    const auto& items = std::string(split) == "train" ? ds.train : ds.val;
    fs::create_directories(dir / split);
    nlohmann::json list = nlohmann::json::array();
    for (std::size_t i = 0; i < items.size(); ++i) {
      std::ostringstream name;
      name << std::setw(6) << std::setfill('0') << i;
      const fs::path base = dir / split / name.str();
      const auto& s = items[i];
      save_image(s.image, base.string() + ".png");
      write_tensor_file<std::int32_t>(base.string() + ".seg.dvt", s.gt.seg);
      write_tensor_file<float>(base.string() + ".depth.dvt", s.gt.depth);
      write_tensor_file<float>(base.string() + ".normals.dvt", s.gt.normals);
      write_tensor_file<std::uint8_t>(base.string() + ".valid.dvt", s.gt.valid);
      write_tensor_file<std::uint8_t>(base.string() + ".nvalid.dvt", s.gt.normal_valid);
      list.push_back({{"index", i}, {"seed", s.seed}, {"stem", std::string(split) + "/" + name.str()}});
    }
    manifest["splits"][split] = list;
  }
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("cannot write manifest in " + dir.string());
  os << manifest.dump(2) << '\n';
}

template <typename T>
SyntheticDataset<T> read_dataset(const fs::path& dir, SyntheticSceneSpec* spec_out = nullptr) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("no manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(is);
  if (manifest.value("format", "") != "dejavu-synthetic") throw FormatError("unrecognized dataset manifest");
  if (spec_out) *spec_out = spec_from_json(manifest.at("spec"));
  SyntheticDataset<T> ds;
  for (const auto* split : {"train", "val"}) {
    auto& items = std::string(split) == "train" ? ds.train : ds.val;
    for (const auto& e : manifest.at("splits").at(split)) {
      const std::string stem = e.at("stem");
      const std::string base = (dir / stem).string();
      Sample<T> s;
      s.seed = e.at("seed");
      s.image = load_image<T>(base + ".png");
      s.gt.seg = read_tensor_file<int>(base + ".seg.dvt");
      s.gt.depth = read_tensor_file<T>(base + ".depth.dvt");
      s.gt.normals = read_tensor_file<T>(base + ".normals.dvt");
      s.gt.valid = read_tensor_file<T>(base + ".valid.dvt");
      s.gt.normal_valid = read_tensor_file<T>(base + ".nvalid.dvt");
      items.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace dejavu::tasks
