#pragma once

#include <cstdint>
#include <cstring>
#include <iostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lr2 {

// Parameter checkpoint blob: magic, version, then named blocks of flat
// 64-bit reals. Little-endian host assumed.
inline constexpr char kParamMagic[8] = {'L', 'R', '2', 'P', 'A', 'R', 'M', '\0'};
inline constexpr uint32_t kParamVersion = 1;

struct ParamBlock {
  std::string name;
  std::vector<double> values;
};

inline void write_param_blob(std::ostream& os,
                             std::span<const ParamBlock> blocks) {
  os.write(kParamMagic, 8);
  auto put_u32 = [&](uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  auto put_u64 = [&](uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); };
  put_u32(kParamVersion);
  put_u32(static_cast<uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    put_u32(static_cast<uint32_t>(b.name.size()));
    os.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    put_u64(b.values.size());
    os.write(reinterpret_cast<const char*>(b.values.data()),
             static_cast<std::streamsize>(b.values.size() * sizeof(double)));
  }
}

inline std::vector<ParamBlock> read_param_blob(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kParamMagic, 8) != 0)
    throw std::runtime_error("read_param_blob: bad magic");
  auto get_u32 = [&] {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto get_u64 = [&] {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  const uint32_t version = get_u32();
  if (version != kParamVersion)
    throw std::runtime_error("read_param_blob: unsupported version " + std::to_string(version));
  const uint32_t n = get_u32();
  std::vector<ParamBlock> blocks(n);
  for (auto& b : blocks) {
    const uint32_t len = get_u32();
    b.name.resize(len);
    is.read(b.name.data(), len);
    const uint64_t cnt = get_u64();
    b.values.resize(cnt);
    is.read(reinterpret_cast<char*>(b.values.data()),
            static_cast<std::streamsize>(cnt * sizeof(double)));
  }
  if (!is) throw std::runtime_error("read_param_blob: truncated stream");
  return blocks;
}

// plain-text dump for debugging
inline void write_param_text(std::ostream& os, std::span<const ParamBlock> blocks) {
  os.precision(17);
  for (const auto& b : blocks) {
    os << "# block " << b.name << " n=" << b.values.size() << "\n";
    for (double v : b.values) os << v << "\n";
  }
}

}  // namespace lr2
