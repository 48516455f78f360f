#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsprox/unet.hpp"

namespace lsprox::unet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace detail {

constexpr char kCkptMagic[8] = {'L', 'S', 'P', 'X', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

}  // namespace detail

// Layout: 8-byte magic, u32 version, u32 depth/base/in/out, u64 seed,
// u64 tensor count; then per tensor: u32 name length, name bytes,
// 4 x u32 shape (N,C,H,W), little-endian f64 payload.
inline void save_checkpoint(const NetworkParams& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  detail::write_pod(os, detail::kCkptVersion);
  detail::write_pod(os, static_cast<std::uint32_t>(params.config.depth));
  detail::write_pod(os, static_cast<std::uint32_t>(params.config.base_channels));
  detail::write_pod(os, static_cast<std::uint32_t>(params.config.in_channels));
  detail::write_pod(os, static_cast<std::uint32_t>(params.config.out_channels));
  detail::write_pod(os, static_cast<std::uint64_t>(params.config.seed));
  detail::write_pod(os, static_cast<std::uint64_t>(params.entries.size()));
  for (const ParamEntry& e : params.entries) {
    detail::write_pod(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const ad::Shape s = e.value.shape();
    detail::write_pod(os, static_cast<std::uint32_t>(s.n));
    detail::write_pod(os, static_cast<std::uint32_t>(s.c));
    detail::write_pod(os, static_cast<std::uint32_t>(s.h));
    detail::write_pod(os, static_cast<std::uint32_t>(s.w));
    os.write(reinterpret_cast<const char*>(e.value.data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(e.value.size())));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

inline NetworkParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file");
  const auto version = detail::read_pod<std::uint32_t>(is, "version");
  if (version != detail::kCkptVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

  UNetConfig cfg;
  cfg.depth = static_cast<int>(detail::read_pod<std::uint32_t>(is, "depth"));
  cfg.base_channels = static_cast<int>(detail::read_pod<std::uint32_t>(is, "base_channels"));
  cfg.in_channels = static_cast<int>(detail::read_pod<std::uint32_t>(is, "in_channels"));
  cfg.out_channels = static_cast<int>(detail::read_pod<std::uint32_t>(is, "out_channels"));
  cfg.seed = detail::read_pod<std::uint64_t>(is, "seed");
  const auto count = detail::read_pod<std::uint64_t>(is, "tensor count");

  // Rebuild the skeleton so entry order and trainable flags come from the
  // architecture, then overwrite every tensor from the file.
  NetworkParams params = build(cfg);
  if (count != params.entries.size())
    throw std::runtime_error("checkpoint: tensor count " + std::to_string(count) +
                             " does not match architecture (" +
                             std::to_string(params.entries.size()) + ")");
  for (std::uint64_t t = 0; t < count; ++t) {
    const auto name_len = detail::read_pod<std::uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw std::runtime_error("checkpoint: truncated while reading a tensor name");
    ad::Shape s;
    s.n = static_cast<int>(detail::read_pod<std::uint32_t>(is, "shape"));
    s.c = static_cast<int>(detail::read_pod<std::uint32_t>(is, "shape"));
    s.h = static_cast<int>(detail::read_pod<std::uint32_t>(is, "shape"));
    s.w = static_cast<int>(detail::read_pod<std::uint32_t>(is, "shape"));
    ParamEntry& e = params.find(name);
    if (!(e.value.shape() == s))
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file has " +
                               s.str() + ", architecture needs " + e.value.shape().str());
    is.read(reinterpret_cast<char*>(e.value.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(e.value.size())));
    if (!is) throw std::runtime_error("checkpoint: truncated payload for '" + name + "'");
  }
  return params;
}

}  // namespace lsprox::unet
