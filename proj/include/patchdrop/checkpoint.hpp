#pragma once

// Binary network checkpoints.
//
//   "PDNN"                     4 bytes magic
//   u32 version                currently 1
//   u32 input rank, u32 dims   per-sample input shape
//   u32 layer count
//   per layer:
//     u32 kind tag             LayerKind
//     u32 n, u32 dims[n]       structural config (see Layer::config)
//     u32 tensor count
//     per tensor: u32 rank, u32 dims[rank], f32 data (little endian)

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <string>

#include "patchdrop/nn.hpp"

namespace patchdrop {

inline constexpr std::array<char, 4> kCheckpointMagic{'P', 'D', 'N', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw Error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float f) {
  write_u32(os, std::bit_cast<std::uint32_t>(f));
}

inline float read_f32(std::istream& is) {
  return std::bit_cast<float>(read_u32(is));
}

template <typename T>
std::unique_ptr<Layer<T>> make_layer(LayerKind kind,
                                     const std::vector<std::uint32_t>& cfg) {
  auto need = [&](std::size_t n) {
    if (cfg.size() != n)
      throw Error("checkpoint: bad config length for " +
                  std::string(layer_kind_name(kind)));
  };
  switch (kind) {
    case LayerKind::kConv2d:
      need(5);
      return std::make_unique<Conv2d<T>>(cfg[0], cfg[1], cfg[2], cfg[3], cfg[4]);
    case LayerKind::kDense:
      need(2);
      return std::make_unique<Dense<T>>(cfg[0], cfg[1]);
    case LayerKind::kRelu: need(0); return std::make_unique<Relu<T>>();
    case LayerKind::kSigmoid: need(0); return std::make_unique<Sigmoid<T>>();
    case LayerKind::kSoftmax: need(0); return std::make_unique<Softmax<T>>();
    case LayerKind::kFlatten: need(0); return std::make_unique<Flatten<T>>();
    case LayerKind::kGlobalAvgPool:
      need(0);
      return std::make_unique<GlobalAvgPool<T>>();
  }
  throw Error("checkpoint: unknown layer tag " +
              std::to_string(static_cast<std::uint32_t>(kind)));
}

}  // namespace detail

template <typename T>
void write_checkpoint(std::ostream& os, const Network<T>& net) {
  os.write(kCheckpointMagic.data(), 4);
  detail::write_u32(os, kCheckpointVersion);
  detail::write_u32(os, static_cast<std::uint32_t>(net.input_shape().size()));
  for (auto d : net.input_shape()) detail::write_u32(os, static_cast<std::uint32_t>(d));
  detail::write_u32(os, static_cast<std::uint32_t>(net.num_layers()));
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    const auto& l = net.layer(i);
    detail::write_u32(os, static_cast<std::uint32_t>(l.kind()));
    const auto cfg = l.config();
    detail::write_u32(os, static_cast<std::uint32_t>(cfg.size()));
    for (auto c : cfg) detail::write_u32(os, c);
    detail::write_u32(os, static_cast<std::uint32_t>(l.params().size()));
    for (const auto& p : l.params()) {
      detail::write_u32(os, static_cast<std::uint32_t>(p.rank()));
      for (auto d : p.shape()) detail::write_u32(os, static_cast<std::uint32_t>(d));
      for (auto v : p.vec()) detail::write_f32(os, static_cast<float>(v));
    }
  }
  if (!os) throw Error("checkpoint: write failed");
}

template <typename T>
Network<T> read_checkpoint(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kCheckpointMagic)
    throw Error("checkpoint: bad magic (expected PDNN)");
  const auto version = detail::read_u32(is);
  if (version != kCheckpointVersion)
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  Shape input(detail::read_u32(is));
  for (auto& d : input) d = detail::read_u32(is);
  Network<T> net(input);
  const auto layers = detail::read_u32(is);
  for (std::uint32_t i = 0; i < layers; ++i) {
    const auto kind = static_cast<LayerKind>(detail::read_u32(is));
    std::vector<std::uint32_t> cfg(detail::read_u32(is));
    for (auto& c : cfg) c = detail::read_u32(is);
    auto layer = detail::make_layer<T>(kind, cfg);
    const auto count = detail::read_u32(is);
    if (count != layer->params().size())
      throw Error("checkpoint: layer " + std::to_string(i) +
                  " has wrong parameter count");
    for (auto& p : layer->params()) {
      Shape s(detail::read_u32(is));
      for (auto& d : s) d = detail::read_u32(is);
      if (s != p.shape())
        throw Error("checkpoint: layer " + std::to_string(i) +
                    " parameter shape " + shape_str(s) + " != " +
                    shape_str(p.shape()));
      for (auto& v : p.vec()) v = static_cast<T>(detail::read_f32(is));
    }
    net.add_layer(std::move(layer));
  }
  net.output_shape();
  return net;
}

template <typename T>
void save_checkpoint(const std::string& path, const Network<T>& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("checkpoint: cannot open " + path + " for writing");
  write_checkpoint(os, net);
}

template <typename T>
Network<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open " + path);
  return read_checkpoint<T>(is);
}

}  // namespace patchdrop
