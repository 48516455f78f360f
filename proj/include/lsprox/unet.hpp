#pragma once

#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lsprox/autodiff.hpp"
#include "lsprox/matrix.hpp"

namespace lsprox::unet {

struct UNetConfig {
  int depth = 2;          // number of pooling stages
  int base_channels = 8;  // channels at the top level; doubled per stage
  int in_channels = 1;
  int out_channels = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (depth < 1) throw std::invalid_argument("UNetConfig: depth must be >= 1");
    if (base_channels < 1) throw std::invalid_argument("UNetConfig: base_channels must be >= 1");
    if (in_channels < 1 || out_channels < 1)
      throw std::invalid_argument("UNetConfig: channel counts must be >= 1");
  }
};

struct ParamEntry {
  std::string name;
  ad::Tensor value;
  bool trainable = true;
};

// Ordered parameter set of the hourglass network. BN running statistics are
// carried as non-trainable entries so checkpoints capture the full state.
struct NetworkParams {
  UNetConfig config;
  std::vector<ParamEntry> entries;

  ParamEntry& find(const std::string& name) {
    for (ParamEntry& e : entries)
      if (e.name == name) return e;
    throw std::out_of_range("NetworkParams: no entry named '" + name + "'");
  }
  const ParamEntry& find(const std::string& name) const {
    return const_cast<NetworkParams*>(this)->find(name);
  }
  std::vector<std::size_t> trainable_indices() const {
    std::vector<std::size_t> ix;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].trainable) ix.push_back(i);
    return ix;
  }
  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const ParamEntry& e : entries)
      if (e.trainable) n += static_cast<std::size_t>(e.value.size());
    return n;
  }
};

namespace detail {

inline int channels_at(const UNetConfig& cfg, int level) {
  return cfg.base_channels << level;  // level == depth is the bottleneck width
}

struct Builder {
  NetworkParams& params;
  std::mt19937_64 rng;

  void he_conv(const std::string& name, int cout, int cin, int k) {
    ad::Tensor w(ad::Shape{cout, cin, k, k});
    const double stddev = std::sqrt(2.0 / (cin * k * k));
    std::normal_distribution<double> dist(0.0, stddev);
    for (int i = 0; i < w.size(); ++i) w[i] = dist(rng);
    params.entries.push_back({name + ".w", std::move(w), true});
    params.entries.push_back({name + ".b", ad::Tensor(ad::Shape{1, cout, 1, 1}), true});
  }

  // Transposed-conv kernel stored as (C_in, C_out, k, k).
  void he_up(const std::string& name, int cin, int cout, int k) {
    ad::Tensor w(ad::Shape{cin, cout, k, k});
    const double stddev = std::sqrt(2.0 / (cin * k * k));
    std::normal_distribution<double> dist(0.0, stddev);
    for (int i = 0; i < w.size(); ++i) w[i] = dist(rng);
    params.entries.push_back({name + ".w", std::move(w), true});
    params.entries.push_back({name + ".b", ad::Tensor(ad::Shape{1, cout, 1, 1}), true});
  }

  void bn(const std::string& name, int c) {
    params.entries.push_back({name + ".gamma", ad::Tensor(ad::Shape{1, c, 1, 1}, 1.0), true});
    params.entries.push_back({name + ".beta", ad::Tensor(ad::Shape{1, c, 1, 1}, 0.0), true});
    params.entries.push_back({name + ".mean", ad::Tensor(ad::Shape{1, c, 1, 1}, 0.0), false});
    params.entries.push_back({name + ".var", ad::Tensor(ad::Shape{1, c, 1, 1}, 1.0), false});
  }

  void conv_bn_block(const std::string& prefix, int idx, int cin, int cout) {
    const std::string tag = std::to_string(idx);
    he_conv(prefix + ".conv" + tag, cout, cin, 3);
    bn(prefix + ".bn" + tag, cout);
  }
};

}  // namespace detail

inline NetworkParams build(const UNetConfig& cfg) {
  cfg.validate();
  NetworkParams params;
  params.config = cfg;
  detail::Builder b{params, std::mt19937_64(cfg.seed)};
  for (int i = 0; i < cfg.depth; ++i) {
    const int cin = i == 0 ? cfg.in_channels : detail::channels_at(cfg, i - 1);
    const int c = detail::channels_at(cfg, i);
    b.conv_bn_block("enc" + std::to_string(i), 1, cin, c);
    b.conv_bn_block("enc" + std::to_string(i), 2, c, c);
  }
  {
    const int cin = detail::channels_at(cfg, cfg.depth - 1);
    const int c = detail::channels_at(cfg, cfg.depth);
    b.conv_bn_block("bott", 1, cin, c);
    b.conv_bn_block("bott", 2, c, c);
  }
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const int cup = detail::channels_at(cfg, i + 1);
    const int c = detail::channels_at(cfg, i);
    const std::string prefix = "dec" + std::to_string(i);
    b.he_up(prefix + ".up", cup, c, 2);
    b.conv_bn_block(prefix, 1, 2 * c, c);
    b.conv_bn_block(prefix, 2, c, c);
  }
  b.he_conv("head", cfg.out_channels, cfg.base_channels, 1);
  return params;
}

// Trainable-parameter count for a configuration, without building tensors.
inline std::size_t param_count(const UNetConfig& cfg) {
  cfg.validate();
  auto conv = [](int cin, int cout, int k) {
    return static_cast<std::size_t>((k * k * cin + 1) * cout);
  };
  auto bn = [](int c) { return static_cast<std::size_t>(2 * c); };
  std::size_t total = 0;
  for (int i = 0; i < cfg.depth; ++i) {
    const int cin = i == 0 ? cfg.in_channels : detail::channels_at(cfg, i - 1);
    const int c = detail::channels_at(cfg, i);
    total += conv(cin, c, 3) + bn(c) + conv(c, c, 3) + bn(c);
  }
  {
    const int cin = detail::channels_at(cfg, cfg.depth - 1);
    const int c = detail::channels_at(cfg, cfg.depth);
    total += conv(cin, c, 3) + bn(c) + conv(c, c, 3) + bn(c);
  }
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const int cup = detail::channels_at(cfg, i + 1);
    const int c = detail::channels_at(cfg, i);
    total += conv(cup, c, 2);  // 2x2 up-convolution
    total += conv(2 * c, c, 3) + bn(c) + conv(c, c, 3) + bn(c);
  }
  total += conv(cfg.base_channels, cfg.out_channels, 1);
  return total;
}

struct ForwardBind {
  ad::Graph::NodeId output = -1;
  // entry index in params -> leaf id in the graph, for every trainable entry
  std::vector<std::pair<std::size_t, ad::Graph::NodeId>> trainable;
};

// Records the network forward pass on an existing graph. Trainable entries
// become requires_grad leaves; BN running stats are read (and, when training,
// updated) in place.
inline ForwardBind bind_forward(ad::Graph& g, NetworkParams& params, ad::Graph::NodeId input,
                                bool training, double bn_eps = 1e-5,
                                double bn_momentum = 0.1) {
  const UNetConfig& cfg = params.config;
  const ad::Shape in_shape = g.value(input).shape();
  if (in_shape.c != cfg.in_channels)
    throw std::invalid_argument("unet::forward: expected " + std::to_string(cfg.in_channels) +
                                " input channels, got " + in_shape.str());
  const int div = 1 << cfg.depth;
  if (in_shape.h % div != 0 || in_shape.w % div != 0)
    throw std::invalid_argument("unet::forward: H and W must be divisible by " +
                                std::to_string(div) + ", got " + in_shape.str());

  ForwardBind bind;
  auto leaf_of = [&](const std::string& name) {
    for (std::size_t i = 0; i < params.entries.size(); ++i) {
      if (params.entries[i].name != name) continue;
      ad::Tensor t = params.entries[i].value;
      t.requires_grad = params.entries[i].trainable;
      ad::Graph::NodeId id = g.leaf(std::move(t));
      if (params.entries[i].trainable) bind.trainable.push_back({i, id});
      return id;
    }
    throw std::out_of_range("unet::forward: missing parameter '" + name + "'");
  };

  auto conv_bn_relu = [&](ad::Graph::NodeId x, const std::string& prefix, int idx) {
    const std::string tag = std::to_string(idx);
    ad::Graph::NodeId w = leaf_of(prefix + ".conv" + tag + ".w");
    ad::Graph::NodeId bb = leaf_of(prefix + ".conv" + tag + ".b");
    ad::Graph::NodeId y = g.conv2d(x, w, bb);
    ad::Graph::NodeId gamma = leaf_of(prefix + ".bn" + tag + ".gamma");
    ad::Graph::NodeId beta = leaf_of(prefix + ".bn" + tag + ".beta");
    y = g.batch_norm(y, gamma, beta, params.find(prefix + ".bn" + tag + ".mean").value,
                     params.find(prefix + ".bn" + tag + ".var").value, bn_eps, bn_momentum,
                     training);
    return g.relu(y);
  };

  ad::Graph::NodeId cur = input;
  std::vector<ad::Graph::NodeId> skips;
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string prefix = "enc" + std::to_string(i);
    cur = conv_bn_relu(cur, prefix, 1);
    cur = conv_bn_relu(cur, prefix, 2);
    skips.push_back(cur);
    cur = g.max_pool2(cur);
  }
  cur = conv_bn_relu(cur, "bott", 1);
  cur = conv_bn_relu(cur, "bott", 2);
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const std::string prefix = "dec" + std::to_string(i);
    cur = g.up_conv2(cur, leaf_of(prefix + ".up.w"), leaf_of(prefix + ".up.b"));
    cur = g.concat_channels(skips[static_cast<std::size_t>(i)], cur);
    cur = conv_bn_relu(cur, prefix, 1);
    cur = conv_bn_relu(cur, prefix, 2);
  }
  bind.output = g.conv2d(cur, leaf_of("head.w"), leaf_of("head.b"));
  return bind;
}

// One-off forward pass; linear (signed) output with the input's spatial shape.
inline ad::Tensor forward(NetworkParams& params, const ad::Tensor& x, bool training) {
  ad::Graph g;
  ad::Tensor in = x;
  in.requires_grad = false;
  ForwardBind bind = bind_forward(g, params, g.leaf(std::move(in)), training);
  return g.value(bind.output);
}

// Column j of the result is frame j of the (N,1,H,W) tensor in row-major
// pixel order; the round trip with from_matrix is exact.
inline Matrix to_matrix(const ad::Tensor& x) {
  if (x.shape().c != 1)
    throw std::invalid_argument("to_matrix: tensor must be (N,1,H,W), got " + x.shape().str());
  const int m = x.shape().h * x.shape().w;
  Matrix out(m, x.shape().n);
  std::memcpy(out.data(), x.data(), sizeof(double) * static_cast<std::size_t>(x.size()));
  return out;
}

inline ad::Tensor from_matrix(const Matrix& q, int h, int w) {
  if (q.rows() != static_cast<Eigen::Index>(h) * w)
    throw std::invalid_argument("from_matrix: rows must equal h*w");
  ad::Tensor out(ad::Shape{static_cast<int>(q.cols()), 1, h, w});
  std::memcpy(out.data(), q.data(), sizeof(double) * static_cast<std::size_t>(out.size()));
  return out;
}

}  // namespace lsprox::unet
