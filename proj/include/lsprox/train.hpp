#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsprox/autodiff.hpp"
#include "lsprox/unet.hpp"

namespace lsprox::train {

struct Phase1Config {
  int epochs = 2000;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lambda_star = 1.0;
  double lambda_1 = 5e-3;
  std::uint64_t seed = 0;  // reserved; full-batch training draws no randomness

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("Phase1Config: epochs must be >= 0");
    if (!(lr > 0.0)) throw std::invalid_argument("Phase1Config: lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw std::invalid_argument("Phase1Config: betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("Phase1Config: eps must be > 0");
    if (!(lambda_star >= 0.0) || !(lambda_1 >= 0.0))
      throw std::invalid_argument("Phase1Config: lambdas must be >= 0");
  }
};

struct Phase2Config {
  int iters = 3000;
  double lr = 3e-8;
  double alpha = 0.5;
  double tau_star = -1.0;  // < 0: use alpha * lambda_star
  double tau_1 = -1.0;     // < 0: use alpha * lambda_1

  void validate() const {
    if (iters < 0) throw std::invalid_argument("Phase2Config: iters must be >= 0");
    if (!(lr > 0.0)) throw std::invalid_argument("Phase2Config: lr must be > 0");
    if (!(alpha > 0.0 && alpha <= 1.0))
      throw std::invalid_argument("Phase2Config: alpha must lie in (0, 1]");
  }
};

struct AdamState {
  std::vector<ad::Tensor> m;  // aligned with the trainable entries of the params
  std::vector<ad::Tensor> v;
  long t = 0;
};

// Record of every network forward a training routine issued, so the BN mode
// discipline (train steps in training mode, snapshots in eval mode) can be
// checked from outside.
struct ForwardEvent {
  enum class Purpose { TrainStep, Snapshot };
  Purpose purpose;
  bool training;
};

struct TrainResult {
  std::vector<double> loss_history;
  std::vector<ForwardEvent> forwards;
};

struct Phase1LossBind {
  ad::Graph::NodeId loss = -1;
  unet::ForwardBind fwd;
};

// loss(theta) = lambda_star ||D - S_theta(D)||_* + lambda_1 ||S_theta(D)||_1,
// both norms on the (H*W x N) matrix arrangement; Subgradient backward.
inline Phase1LossBind bind_phase1_loss(ad::Graph& g, unet::NetworkParams& params,
                                       const ad::Tensor& d, double lambda_star, double lambda_1,
                                       bool training) {
  Phase1LossBind bind;
  ad::Graph::NodeId d_id = g.constant(d);
  bind.fwd = unet::bind_forward(g, params, d_id, training);
  ad::Graph::NodeId resid = g.sub(d_id, bind.fwd.output);
  ad::Graph::NodeId nuc = g.nuclear_loss(resid, ad::LossGradMode::subgradient());
  ad::Graph::NodeId l1 = g.l1_loss(bind.fwd.output, ad::LossGradMode::subgradient());
  bind.loss = g.add(g.scale(nuc, lambda_star), g.scale(l1, lambda_1));
  return bind;
}

inline double loss_phase1(unet::NetworkParams& params, const ad::Tensor& d, double lambda_star,
                          double lambda_1, bool training = false) {
  ad::Graph g;
  Phase1LossBind bind = bind_phase1_loss(g, params, d, lambda_star, lambda_1, training);
  return g.value(bind.loss)[0];
}

// Phase-2 refinement loss on given snapshot constants L, S and a fresh
// network output:
//   lambda_star ||L + alpha (S - S_theta(D))||_* + lambda_1 ||S_theta(D) + alpha (S - S_theta(D))||_1
// with ProxResidual(tau) backward on both norms.
inline ad::Graph::NodeId bind_phase2_loss(ad::Graph& g, ad::Graph::NodeId l_snap,
                                          ad::Graph::NodeId s_snap, ad::Graph::NodeId s_fresh,
                                          double alpha, double lambda_star, double lambda_1,
                                          double tau_star, double tau_1) {
  ad::Graph::NodeId diff = g.sub(s_snap, s_fresh);
  ad::Graph::NodeId step = g.scale(diff, alpha);
  ad::Graph::NodeId nuc_arg = g.add(l_snap, step);
  ad::Graph::NodeId l1_arg = g.add(s_fresh, step);
  ad::Graph::NodeId nuc = g.nuclear_loss(nuc_arg, ad::LossGradMode::prox_residual(tau_star));
  ad::Graph::NodeId l1 = g.l1_loss(l1_arg, ad::LossGradMode::prox_residual(tau_1));
  return g.add(g.scale(nuc, lambda_star), g.scale(l1, lambda_1));
}

namespace detail {

// Gradients of the trainable entries, ordered like params.trainable_indices().
inline std::vector<ad::Tensor> collect_grads(const ad::Graph& g,
                                             const unet::NetworkParams& params,
                                             const unet::ForwardBind& fwd) {
  const std::vector<std::size_t> order = params.trainable_indices();
  std::vector<ad::Tensor> grads(order.size());
  if (fwd.trainable.size() != order.size())
    throw std::logic_error("collect_grads: forward did not bind every trainable entry");
  for (const auto& [entry_ix, leaf_id] : fwd.trainable) {
    std::size_t slot = 0;
    while (slot < order.size() && order[slot] != entry_ix) ++slot;
    if (slot == order.size())
      throw std::logic_error("collect_grads: bound entry is not trainable");
    grads[slot] = g.grad(leaf_id);
  }
  return grads;
}

}  // namespace detail

// One bias-corrected Adam update; `grads` aligned with trainable_indices().
inline void adam_step(unet::NetworkParams& params, const std::vector<ad::Tensor>& grads,
                      AdamState& state, double lr, double beta1, double beta2, double eps) {
  const std::vector<std::size_t> order = params.trainable_indices();
  if (grads.size() != order.size())
    throw std::invalid_argument("adam_step: gradient count mismatch");
  if (state.m.empty()) {
    state.m.reserve(order.size());
    state.v.reserve(order.size());
    for (std::size_t ix : order) {
      state.m.emplace_back(params.entries[ix].value.shape());
      state.v.emplace_back(params.entries[ix].value.shape());
    }
    state.t = 0;
  }
  if (state.m.size() != order.size())
    throw std::invalid_argument("adam_step: state does not match parameter set");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t s = 0; s < order.size(); ++s) {
    ad::Tensor& theta = params.entries[order[s]].value;
    const ad::Tensor& gr = grads[s];
    if (!(gr.shape() == theta.shape()))
      throw std::invalid_argument("adam_step: gradient shape mismatch for '" +
                                  params.entries[order[s]].name + "'");
    ad::Tensor& m = state.m[s];
    ad::Tensor& v = state.v[s];
    for (int i = 0; i < theta.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * gr[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * gr[i] * gr[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// Phase 1: full-batch Adam on the nuclear + l1 output loss.
inline TrainResult train_phase1(unet::NetworkParams& params, const ad::Tensor& d,
                                const Phase1Config& cfg) {
  cfg.validate();
  TrainResult result;
  result.loss_history.reserve(static_cast<std::size_t>(cfg.epochs));
  AdamState state;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    try {
      ad::Graph g;
      Phase1LossBind bind =
          bind_phase1_loss(g, params, d, cfg.lambda_star, cfg.lambda_1, true);
      result.forwards.push_back({ForwardEvent::Purpose::TrainStep, true});
      const double loss = g.value(bind.loss)[0];
      if (std::isnan(loss)) throw std::runtime_error("loss is NaN");
      result.loss_history.push_back(loss);
      g.backward(bind.loss);
      adam_step(params, detail::collect_grads(g, params, bind.fwd), state, cfg.lr, cfg.beta1,
                cfg.beta2, cfg.eps);
    } catch (const std::exception& e) {
      throw std::runtime_error("train_phase1: epoch " + std::to_string(epoch) + ": " + e.what());
    }
  }
  return result;
}

// Phase 2: proximal-mapping refinement. Each iteration snapshots L and S from
// an eval-mode forward, rebuilds the loss around a fresh training-mode
// forward, and takes one plain gradient-descent step.
inline TrainResult train_phase2(unet::NetworkParams& params, const ad::Tensor& d,
                                const Phase2Config& cfg, double lambda_star, double lambda_1) {
  cfg.validate();
  if (!(lambda_star >= 0.0) || !(lambda_1 >= 0.0))
    throw std::invalid_argument("train_phase2: lambdas must be >= 0");
  const double tau_star = cfg.tau_star < 0.0 ? cfg.alpha * lambda_star : cfg.tau_star;
  const double tau_1 = cfg.tau_1 < 0.0 ? cfg.alpha * lambda_1 : cfg.tau_1;
  TrainResult result;
  result.loss_history.reserve(static_cast<std::size_t>(cfg.iters));
  const std::vector<std::size_t> order = params.trainable_indices();
  for (int iter = 1; iter <= cfg.iters; ++iter) {
    try {
      const ad::Tensor s_snap = unet::forward(params, d, false);
      result.forwards.push_back({ForwardEvent::Purpose::Snapshot, false});
      const ad::Tensor l_snap = ad::tensor_sub(d, s_snap);

      ad::Graph g;
      unet::ForwardBind fwd = unet::bind_forward(g, params, g.constant(d), true);
      result.forwards.push_back({ForwardEvent::Purpose::TrainStep, true});
      ad::Graph::NodeId loss_id =
          bind_phase2_loss(g, g.constant(l_snap), g.constant(s_snap), fwd.output, cfg.alpha,
                           lambda_star, lambda_1, tau_star, tau_1);
      const double loss = g.value(loss_id)[0];
      if (std::isnan(loss)) throw std::runtime_error("loss is NaN");
      result.loss_history.push_back(loss);
      g.backward(loss_id);
      const std::vector<ad::Tensor> grads = detail::collect_grads(g, params, fwd);
      for (std::size_t s = 0; s < order.size(); ++s) {
        ad::Tensor& theta = params.entries[order[s]].value;
        for (int i = 0; i < theta.size(); ++i) theta[i] -= cfg.lr * grads[s][i];
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("train_phase2: iteration " + std::to_string(iter) + ": " +
                               e.what());
    }
  }
  return result;
}

// One "step<TAB>loss" line per entry, losses with 17 significant digits.
inline void write_loss_history(const std::string& path, const std::vector<double>& history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_loss_history: cannot open '" + path + "'");
  char buf[64];
  for (std::size_t i = 0; i < history.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu\t%.17g\n", i + 1, history[i]);
    os << buf;
  }
  if (!os) throw std::runtime_error("write_loss_history: write failed for '" + path + "'");
}

}  // namespace lsprox::train
