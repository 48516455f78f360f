#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lsprox/matrix.hpp"
#include "lsprox/prox_ops.hpp"

namespace lsprox::ad {

struct Shape {
  int n = 0, c = 0, h = 0, w = 0;
  int size() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

// Dense NCHW tensor, row-major within each sample.
class Tensor {
 public:
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0)
      : shape_(s), v_(static_cast<std::size_t>(check_shape(s).size()), fill) {}

  static Tensor zeros(Shape s) { return Tensor(s); }

  const Shape& shape() const { return shape_; }
  int size() const { return shape_.size(); }

  double& at(int n, int c, int h, int w) { return v_[flat(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const { return v_[flat(n, c, h, w)]; }
  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  bool same_values(const Tensor& o) const { return shape_ == o.shape_ && v_ == o.v_; }

 private:
  static const Shape& check_shape(const Shape& s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
      throw std::invalid_argument("Tensor: all dimensions must be >= 1, got " + s.str());
    return s;
  }
  std::size_t flat(int n, int c, int h, int w) const {
    return static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w);
  }

  Shape shape_;
  std::vector<double> v_;
};

inline Tensor tensor_sub(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument("tensor_sub: shapes differ " + a.shape().str() + " vs " +
                                b.shape().str());
  Tensor out(a.shape());
  for (int i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

// Backward behavior of the non-smooth loss nodes.
struct LossGradMode {
  enum class Kind { Subgradient, ProxResidual };
  Kind kind = Kind::Subgradient;
  double tau = 0.0;

  static LossGradMode subgradient() { return {Kind::Subgradient, 0.0}; }
  static LossGradMode prox_residual(double tau) {
    require_nonneg(tau, "LossGradMode::prox_residual");
    return {Kind::ProxResidual, tau};
  }
};

// Recording tape for reverse-mode differentiation over 4-D tensors.
// Single-threaded during record/backward; backward may run once per graph.
class Graph {
 public:
  using NodeId = int;

  NodeId leaf(Tensor t) {
    check_finite(t, "leaf");
    const bool rg = t.requires_grad;
    return push(Op::Leaf, {-1, -1, -1}, std::move(t), rg, std::monostate{});
  }

  NodeId constant(Tensor t) {
    t.requires_grad = false;
    return leaf(std::move(t));
  }

  // k x k cross-correlation (k odd), padding k/2, stride 1, so H and W are
  // preserved. w: (C_out, C_in, k, k); b: (1, C_out, 1, 1).
  NodeId conv2d(NodeId x, NodeId w, NodeId b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    if (wv.shape().h != wv.shape().w || wv.shape().h % 2 == 0)
      throw std::invalid_argument("conv2d: kernel must be square with odd size, got " +
                                  wv.shape().str());
    if (wv.shape().c != xv.shape().c)
      throw std::invalid_argument("conv2d: channel mismatch, input " + xv.shape().str() +
                                  " vs kernel " + wv.shape().str());
    const int cout = wv.shape().n;
    if (!(bv.shape() == Shape{1, cout, 1, 1}))
      throw std::invalid_argument("conv2d: bias must be (1," + std::to_string(cout) + ",1,1)");
    Tensor out(Shape{xv.shape().n, cout, xv.shape().h, xv.shape().w});
    conv_forward(xv, wv, bv, out);
    return push(Op::Conv2d, {x, w, b}, std::move(out), any_needs_grad({x, w, b}),
                std::monostate{});
  }

  // 2x2 transposed convolution, stride 2. w: (C_in, C_out, 2, 2); b: (1, C_out, 1, 1).
  NodeId up_conv2(NodeId x, NodeId w, NodeId b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    if (wv.shape().h != 2 || wv.shape().w != 2)
      throw std::invalid_argument("up_conv2: kernel must be 2x2, got " + wv.shape().str());
    if (wv.shape().n != xv.shape().c)
      throw std::invalid_argument("up_conv2: channel mismatch, input " + xv.shape().str() +
                                  " vs kernel " + wv.shape().str());
    const int cout = wv.shape().c;
    if (!(bv.shape() == Shape{1, cout, 1, 1}))
      throw std::invalid_argument("up_conv2: bias must be (1," + std::to_string(cout) + ",1,1)");
    Tensor out(Shape{xv.shape().n, cout, 2 * xv.shape().h, 2 * xv.shape().w});
    up_conv_forward(xv, wv, bv, out);
    return push(Op::UpConv2, {x, w, b}, std::move(out), any_needs_grad({x, w, b}),
                std::monostate{});
  }

  // Per-channel batch normalization. gamma/beta: (1, C, 1, 1) nodes; running stats
  // are owned by the caller and updated in place when training.
  NodeId batch_norm(NodeId x, NodeId gamma, NodeId beta, Tensor& running_mean,
                    Tensor& running_var, double eps, double momentum, bool training) {
    const Tensor& xv = value(x);
    const int C = xv.shape().c;
    const Shape per_channel{1, C, 1, 1};
    if (!(value(gamma).shape() == per_channel) || !(value(beta).shape() == per_channel) ||
        !(running_mean.shape() == per_channel) || !(running_var.shape() == per_channel))
      throw std::invalid_argument("batch_norm: gamma/beta/running stats must be (1," +
                                  std::to_string(C) + ",1,1)");
    if (!(eps > 0.0)) throw std::invalid_argument("batch_norm: eps must be > 0");
    const int m = xv.shape().n * xv.shape().h * xv.shape().w;
    if (training && m < 2)
      throw std::invalid_argument("batch_norm: training needs >= 2 values per channel");

    BnCtx ctx;
    ctx.training = training;
    ctx.xhat = Tensor(xv.shape());
    ctx.invstd.resize(static_cast<std::size_t>(C));
    Tensor out(xv.shape());
    const Tensor& gv = value(gamma);
    const Tensor& bv = value(beta);
    for (int c = 0; c < C; ++c) {
      double mean, var;
      if (training) {
        double sum = 0.0;
        for_channel(xv, c, [&](double v) { sum += v; });
        mean = sum / m;
        double sq = 0.0;
        for_channel(xv, c, [&](double v) { sq += (v - mean) * (v - mean); });
        var = sq / m;
        running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean;
        running_var[c] = (1.0 - momentum) * running_var[c] +
                         momentum * var * static_cast<double>(m) / (m - 1);
      } else {
        mean = running_mean[c];
        var = running_var[c];
      }
      const double invstd = 1.0 / std::sqrt(var + eps);
      ctx.invstd[static_cast<std::size_t>(c)] = invstd;
      const double g = gv[static_cast<std::size_t>(c)];
      const double b = bv[static_cast<std::size_t>(c)];
      map_channel(xv, ctx.xhat, out, c, [&](double v, double& xh, double& y) {
        xh = (v - mean) * invstd;
        y = g * xh + b;
      });
    }
    return push(Op::BatchNorm, {x, gamma, beta}, std::move(out),
                any_needs_grad({x, gamma, beta}), std::move(ctx));
  }

  NodeId relu(NodeId x) {
    const Tensor& xv = value(x);
    Tensor out(xv.shape());
    for (int i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return push(Op::Relu, {x, -1, -1}, std::move(out), any_needs_grad({x}), std::monostate{});
  }

  // 2x2 max pooling, stride 2; requires even H and W.
  NodeId max_pool2(NodeId x) {
    const Tensor& xv = value(x);
    const Shape s = xv.shape();
    if (s.h % 2 != 0 || s.w % 2 != 0)
      throw std::invalid_argument("max_pool2: H and W must be even, got " + s.str());
    Tensor out(Shape{s.n, s.c, s.h / 2, s.w / 2});
    PoolCtx ctx;
    ctx.argmax.resize(static_cast<std::size_t>(out.size()));
    std::size_t oi = 0;
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int i = 0; i < s.h; i += 2)
          for (int j = 0; j < s.w; j += 2) {
            int best_h = i, best_w = j;
            double best = xv.at(n, c, i, j);
            for (int di = 0; di < 2; ++di)
              for (int dj = 0; dj < 2; ++dj) {
                const double v = xv.at(n, c, i + di, j + dj);
                if (v > best) {
                  best = v;
                  best_h = i + di;
                  best_w = j + dj;
                }
              }
            out[oi] = best;
            ctx.argmax[oi] = ((n * s.c + c) * s.h + best_h) * s.w + best_w;
            ++oi;
          }
    return push(Op::MaxPool2, {x, -1, -1}, std::move(out), any_needs_grad({x}), std::move(ctx));
  }

  NodeId concat_channels(NodeId a, NodeId b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const Shape sa = av.shape(), sb = bv.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
      throw std::invalid_argument("concat_channels: N/H/W mismatch " + sa.str() + " vs " +
                                  sb.str());
    Tensor out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
    for (int n = 0; n < sa.n; ++n) {
      for (int c = 0; c < sa.c; ++c)
        for (int i = 0; i < sa.h; ++i)
          for (int j = 0; j < sa.w; ++j) out.at(n, c, i, j) = av.at(n, c, i, j);
      for (int c = 0; c < sb.c; ++c)
        for (int i = 0; i < sa.h; ++i)
          for (int j = 0; j < sa.w; ++j) out.at(n, sa.c + c, i, j) = bv.at(n, c, i, j);
    }
    return push(Op::ConcatChannels, {a, b, -1}, std::move(out), any_needs_grad({a, b}),
                std::monostate{});
  }

  NodeId add(NodeId a, NodeId b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!(av.shape() == bv.shape()))
      throw std::invalid_argument("add: shape mismatch " + av.shape().str() + " vs " +
                                  bv.shape().str());
    Tensor out(av.shape());
    for (int i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return push(Op::Add, {a, b, -1}, std::move(out), any_needs_grad({a, b}), std::monostate{});
  }

  NodeId scale(NodeId a, double c) {
    require_finite(c, "scale");
    const Tensor& av = value(a);
    Tensor out(av.shape());
    for (int i = 0; i < av.size(); ++i) out[i] = c * av[i];
    return push(Op::Scale, {a, -1, -1}, std::move(out), any_needs_grad({a}), ScaleCtx{c});
  }

  NodeId sub(NodeId a, NodeId b) { return add(a, scale(b, -1.0)); }

  // Nuclear norm of the (H*W x N) matrix view of a (N,1,H,W) tensor; column j is
  // frame j in row-major pixel order. Backward emits U V^T (Subgradient) or
  // Q - svt(Q, tau) (ProxResidual).
  NodeId nuclear_loss(NodeId x, LossGradMode mode) {
    const Tensor& xv = value(x);
    if (xv.shape().c != 1)
      throw std::invalid_argument("nuclear_loss: input must be (N,1,H,W), got " +
                                  xv.shape().str());
    NuclearCtx ctx;
    ctx.mode = mode;
    ctx.factors = lsprox::svd(matrix_view(xv));
    Tensor out(Shape{1, 1, 1, 1});
    out[0] = ctx.factors.K.sum();
    return push(Op::NuclearLoss, {x, -1, -1}, std::move(out), any_needs_grad({x}),
                std::move(ctx));
  }

  // Sum of absolute entries. Backward emits sign(X) (Subgradient, 0 at 0) or
  // X - soft(X, tau) (ProxResidual).
  NodeId l1_loss(NodeId x, LossGradMode mode) {
    const Tensor& xv = value(x);
    Tensor out(Shape{1, 1, 1, 1});
    double s = 0.0;
    for (int i = 0; i < xv.size(); ++i) s += std::abs(xv[i]);
    out[0] = s;
    return push(Op::L1Loss, {x, -1, -1}, std::move(out), any_needs_grad({x}), L1Ctx{mode});
  }

  const Tensor& value(NodeId id) const { return node(id).val; }

  // Reverse sweep in recording order; may run once per graph.
  void backward(NodeId loss) {
    if (backward_done_) throw std::logic_error("backward: already run on this graph");
    const Node& ln = node(loss);
    if (ln.val.size() != 1)
      throw std::invalid_argument("backward: loss must be a scalar node, got shape " +
                                  ln.val.shape().str());
    backward_done_ = true;
    grads_.assign(nodes_.size(), Tensor{});
    ensure_grad(loss)[0] = 1.0;

    for (NodeId i = loss; i >= 0; --i) {
      Node& nd = nodes_[static_cast<std::size_t>(i)];
      if (!nd.needs_grad || grads_[static_cast<std::size_t>(i)].size() == 0) continue;
      const Tensor& g = grads_[static_cast<std::size_t>(i)];
      if (!g.all_finite())
        throw std::runtime_error("backward: non-finite gradient at node " + std::to_string(i));
      dispatch_backward(i, nd, g);
    }
    // Every requires_grad leaf reports a gradient, zero if unreached.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& nd = nodes_[i];
      if (nd.op == Op::Leaf && nd.val.requires_grad) {
        Tensor& g = ensure_grad(static_cast<NodeId>(i));
        if (!g.all_finite())
          throw std::runtime_error("backward: non-finite gradient at leaf " + std::to_string(i));
      }
    }
  }

  const Tensor& grad(NodeId id) const {
    if (!backward_done_) throw std::logic_error("grad: backward has not been run");
    const Tensor& g = grads_.at(static_cast<std::size_t>(check_id(id)));
    if (g.size() == 0) throw std::logic_error("grad: no gradient tracked for this node");
    return g;
  }

  int num_nodes() const { return static_cast<int>(nodes_.size()); }

 private:
  enum class Op {
    Leaf,
    Conv2d,
    UpConv2,
    BatchNorm,
    Relu,
    MaxPool2,
    ConcatChannels,
    Add,
    Scale,
    NuclearLoss,
    L1Loss
  };

  struct BnCtx {
    Tensor xhat;
    std::vector<double> invstd;
    bool training = false;
  };
  struct PoolCtx {
    std::vector<int> argmax;
  };
  struct ScaleCtx {
    double c = 1.0;
  };
  struct NuclearCtx {
    SvdFactors factors;
    LossGradMode mode;
  };
  struct L1Ctx {
    LossGradMode mode;
  };
  using Ctx = std::variant<std::monostate, BnCtx, PoolCtx, ScaleCtx, NuclearCtx, L1Ctx>;

  struct Node {
    Op op;
    std::array<NodeId, 3> in;
    Tensor val;
    bool needs_grad = false;
    Ctx ctx;
  };

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool backward_done_ = false;

  NodeId check_id(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
      throw std::out_of_range("Graph: bad node id " + std::to_string(id));
    return id;
  }
  Node& node(NodeId id) { return nodes_[static_cast<std::size_t>(check_id(id))]; }
  const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(check_id(id))]; }

  bool any_needs_grad(std::initializer_list<NodeId> ids) const {
    for (NodeId id : ids)
      if (id >= 0 && node(id).needs_grad) return true;
    return false;
  }

  static void check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite())
      throw std::runtime_error(std::string(op) + ": non-finite values in output");
  }

  NodeId push(Op op, std::array<NodeId, 3> in, Tensor val, bool needs_grad, Ctx ctx) {
    if (backward_done_) throw std::logic_error("Graph: cannot record after backward");
    check_finite(val, "forward op");
    nodes_.push_back(Node{op, in, std::move(val), needs_grad, std::move(ctx)});
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  Tensor& ensure_grad(NodeId id) {
    Tensor& g = grads_[static_cast<std::size_t>(id)];
    if (g.size() == 0) g = Tensor(node(id).val.shape());
    return g;
  }

  bool wants(NodeId id) const { return id >= 0 && node(id).needs_grad; }

  template <class F>
  static void for_channel(const Tensor& t, int c, F&& f) {
    const Shape s = t.shape();
    for (int n = 0; n < s.n; ++n)
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) f(t.at(n, c, i, j));
  }

  template <class F>
  static void map_channel(const Tensor& x, Tensor& a, Tensor& b, int c, F&& f) {
    const Shape s = x.shape();
    for (int n = 0; n < s.n; ++n)
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) f(x.at(n, c, i, j), a.at(n, c, i, j), b.at(n, c, i, j));
  }

  static Eigen::Map<const Matrix> matrix_view(const Tensor& t) {
    // (N,1,H,W) viewed as (H*W x N): each sample block is one column.
    return Eigen::Map<const Matrix>(t.data(), t.shape().h * t.shape().w, t.shape().n);
  }

  // --- convolution kernels -------------------------------------------------

  static void im2col(const Tensor& x, int n, int k, RowMat& col) {
    const Shape s = x.shape();
    const int pad = k / 2;
    for (int ci = 0; ci < s.c; ++ci)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw) {
          double* row = col.row((ci * k + kh) * k + kw).data();
          for (int i = 0; i < s.h; ++i) {
            const int si = i + kh - pad;
            for (int j = 0; j < s.w; ++j) {
              const int sj = j + kw - pad;
              row[i * s.w + j] = (si >= 0 && si < s.h && sj >= 0 && sj < s.w)
                                     ? x.at(n, ci, si, sj)
                                     : 0.0;
            }
          }
        }
  }

  static void conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& out) {
    const Shape s = x.shape();
    const int cout = w.shape().n;
    const int k = w.shape().h;
    const int hw = s.h * s.w;
    Eigen::Map<const RowMat> wm(w.data(), cout, s.c * k * k);
    RowMat col(s.c * k * k, hw);
    for (int n = 0; n < s.n; ++n) {
      im2col(x, n, k, col);
      Eigen::Map<RowMat> om(out.data() + static_cast<std::ptrdiff_t>(n) * cout * hw, cout, hw);
      om.noalias() = wm * col;
      for (int co = 0; co < cout; ++co) om.row(co).array() += b[static_cast<std::size_t>(co)];
    }
  }

  void conv_backward(const Node& nd, const Tensor& g) {
    const Tensor& x = value(nd.in[0]);
    const Tensor& w = value(nd.in[1]);
    const Shape s = x.shape();
    const int cout = w.shape().n;
    const int k = w.shape().h;
    const int pad = k / 2;
    const int hw = s.h * s.w;
    Eigen::Map<const RowMat> wm(w.data(), cout, s.c * k * k);
    RowMat col(s.c * k * k, hw);
    const bool want_x = wants(nd.in[0]);
    const bool want_w = wants(nd.in[1]);
    const bool want_b = wants(nd.in[2]);
    Tensor* gx = want_x ? &ensure_grad(nd.in[0]) : nullptr;
    Tensor* gw = want_w ? &ensure_grad(nd.in[1]) : nullptr;
    Tensor* gb = want_b ? &ensure_grad(nd.in[2]) : nullptr;
    RowMat gcol;
    for (int n = 0; n < s.n; ++n) {
      Eigen::Map<const RowMat> gm(g.data() + static_cast<std::ptrdiff_t>(n) * cout * hw, cout,
                                  hw);
      if (want_w) im2col(x, n, k, col);
      if (want_w) {
        Eigen::Map<RowMat> gwm(gw->data(), cout, s.c * k * k);
        gwm.noalias() += gm * col.transpose();
      }
      if (want_b)
        for (int co = 0; co < cout; ++co) (*gb)[static_cast<std::size_t>(co)] += gm.row(co).sum();
      if (want_x) {
        gcol.noalias() = wm.transpose() * gm;  // (C_in*k*k, HW)
        for (int ci = 0; ci < s.c; ++ci)
          for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw) {
              const double* row = gcol.row((ci * k + kh) * k + kw).data();
              for (int i = 0; i < s.h; ++i) {
                const int si = i + kh - pad;
                if (si < 0 || si >= s.h) continue;
                for (int j = 0; j < s.w; ++j) {
                  const int sj = j + kw - pad;
                  if (sj < 0 || sj >= s.w) continue;
                  gx->at(n, ci, si, sj) += row[i * s.w + j];
                }
              }
            }
      }
    }
  }

  static void up_conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& out) {
    const Shape s = x.shape();
    const int cin = s.c, cout = w.shape().c;
    const int hw = s.h * s.w;
    Eigen::Map<const RowMat> wm(w.data(), cin, cout * 4);
    RowMat ocols(cout * 4, hw);
    for (int n = 0; n < s.n; ++n) {
      Eigen::Map<const RowMat> xm(x.data() + static_cast<std::ptrdiff_t>(n) * cin * hw, cin, hw);
      ocols.noalias() = wm.transpose() * xm;
      for (int co = 0; co < cout; ++co) {
        const double bias = b[static_cast<std::size_t>(co)];
        for (int dh = 0; dh < 2; ++dh)
          for (int dw = 0; dw < 2; ++dw) {
            const double* row = ocols.row(co * 4 + dh * 2 + dw).data();
            for (int i = 0; i < s.h; ++i)
              for (int j = 0; j < s.w; ++j)
                out.at(n, co, 2 * i + dh, 2 * j + dw) = row[i * s.w + j] + bias;
          }
      }
    }
  }

  void up_conv_backward(const Node& nd, const Tensor& g) {
    const Tensor& x = value(nd.in[0]);
    const Tensor& w = value(nd.in[1]);
    const Shape s = x.shape();
    const int cin = s.c, cout = w.shape().c;
    const int hw = s.h * s.w;
    Eigen::Map<const RowMat> wm(w.data(), cin, cout * 4);
    const bool want_x = wants(nd.in[0]);
    const bool want_w = wants(nd.in[1]);
    const bool want_b = wants(nd.in[2]);
    Tensor* gx = want_x ? &ensure_grad(nd.in[0]) : nullptr;
    Tensor* gw = want_w ? &ensure_grad(nd.in[1]) : nullptr;
    Tensor* gb = want_b ? &ensure_grad(nd.in[2]) : nullptr;
    RowMat gcols(cout * 4, hw);
    for (int n = 0; n < s.n; ++n) {
      for (int co = 0; co < cout; ++co)
        for (int dh = 0; dh < 2; ++dh)
          for (int dw = 0; dw < 2; ++dw) {
            double* row = gcols.row(co * 4 + dh * 2 + dw).data();
            for (int i = 0; i < s.h; ++i)
              for (int j = 0; j < s.w; ++j) row[i * s.w + j] = g.at(n, co, 2 * i + dh, 2 * j + dw);
          }
      if (want_b)
        for (int co = 0; co < cout; ++co)
          (*gb)[static_cast<std::size_t>(co)] += gcols.middleRows(co * 4, 4).sum();
      Eigen::Map<const RowMat> xm(x.data() + static_cast<std::ptrdiff_t>(n) * cin * hw, cin, hw);
      if (want_w) {
        Eigen::Map<RowMat> gwm(gw->data(), cin, cout * 4);
        gwm.noalias() += xm * gcols.transpose();
      }
      if (want_x) {
        Eigen::Map<RowMat> gxm(gx->data() + static_cast<std::ptrdiff_t>(n) * cin * hw, cin, hw);
        gxm.noalias() += wm * gcols;
      }
    }
  }

  void bn_backward(const Node& nd, const Tensor& g) {
    const BnCtx& ctx = std::get<BnCtx>(nd.ctx);
    const Tensor& gv = value(nd.in[1]);
    const Shape s = nd.val.shape();
    const int m = s.n * s.h * s.w;
    const bool want_x = wants(nd.in[0]);
    const bool want_gamma = wants(nd.in[1]);
    const bool want_beta = wants(nd.in[2]);
    Tensor* gx = want_x ? &ensure_grad(nd.in[0]) : nullptr;
    Tensor* ggamma = want_gamma ? &ensure_grad(nd.in[1]) : nullptr;
    Tensor* gbeta = want_beta ? &ensure_grad(nd.in[2]) : nullptr;
    for (int c = 0; c < s.c; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int n = 0; n < s.n; ++n)
        for (int i = 0; i < s.h; ++i)
          for (int j = 0; j < s.w; ++j) {
            const double gy = g.at(n, c, i, j);
            sum_g += gy;
            sum_gx += gy * ctx.xhat.at(n, c, i, j);
          }
      if (want_beta) (*gbeta)[static_cast<std::size_t>(c)] += sum_g;
      if (want_gamma) (*ggamma)[static_cast<std::size_t>(c)] += sum_gx;
      if (want_x) {
        const double gam = gv[static_cast<std::size_t>(c)];
        const double invstd = ctx.invstd[static_cast<std::size_t>(c)];
        if (ctx.training) {
          const double k = gam * invstd / m;
          for (int n = 0; n < s.n; ++n)
            for (int i = 0; i < s.h; ++i)
              for (int j = 0; j < s.w; ++j)
                gx->at(n, c, i, j) += k * (m * g.at(n, c, i, j) - sum_g -
                                           ctx.xhat.at(n, c, i, j) * sum_gx);
        } else {
          const double k = gam * invstd;
          for (int n = 0; n < s.n; ++n)
            for (int i = 0; i < s.h; ++i)
              for (int j = 0; j < s.w; ++j) gx->at(n, c, i, j) += k * g.at(n, c, i, j);
        }
      }
    }
  }

  void dispatch_backward(NodeId id, Node& nd, const Tensor& g) {
    switch (nd.op) {
      case Op::Leaf:
        break;
      case Op::Conv2d:
        conv_backward(nd, g);
        break;
      case Op::UpConv2:
        up_conv_backward(nd, g);
        break;
      case Op::BatchNorm:
        bn_backward(nd, g);
        break;
      case Op::Relu: {
        if (!wants(nd.in[0])) break;
        const Tensor& x = value(nd.in[0]);
        Tensor& gx = ensure_grad(nd.in[0]);
        for (int i = 0; i < x.size(); ++i)
          if (x[i] > 0.0) gx[i] += g[i];
        break;
      }
      case Op::MaxPool2: {
        if (!wants(nd.in[0])) break;
        const PoolCtx& ctx = std::get<PoolCtx>(nd.ctx);
        Tensor& gx = ensure_grad(nd.in[0]);
        for (std::size_t i = 0; i < ctx.argmax.size(); ++i)
          gx[static_cast<std::size_t>(ctx.argmax[i])] += g[i];
        break;
      }
      case Op::ConcatChannels: {
        const Shape sa = value(nd.in[0]).shape();
        const Shape so = nd.val.shape();
        if (wants(nd.in[0])) {
          Tensor& ga = ensure_grad(nd.in[0]);
          for (int n = 0; n < so.n; ++n)
            for (int c = 0; c < sa.c; ++c)
              for (int i = 0; i < so.h; ++i)
                for (int j = 0; j < so.w; ++j) ga.at(n, c, i, j) += g.at(n, c, i, j);
        }
        if (wants(nd.in[1])) {
          Tensor& gb = ensure_grad(nd.in[1]);
          const Shape sb = value(nd.in[1]).shape();
          for (int n = 0; n < so.n; ++n)
            for (int c = 0; c < sb.c; ++c)
              for (int i = 0; i < so.h; ++i)
                for (int j = 0; j < so.w; ++j) gb.at(n, c, i, j) += g.at(n, sa.c + c, i, j);
        }
        break;
      }
      case Op::Add: {
        for (int k = 0; k < 2; ++k) {
          if (!wants(nd.in[static_cast<std::size_t>(k)])) continue;
          Tensor& gi = ensure_grad(nd.in[static_cast<std::size_t>(k)]);
          for (int i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
        break;
      }
      case Op::Scale: {
        if (!wants(nd.in[0])) break;
        const double c = std::get<ScaleCtx>(nd.ctx).c;
        Tensor& gx = ensure_grad(nd.in[0]);
        for (int i = 0; i < g.size(); ++i) gx[i] += c * g[i];
        break;
      }
      case Op::NuclearLoss: {
        if (!wants(nd.in[0])) break;
        const NuclearCtx& ctx = std::get<NuclearCtx>(nd.ctx);
        const Tensor& x = value(nd.in[0]);
        Matrix gm;
        if (ctx.mode.kind == LossGradMode::Kind::Subgradient) {
          const Eigen::Index r = ctx.factors.rank();
          if (r == 0)
            gm = Matrix::Zero(ctx.factors.U.rows(), ctx.factors.V.rows());
          else
            gm = ctx.factors.U.leftCols(r) * ctx.factors.V.leftCols(r).transpose();
        } else {
          gm = matrix_view(x) - svt_from_factors(ctx.factors, ctx.mode.tau);
        }
        Tensor& gx = ensure_grad(nd.in[0]);
        const double gs = g[0];
        const double* src = gm.data();  // same layout as the tensor view
        for (int i = 0; i < gx.size(); ++i) gx[i] += gs * src[i];
        break;
      }
      case Op::L1Loss: {
        if (!wants(nd.in[0])) break;
        const L1Ctx& ctx = std::get<L1Ctx>(nd.ctx);
        const Tensor& x = value(nd.in[0]);
        Tensor& gx = ensure_grad(nd.in[0]);
        const double gs = g[0];
        if (ctx.mode.kind == LossGradMode::Kind::Subgradient) {
          for (int i = 0; i < x.size(); ++i)
            gx[i] += gs * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
        } else {
          const double tau = ctx.mode.tau;
          for (int i = 0; i < x.size(); ++i) {
            const double v = x[i];
            gx[i] += gs * (std::abs(v) <= tau ? v : (v > 0.0 ? tau : -tau));
          }
        }
        break;
      }
    }
    (void)id;
  }
};

// Central-difference check of a recorded subgraph. `build` receives a graph and
// the leaf ids for `inputs` (in order) and must return a scalar loss node.
// Returns the worst relative error over all checked coordinates; coordinates
// are subsampled per input when max_coords > 0.
template <class Builder>
double grad_check(Builder&& build, const std::vector<Tensor>& inputs, double epsilon,
                  int max_coords = 0, std::uint64_t seed = 0) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be > 0");

  auto eval = [&](const std::vector<Tensor>& ins) {
    Graph g;
    std::vector<Graph::NodeId> ids;
    ids.reserve(ins.size());
    for (const Tensor& t : ins) {
      Tensor c = t;
      c.requires_grad = true;
      ids.push_back(g.leaf(std::move(c)));
    }
    Graph::NodeId loss = build(g, ids);
    return std::pair<double, std::vector<Graph::NodeId>>{g.value(loss)[0], ids};
  };

  // Analytic gradients.
  Graph g;
  std::vector<Graph::NodeId> ids;
  for (const Tensor& t : inputs) {
    Tensor c = t;
    c.requires_grad = true;
    ids.push_back(g.leaf(std::move(c)));
  }
  Graph::NodeId loss = build(g, ids);
  g.backward(loss);

  std::mt19937_64 rng(seed);
  double worst = 0.0;
  std::vector<Tensor> work = inputs;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const Tensor& analytic = g.grad(ids[t]);
    const int n = inputs[t].size();
    std::vector<int> coords;
    if (max_coords > 0 && n > max_coords) {
      std::vector<int> all(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
      for (int i = 0; i < max_coords; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
      }
      coords.assign(all.begin(), all.begin() + max_coords);
    } else {
      coords.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    }
    for (int i : coords) {
      const double saved = work[t][static_cast<std::size_t>(i)];
      work[t][static_cast<std::size_t>(i)] = saved + epsilon;
      const double fp = eval(work).first;
      work[t][static_cast<std::size_t>(i)] = saved - epsilon;
      const double fm = eval(work).first;
      work[t][static_cast<std::size_t>(i)] = saved;
      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double a = analytic[static_cast<std::size_t>(i)];
      // Both below the finite-difference noise floor counts as agreement.
      if (std::abs(a) < 1e-6 && std::abs(numeric) < 1e-6) continue;
      const double rel = std::abs(a - numeric) / std::max(std::abs(a), std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace lsprox::ad
