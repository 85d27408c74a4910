#pragma once

// Glow-style bijection between speaker-embedding space (x) and semantic
// space (z). Each block is actnorm -> invertible linear -> affine coupling;
// every layer reports the log-determinant of its Jacobian.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "flowspeaker/nn.hpp"
#include "flowspeaker/numerics.hpp"

namespace flowspeaker {

enum class Direction { forward, inverse };

struct LayerResult {
  Vec y;
  double logdet = 0.0;
};

// ---------------------------------------------------------------------------
// Activation normalization: y = (x + bias) * exp(log_scale).

struct ActNorm {
  Vec log_scale;
  Vec bias;
  bool initialized = false;

  static ActNorm identity(std::size_t dim) {
    return ActNorm{Vec(dim, 0.0), Vec(dim, 0.0), true};
  }
  static ActNorm uninitialized(std::size_t dim) {
    return ActNorm{Vec(dim, 0.0), Vec(dim, 0.0), false};
  }

  template <class Self, class F>
  static void each(Self& s, F&& f) {
    f("log_scale", s.log_scale);
    f("bias", s.bias);
  }

  friend bool operator==(const ActNorm&, const ActNorm&) = default;
};

inline constexpr double kMinChannelStd = 1e-6;

/// Data-dependent init: the layer maps `batch` to zero mean, unit variance.
inline ActNorm actnorm_init(std::span<const Vec> batch) {
  if (batch.size() < 2) {
    throw InvalidArgument("actnorm_init: batch needs at least 2 samples");
  }
  const std::size_t dim = batch.front().size();
  const double n = static_cast<double>(batch.size());
  ActNorm p = ActNorm::uninitialized(dim);
  for (std::size_t c = 0; c < dim; ++c) {
    double mean = 0.0;
    for (const Vec& x : batch) {
      require_same_dim(x.size(), dim, "actnorm_init");
      mean += x[c];
    }
    mean /= n;
    double var = 0.0;
    for (const Vec& x : batch) var += (x[c] - mean) * (x[c] - mean);
    const double sd = std::sqrt(var / n);
    if (!(sd > kMinChannelStd)) {
      throw DegenerateChannel("actnorm_init: channel " + std::to_string(c) +
                              " is constant over the batch");
    }
    p.bias[c] = -mean;
    p.log_scale[c] = -std::log(sd);
  }
  p.initialized = true;
  return p;
}

inline LayerResult actnorm_apply(std::span<const double> x, const ActNorm& p,
                                 Direction dir) {
  if (!p.initialized) throw UninitializedLayer("actnorm used before init");
  require_same_dim(x.size(), p.log_scale.size(), "actnorm_apply");
  LayerResult r{Vec(x.size()), 0.0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (dir == Direction::forward) {
      r.y[i] = (x[i] + p.bias[i]) * std::exp(p.log_scale[i]);
    } else {
      r.y[i] = x[i] * std::exp(-p.log_scale[i]) - p.bias[i];
    }
    r.logdet += p.log_scale[i];
  }
  if (dir == Direction::inverse) r.logdet = -r.logdet;
  return r;
}

/// Backward through the forward direction. `glogdet` is dL/d(logdet).
inline Vec actnorm_backward(std::span<const double> x, const ActNorm& p,
                            std::span<const double> gy, double glogdet,
                            ActNorm& g) {
  Vec gx(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = std::exp(p.log_scale[i]);
    const double y = (x[i] + p.bias[i]) * s;
    gx[i] = gy[i] * s;
    g.bias[i] += gy[i] * s;
    g.log_scale[i] += gy[i] * y + glogdet;
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Invertible linear map over channels, stored in LU form:
//   W = P * L * (U + diag(sign_s * exp(log_s)))
// with (P x)_i = x[perm[i]], L unit lower (strict part in `lower`), U strictly
// upper (`upper`). Only the strict triangles of `lower`/`upper` are read.

struct InvLinear {
  std::vector<std::size_t> perm;
  Mat lower;
  Mat upper;
  Vec log_s;
  Vec sign_s;

  static InvLinear identity(std::size_t dim) {
    InvLinear p;
    p.perm.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) p.perm[i] = i;
    p.lower = Mat(dim, dim);
    p.upper = Mat(dim, dim);
    p.log_s = Vec(dim, 0.0);
    p.sign_s = Vec(dim, 1.0);
    return p;
  }

  /// LU factors of a random orthogonal matrix (the usual Glow init).
  static InvLinear random_orthogonal(std::size_t dim, RngStream& rng) {
    Mat q(dim, dim);
    fill_normal(q.data, rng, 1.0);
    // Modified Gram-Schmidt over rows.
    for (std::size_t i = 0; i < dim; ++i) {
      auto ri = q.row(i);
      for (std::size_t k = 0; k < i; ++k) {
        const double c = dot(ri, q.row(k));
        axpy(-c, q.row(k), ri);
      }
      const double n = norm2(ri);
      for (double& v : ri) v /= n;
    }
    const LuDecomposition d = lu_decompose(q);
    if (d.singular) throw SingularMatrix("random_orthogonal: degenerate draw");
    InvLinear p = identity(dim);
    for (std::size_t i = 0; i < dim; ++i) p.perm[d.pivot[i]] = i;
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        if (j < i) p.lower(i, j) = d.lu(i, j);
        if (j > i) p.upper(i, j) = d.lu(i, j);
      }
      const double u = d.lu(i, i);
      p.sign_s[i] = u < 0 ? -1.0 : 1.0;
      p.log_s[i] = std::log(std::abs(u));
    }
    return p;
  }

  std::size_t dim() const { return log_s.size(); }

  double diag(std::size_t i) const { return sign_s[i] * std::exp(log_s[i]); }

  /// Dense W reconstructed from the factors.
  Mat weight() const {
    const std::size_t d = dim();
    Mat w(d, d);
    Vec e(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      e[j] = 1.0;
      const Vec col = apply_forward(e);
      e[j] = 0.0;
      for (std::size_t i = 0; i < d; ++i) w(i, j) = col[i];
    }
    return w;
  }

  Vec apply_forward(std::span<const double> x, Vec* u_out = nullptr,
                    Vec* l_out = nullptr) const {
    const std::size_t d = dim();
    Vec u(d);
    for (std::size_t i = 0; i < d; ++i) {
      double s = diag(i) * x[i];
      for (std::size_t j = i + 1; j < d; ++j) s += upper(i, j) * x[j];
      u[i] = s;
    }
    Vec l(d);
    for (std::size_t i = 0; i < d; ++i) {
      double s = u[i];
      for (std::size_t j = 0; j < i; ++j) s += lower(i, j) * u[j];
      l[i] = s;
    }
    Vec y(d);
    for (std::size_t i = 0; i < d; ++i) y[i] = l[perm[i]];
    if (u_out != nullptr) *u_out = std::move(u);
    if (l_out != nullptr) *l_out = std::move(l);
    return y;
  }

  Vec apply_inverse(std::span<const double> y) const {
    const std::size_t d = dim();
    Vec l(d);
    for (std::size_t i = 0; i < d; ++i) l[perm[i]] = y[i];
    for (std::size_t i = 0; i < d; ++i) {
      double s = l[i];
      for (std::size_t j = 0; j < i; ++j) s -= lower(i, j) * l[j];
      l[i] = s;
    }
    Vec& x = l;
    for (std::size_t i = d; i-- > 0;) {
      double s = x[i];
      for (std::size_t j = i + 1; j < d; ++j) s -= upper(i, j) * x[j];
      x[i] = s / diag(i);
    }
    return x;
  }

  template <class Self, class F>
  static void each(Self& s, F&& f) {
    f("lower", s.lower.data);
    f("upper", s.upper.data);
    f("log_s", s.log_s);
  }

  friend bool operator==(const InvLinear&, const InvLinear&) = default;
};

inline LayerResult invlinear_apply(std::span<const double> x,
                                   const InvLinear& p, Direction dir) {
  require_same_dim(x.size(), p.dim(), "invlinear_apply");
  double ld = 0.0;
  for (double v : p.log_s) ld += v;
  if (dir == Direction::forward) return {p.apply_forward(x), ld};
  return {p.apply_inverse(x), -ld};
}

inline Vec invlinear_backward(std::span<const double> x, const InvLinear& p,
                              std::span<const double> gy, double glogdet,
                              InvLinear& g) {
  const std::size_t d = p.dim();
  Vec u;
  Vec l;
  p.apply_forward(x, &u, &l);
  Vec gl(d);
  for (std::size_t i = 0; i < d; ++i) gl[p.perm[i]] = gy[i];
  // l = L u
  Vec gu = gl;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      g.lower(i, j) += gl[i] * u[j];
      gu[j] += p.lower(i, j) * gl[i];
    }
  }
  // u = (U + D) x
  Vec gx(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double di = p.diag(i);
    g.log_s[i] += gu[i] * di * x[i] + glogdet;
    gx[i] += di * gu[i];
    for (std::size_t j = i + 1; j < d; ++j) {
      g.upper(i, j) += gu[i] * x[j];
      gx[j] += p.upper(i, j) * gu[i];
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Affine coupling. One half (a) passes through and conditions a 4-layer
// pointwise network that emits log-scale and shift for the other half (b).

inline constexpr double kCouplingClamp = 4.0;

struct Coupling {
  bool swap = false;  // when set, the second half conditions the first
  std::array<Linear, 4> net;

  /// Random hidden layers, zero final layer: starts as the identity map.
  static Coupling make(std::size_t dim, std::size_t hidden, bool swap,
                       RngStream& rng) {
    if (dim % 2 != 0) throw InvalidArgument("coupling: odd dimension");
    const std::size_t half = dim / 2;
    Coupling c;
    c.swap = swap;
    c.net[0] = Linear::random(hidden, half, rng);
    c.net[1] = Linear::random(hidden, hidden, rng);
    c.net[2] = Linear::random(hidden, hidden, rng);
    c.net[3] = Linear(dim, hidden);
    return c;
  }

  std::size_t dim() const { return net[3].out_dim(); }
  std::size_t half() const { return dim() / 2; }
  std::size_t a_offset() const { return swap ? half() : 0; }
  std::size_t b_offset() const { return swap ? 0 : half(); }

  struct NetCache {
    std::array<Vec, 4> inputs;  // input of each linear layer
    Vec out;
  };

  Vec run_net(std::span<const double> xa, NetCache* cache = nullptr) const {
    Vec h(xa.begin(), xa.end());
    for (std::size_t k = 0; k < 4; ++k) {
      if (cache != nullptr) cache->inputs[k] = h;
      Vec o = net[k](h);
      if (k < 3) {
        for (double& v : o) v = std::tanh(v);
      }
      h = std::move(o);
    }
    if (cache != nullptr) cache->out = h;
    return h;
  }

  template <class Self, class F>
  static void each(Self& s, F&& f) {
    for (std::size_t k = 0; k < 4; ++k) {
      Linear::each(s.net[k], prefixed("net" + std::to_string(k) + ".", f));
    }
  }

  friend bool operator==(const Coupling&, const Coupling&) = default;
};

inline LayerResult coupling_apply(std::span<const double> x, const Coupling& p,
                                  Direction dir) {
  if (x.size() % 2 != 0) throw InvalidArgument("coupling: odd dimension");
  require_same_dim(x.size(), p.dim(), "coupling_apply");
  const std::size_t half = p.half();
  const auto xa = x.subspan(p.a_offset(), half);
  const Vec out = p.run_net(xa);
  LayerResult r{Vec(x.begin(), x.end()), 0.0};
  for (std::size_t i = 0; i < half; ++i) {
    const double ls = std::clamp(out[i], -kCouplingClamp, kCouplingClamp);
    const double t = out[half + i];
    double& yb = r.y[p.b_offset() + i];
    if (dir == Direction::forward) {
      yb = yb * std::exp(ls) + t;
    } else {
      yb = (yb - t) * std::exp(-ls);
    }
    r.logdet += ls;
  }
  if (dir == Direction::inverse) r.logdet = -r.logdet;
  return r;
}

inline Vec coupling_backward(std::span<const double> x, const Coupling& p,
                             std::span<const double> gy, double glogdet,
                             Coupling& g) {
  const std::size_t half = p.half();
  const std::size_t ao = p.a_offset();
  const std::size_t bo = p.b_offset();
  Coupling::NetCache cache;
  const Vec out = p.run_net(x.subspan(ao, half), &cache);

  Vec gx(gy.begin(), gy.end());
  Vec gout(p.dim(), 0.0);
  for (std::size_t i = 0; i < half; ++i) {
    const double raw = out[i];
    const double ls = std::clamp(raw, -kCouplingClamp, kCouplingClamp);
    const double s = std::exp(ls);
    const double gyb = gy[bo + i];
    gx[bo + i] = gyb * s;
    const double gls = gyb * x[bo + i] * s + glogdet;
    gout[i] = (raw > -kCouplingClamp && raw < kCouplingClamp) ? gls : 0.0;
    gout[half + i] = gyb;
  }
  Vec gh = std::move(gout);
  for (std::size_t k = 4; k-- > 0;) {
    if (k < 3) {
      // tanh output of layer k is the input of layer k + 1
      const Vec& act = cache.inputs[k + 1];
      for (std::size_t i = 0; i < gh.size(); ++i) {
        gh[i] *= 1.0 - act[i] * act[i];
      }
    }
    gh = p.net[k].backward(cache.inputs[k], gh, g.net[k]);
  }
  for (std::size_t i = 0; i < half; ++i) gx[ao + i] += gh[i];
  return gx;
}

// ---------------------------------------------------------------------------
// Composed flow.

struct FlowBlock {
  ActNorm actnorm;
  InvLinear mix;
  Coupling coupling;

  template <class Self, class F>
  static void each(Self& s, F&& f) {
    ActNorm::each(s.actnorm, prefixed("actnorm.", f));
    InvLinear::each(s.mix, prefixed("mix.", f));
    Coupling::each(s.coupling, prefixed("coupling.", f));
  }

  friend bool operator==(const FlowBlock&, const FlowBlock&) = default;
};

struct FlowConfig {
  std::size_t dim = 256;
  std::size_t blocks = 12;
  std::size_t hidden = 0;  // 0 means "same as dim"

  std::size_t hidden_width() const { return hidden == 0 ? dim : hidden; }

  friend bool operator==(const FlowConfig&, const FlowConfig&) = default;
};

struct Flow {
  std::size_t dim = 0;
  std::vector<FlowBlock> blocks;

  bool initialized() const {
    for (const FlowBlock& b : blocks) {
      if (!b.actnorm.initialized) return false;
    }
    return true;
  }

  template <class Self, class F>
  static void each(Self& s, F&& f) {
    for (std::size_t k = 0; k < s.blocks.size(); ++k) {
      FlowBlock::each(s.blocks[k],
                      prefixed("blocks." + std::to_string(k) + ".", f));
    }
  }

  friend bool operator==(const Flow&, const Flow&) = default;
};

/// Fresh flow: actnorms await data init, linear layers are random rotations,
/// couplings start at the identity. Blocks alternate the conditioning half.
inline Flow make_flow(const FlowConfig& cfg, RngStream& rng) {
  if (cfg.dim == 0 || cfg.dim % 2 != 0) {
    throw InvalidArgument("flow dimension must be even and positive");
  }
  if (cfg.blocks == 0) throw InvalidArgument("flow needs at least one block");
  Flow f{cfg.dim, {}};
  for (std::size_t k = 0; k < cfg.blocks; ++k) {
    f.blocks.push_back(FlowBlock{
        ActNorm::uninitialized(cfg.dim),
        InvLinear::random_orthogonal(cfg.dim, rng),
        Coupling::make(cfg.dim, cfg.hidden_width(), k % 2 == 1, rng)});
  }
  return f;
}

inline Flow identity_flow(const FlowConfig& cfg) {
  RngStream rng(0);
  Flow f{cfg.dim, {}};
  for (std::size_t k = 0; k < cfg.blocks; ++k) {
    f.blocks.push_back(FlowBlock{
        ActNorm::identity(cfg.dim), InvLinear::identity(cfg.dim),
        Coupling::make(cfg.dim, cfg.hidden_width(), k % 2 == 1, rng)});
  }
  return f;
}

/// Inputs of every layer, in application order (3 per block).
struct FlowTrace {
  std::vector<Vec> inputs;
};

inline LayerResult flow_forward(std::span<const double> x, const Flow& flow,
                                FlowTrace* trace = nullptr) {
  require_same_dim(x.size(), flow.dim, "flow_forward");
  if (trace != nullptr) {
    trace->inputs.clear();
    trace->inputs.reserve(3 * flow.blocks.size());
  }
  LayerResult acc{Vec(x.begin(), x.end()), 0.0};
  for (const FlowBlock& b : flow.blocks) {
    if (trace != nullptr) trace->inputs.push_back(acc.y);
    LayerResult r = actnorm_apply(acc.y, b.actnorm, Direction::forward);
    if (trace != nullptr) trace->inputs.push_back(r.y);
    LayerResult s = invlinear_apply(r.y, b.mix, Direction::forward);
    if (trace != nullptr) trace->inputs.push_back(s.y);
    LayerResult t = coupling_apply(s.y, b.coupling, Direction::forward);
    acc.y = std::move(t.y);
    acc.logdet += r.logdet + s.logdet + t.logdet;
  }
  return acc;
}

/// Inverse map z -> x; the returned logdet is log|det dx/dz|.
inline LayerResult flow_inverse_logdet(std::span<const double> z,
                                       const Flow& flow) {
  require_same_dim(z.size(), flow.dim, "flow_inverse");
  LayerResult acc{Vec(z.begin(), z.end()), 0.0};
  for (std::size_t k = flow.blocks.size(); k-- > 0;) {
    const FlowBlock& b = flow.blocks[k];
    LayerResult t = coupling_apply(acc.y, b.coupling, Direction::inverse);
    LayerResult s = invlinear_apply(t.y, b.mix, Direction::inverse);
    LayerResult r = actnorm_apply(s.y, b.actnorm, Direction::inverse);
    acc.y = std::move(r.y);
    acc.logdet += t.logdet + s.logdet + r.logdet;
  }
  return acc;
}

inline Vec flow_inverse(std::span<const double> z, const Flow& flow) {
  return flow_inverse_logdet(z, flow).y;
}

/// Backpropagates dL/dz and dL/d(total logdet) through a recorded forward
/// pass, accumulating parameter gradients into `grad`. Returns dL/dx.
inline Vec flow_backward(const FlowTrace& trace, const Flow& flow,
                         std::span<const double> gz, double glogdet,
                         Flow& grad) {
  Vec g(gz.begin(), gz.end());
  for (std::size_t k = flow.blocks.size(); k-- > 0;) {
    const FlowBlock& b = flow.blocks[k];
    FlowBlock& gb = grad.blocks[k];
    g = coupling_backward(trace.inputs[3 * k + 2], b.coupling, g, glogdet,
                          gb.coupling);
    g = invlinear_backward(trace.inputs[3 * k + 1], b.mix, g, glogdet, gb.mix);
    g = actnorm_backward(trace.inputs[3 * k], b.actnorm, g, glogdet,
                         gb.actnorm);
  }
  return g;
}

/// Data-dependent actnorm init, block by block, on `batch` pushed through the
/// already-initialized prefix of the flow.
inline void initialize_actnorms(Flow& flow, std::span<const Vec> batch) {
  std::vector<Vec> h(batch.begin(), batch.end());
  for (FlowBlock& b : flow.blocks) {
    b.actnorm = actnorm_init(h);
    for (Vec& x : h) {
      x = actnorm_apply(x, b.actnorm, Direction::forward).y;
      x = invlinear_apply(x, b.mix, Direction::forward).y;
      x = coupling_apply(x, b.coupling, Direction::forward).y;
    }
  }
}

}  // namespace flowspeaker
