#pragma once

// Small building blocks with hand-written backward passes, plus the
// parameter-visiting protocol shared by every trainable structure.
//
// A parameter structure P exposes
//   template <class Self, class F> static void each(Self& self, F&& f);
// which calls f(name, std::vector<double>&) once per trainable buffer in a
// fixed order. Gradients and optimizer moments reuse the same structure.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "flowspeaker/numerics.hpp"

namespace flowspeaker {

template <class P, class F>
void for_each_param(P& p, F&& f) {
  std::remove_const_t<P>::each(p, f);
}

/// Wraps a visitor so every name it sees is prefixed.
template <class F>
auto prefixed(std::string prefix, F& f) {
  return [prefix = std::move(prefix), &f](const std::string& name, auto& buf) {
    f(prefix + name, buf);
  };
}

template <class P>
P zeros_like(const P& p) {
  P z = p;
  for_each_param(z, [](const std::string&, std::vector<double>& buf) {
    std::fill(buf.begin(), buf.end(), 0.0);
  });
  return z;
}

template <class P>
std::vector<std::vector<double>*> param_slots(P& p) {
  std::vector<std::vector<double>*> out;
  for_each_param(p, [&](const std::string&, std::vector<double>& buf) {
    out.push_back(&buf);
  });
  return out;
}

template <class P>
std::size_t param_count(const P& p) {
  std::size_t n = 0;
  for_each_param(p, [&](const std::string&, const std::vector<double>& buf) {
    n += buf.size();
  });
  return n;
}

/// FNV-1a over the bit patterns of every parameter.
template <class P>
std::uint64_t param_hash(const P& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for_each_param(p, [&](const std::string&, const std::vector<double>& buf) {
    for (double v : buf) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int k = 0; k < 8; ++k) {
        h ^= (bits >> (8 * k)) & 0xffU;
        h *= 0x100000001b3ULL;
      }
    }
  });
  return h;
}

inline void fill_normal(std::vector<double>& buf, RngStream& rng,
                        double scale) {
  for (double& v : buf) v = scale * rng.normal();
}

// ---------------------------------------------------------------------------

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Affine map y = W x + b.
struct Linear {
  Mat w;
  Vec b;

  Linear() = default;
  Linear(std::size_t out, std::size_t in) : w(out, in), b(out, 0.0) {}

  static Linear random(std::size_t out, std::size_t in, RngStream& rng,
                       double gain = 1.0) {
    Linear l(out, in);
    fill_normal(l.w.data, rng, gain / std::sqrt(static_cast<double>(in)));
    return l;
  }

  std::size_t in_dim() const { return w.cols; }
  std::size_t out_dim() const { return w.rows; }

  Vec operator()(std::span<const double> x) const {
    Vec y = matvec(w, x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
    return y;
  }

  /// Accumulates parameter gradients into `g`; returns dL/dx.
  Vec backward(std::span<const double> x, std::span<const double> gy,
               Linear& g) const {
    add_outer(g.w, gy, x);
    axpy(1.0, gy, g.b);
    return matvec_t(w, gy);
  }

  template <class Self, class F>
  static void each(Self& s, F&& f) {
    f("w", s.w.data);
    f("b", s.b);
  }

  friend bool operator==(const Linear&, const Linear&) = default;
};

/// Per-vector layer normalization with learned gain and bias.
struct LayerNorm {
  Vec gamma;
  Vec beta;

  static constexpr double kEps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim) : gamma(dim, 1.0), beta(dim, 0.0) {}

  struct Cache {
    Vec xhat;
    double inv_std = 1.0;
  };

  Vec operator()(std::span<const double> x, Cache* cache = nullptr) const {
    const std::size_t n = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + kEps);
    Vec y(n);
    Vec xhat(n);
    for (std::size_t i = 0; i < n; ++i) {
      xhat[i] = (x[i] - mean) * inv;
      y[i] = gamma[i] * xhat[i] + beta[i];
    }
    if (cache != nullptr) {
      cache->xhat = std::move(xhat);
      cache->inv_std = inv;
    }
    return y;
  }

  Vec backward(const Cache& c, std::span<const double> gy,
               LayerNorm& g) const {
    const std::size_t n = gy.size();
    Vec gxhat(n);
    double mean_g = 0.0;
    double mean_gx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      g.gamma[i] += gy[i] * c.xhat[i];
      g.beta[i] += gy[i];
      gxhat[i] = gy[i] * gamma[i];
      mean_g += gxhat[i];
      mean_gx += gxhat[i] * c.xhat[i];
    }
    mean_g /= static_cast<double>(n);
    mean_gx /= static_cast<double>(n);
    Vec gx(n);
    for (std::size_t i = 0; i < n; ++i) {
      gx[i] = c.inv_std * (gxhat[i] - mean_g - c.xhat[i] * mean_gx);
    }
    return gx;
  }

  template <class Self, class F>
  static void each(Self& s, F&& f) {
    f("gamma", s.gamma);
    f("beta", s.beta);
  }

  friend bool operator==(const LayerNorm&, const LayerNorm&) = default;
};

/// Numerically stable softmax.
inline Vec softmax(std::span<const double> logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  Vec p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

/// Gradient of softmax inputs given probabilities and dL/dp.
inline Vec softmax_backward(std::span<const double> p,
                            std::span<const double> gp) {
  const double s = dot(p, gp);
  Vec g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = p[i] * (gp[i] - s);
  return g;
}

}  // namespace flowspeaker
