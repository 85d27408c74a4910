#pragma once

// Dense vector/matrix helpers, the seeded random stream, densities and the
// finite-difference gradient oracle. Everything here works on doubles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowspeaker/error.hpp"

namespace flowspeaker {

using Vec = std::vector<double>;

/// Row-major dense matrix.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Mat diag(std::span<const double> d) {
    Mat m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  static Mat from_rows(const std::vector<Vec>& rows_in) {
    Mat m(rows_in.size(), rows_in.empty() ? 0 : rows_in.front().size());
    for (std::size_t i = 0; i < m.rows; ++i) {
      if (rows_in[i].size() != m.cols) {
        throw DimensionMismatch("Mat::from_rows: ragged rows");
      }
      for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = rows_in[i][j];
    }
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const {
    return data[i * cols + j];
  }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }

  bool square() const { return rows == cols; }

  friend bool operator==(const Mat&, const Mat&) = default;
};

inline void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionMismatch(std::string(what) + ": dimension " +
                            std::to_string(a) + " vs " + std::to_string(b));
  }
}

// ---------------------------------------------------------------------------
// Basic linear algebra.

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

/// y = m * x
inline Vec matvec(const Mat& m, std::span<const double> x) {
  require_same_dim(m.cols, x.size(), "matvec");
  Vec y(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* r = m.data.data() + i * m.cols;
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

/// y = m^T * x
inline Vec matvec_t(const Mat& m, std::span<const double> x) {
  require_same_dim(m.rows, x.size(), "matvec_t");
  Vec y(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* r = m.data.data() + i * m.cols;
    const double xi = x[i];
    if (xi == 0.0) continue;
    for (std::size_t j = 0; j < m.cols; ++j) y[j] += r[j] * xi;
  }
  return y;
}

/// m += a * b^T
inline void add_outer(Mat& m, std::span<const double> a,
                      std::span<const double> b) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double ai = a[i];
    if (ai == 0.0) continue;
    double* r = m.data.data() + i * m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) r[j] += ai * b[j];
  }
}

inline Mat matmul(const Mat& a, const Mat& b) {
  require_same_dim(a.cols, b.rows, "matmul");
  Mat c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// LU with partial pivoting: P*A = L*U, L unit lower, U upper, packed in `lu`.

struct LuDecomposition {
  Mat lu;
  std::vector<std::size_t> pivot;  // row i of P*A is row pivot[i] of A
  int parity = 1;
  bool singular = false;
};

inline constexpr double kPivotThreshold = 1e-12;

inline LuDecomposition lu_decompose(const Mat& m) {
  if (!m.square()) throw DimensionMismatch("lu_decompose: matrix not square");
  const std::size_t n = m.rows;
  LuDecomposition out{m, std::vector<std::size_t>(n), 1, false};
  Mat& a = out.lu;
  for (std::size_t i = 0; i < n; ++i) out.pivot[i] = i;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(a(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(a(i, k)) > best) {
        best = std::abs(a(i, k));
        p = i;
      }
    }
    if (best < kPivotThreshold) {
      out.singular = true;
      return out;
    }
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
      std::swap(out.pivot[k], out.pivot[p]);
      out.parity = -out.parity;
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      a(i, k) /= a(k, k);
      const double f = a(i, k);
      if (f == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return out;
}

struct SlogDet {
  int sign = 0;
  double logabsdet = -std::numeric_limits<double>::infinity();
};

/// Sign and log-magnitude of the determinant. Singular input yields sign 0
/// and logabsdet = -inf.
inline SlogDet slogdet(const Mat& m) {
  const LuDecomposition d = lu_decompose(m);
  if (d.singular) return {};
  SlogDet out{d.parity, 0.0};
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double u = d.lu(i, i);
    if (u < 0) out.sign = -out.sign;
    out.logabsdet += std::log(std::abs(u));
  }
  return out;
}

inline Mat invert(const Mat& m) {
  const LuDecomposition d = lu_decompose(m);
  if (d.singular) throw SingularMatrix("invert: pivot below 1e-12");
  const std::size_t n = m.rows;
  Mat inv(n, n);
  Vec col(n);
  for (std::size_t c = 0; c < n; ++c) {
    // Solve A x = e_c  ->  L U x = P e_c.
    for (std::size_t i = 0; i < n; ++i) col[i] = d.pivot[i] == c ? 1.0 : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = col[i];
      for (std::size_t j = 0; j < i; ++j) s -= d.lu(i, j) * col[j];
      col[i] = s;
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = col[i];
      for (std::size_t j = i + 1; j < n; ++j) s -= d.lu(i, j) * col[j];
      col[i] = s / d.lu(i, i);
    }
    for (std::size_t i = 0; i < n; ++i) inv(i, c) = col[i];
  }
  return inv;
}

// ---------------------------------------------------------------------------
// Random stream.
//
// SplitMix64: state advances by the 64-bit golden-ratio increment and each
// output is the state passed through two xor-shift/multiply rounds. Only
// integer arithmetic is involved, so sequences are identical on every
// platform. Normal draws use Box-Muller on 53-bit uniforms.

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw InvalidArgument("RngStream::index: empty range");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Independent child stream keyed by `key`; does not advance this stream.
  RngStream derive(std::uint64_t key) const {
    return RngStream(mix(state_ ^ mix(key + 0x632BE59BD9B4E019ULL)));
  }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Vec standard_normal(RngStream& rng, std::size_t n) {
  if (n == 0) throw InvalidArgument("standard_normal: n must be >= 1");
  Vec out(n);
  for (double& v : out) v = rng.normal();
  return out;
}

template <class T>
void shuffle(std::vector<T>& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.index(i)]);
  }
}

// ---------------------------------------------------------------------------
// Densities and distances.

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

/// Log density of a diagonal Gaussian parameterized by mean and log-variance.
inline double gaussian_logpdf(std::span<const double> x,
                              std::span<const double> mean,
                              std::span<const double> logvar) {
  require_same_dim(x.size(), mean.size(), "gaussian_logpdf(mean)");
  require_same_dim(x.size(), logvar.size(), "gaussian_logpdf(logvar)");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean[i];
    s += -kHalfLog2Pi - 0.5 * logvar[i] - 0.5 * d * d * std::exp(-logvar[i]);
  }
  return s;
}

inline constexpr double kZeroNorm = 1e-12;

/// 1 - cos(v1, v2).
inline double cosine_distance(std::span<const double> v1,
                              std::span<const double> v2) {
  require_same_dim(v1.size(), v2.size(), "cosine_distance");
  const double n1 = norm2(v1);
  const double n2 = norm2(v2);
  if (n1 < kZeroNorm || n2 < kZeroNorm) {
    throw ZeroVector("cosine_distance: vector norm below 1e-12");
  }
  const double c = dot(v1, v2) / (n1 * n2);
  return std::clamp(1.0 - c, 0.0, 2.0);
}

// ---------------------------------------------------------------------------
// Finite-difference oracle.

inline constexpr double kDefaultFdEps = 1e-4;

inline Vec finite_diff_grad(const std::function<double(const Vec&)>& f,
                            const Vec& x, double eps = kDefaultFdEps) {
  Vec g(x.size());
  Vec probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double fp = f(probe);
    probe[i] = x[i] - eps;
    const double fm = f(probe);
    probe[i] = x[i];
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

/// Central-difference Jacobian of a vector map; J(i, j) = d f_i / d x_j.
inline Mat finite_diff_jacobian(const std::function<Vec(const Vec&)>& f,
                                const Vec& x, double eps = kDefaultFdEps) {
  const std::size_t n = x.size();
  Vec probe = x;
  Mat jac;
  for (std::size_t j = 0; j < n; ++j) {
    probe[j] = x[j] + eps;
    const Vec fp = f(probe);
    probe[j] = x[j] - eps;
    const Vec fm = f(probe);
    probe[j] = x[j];
    if (j == 0) jac = Mat(fp.size(), n);
    for (std::size_t i = 0; i < fp.size(); ++i) {
      jac(i, j) = (fp[i] - fm[i]) / (2.0 * eps);
    }
  }
  return jac;
}

}  // namespace flowspeaker
