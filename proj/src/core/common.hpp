#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ctalab {

using Cplx = std::complex<double>;

enum class ErrorKind { Config, Numeric, Invalid };

/// All core failures surface as this; the C API maps kind -> status code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_config(const std::string& msg) { throw Error(ErrorKind::Config, msg); }
[[noreturn]] inline void fail_numeric(const std::string& msg) { throw Error(ErrorKind::Numeric, msg); }
[[noreturn]] inline void fail_invalid(const std::string& msg) { throw Error(ErrorKind::Invalid, msg); }

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  Vec2() = default;
  Vec2(double a, double b) : x(a), y(b) {}
  Vec2 operator+(const Vec2& r) const { return {x + r.x, y + r.y}; }
  Vec2 operator-(const Vec2& r) const { return {x - r.x, y - r.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(const Vec2& r) { x += r.x; y += r.y; return *this; }
  double dot(const Vec2& r) const { return x * r.x + y * r.y; }
  double norm() const { return std::hypot(x, y); }
  Vec2 perp() const { return {-y, x}; }
};
inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

/// Symmetric 2x2 matrix, the transversal metric at a chart point.
struct Mat2 {
  double a11 = 1.0, a12 = 0.0, a22 = 1.0;
  double det() const { return a11 * a22 - a12 * a12; }
  Mat2 inverse() const {
    double d = det();
    return {a22 / d, -a12 / d, a11 / d};
  }
  Vec2 mul(const Vec2& v) const { return {a11 * v.x + a12 * v.y, a12 * v.x + a22 * v.y}; }
  double quad(const Vec2& u, const Vec2& v) const { return u.dot(mul(v)); }
};

struct ComplexVec2 {
  Cplx x{0.0, 0.0};
  Cplx y{0.0, 0.0};
  ComplexVec2() = default;
  ComplexVec2(Cplx a, Cplx b) : x(a), y(b) {}
  ComplexVec2 operator+(const ComplexVec2& r) const { return {x + r.x, y + r.y}; }
  ComplexVec2 operator*(Cplx s) const { return {x * s, y * s}; }
  /// Complexified (non-Hermitian) bilinear pairing.
  Cplx bilinear(const ComplexVec2& r) const { return x * r.x + y * r.y; }
};

/// Least-squares line fit of y against x; returns {slope, intercept, slope_halfwidth95}.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_halfwidth95 = 0.0;
  double rms_residual = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  size_t n = x.size();
  if (n < 2 || y.size() != n) fail_invalid("fit_line: need >= 2 points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  double denom = n * sxx - sx * sx;
  LineFit f;
  f.slope = (n * sxy - sx * sy) / denom;
  f.intercept = (sy - f.slope * sx) / n;
  double ss = 0;
  for (size_t i = 0; i < n; ++i) {
    double r = y[i] - (f.slope * x[i] + f.intercept);
    ss += r * r;
  }
  f.rms_residual = std::sqrt(ss / n);
  if (n > 2) {
    double se = std::sqrt(ss / (n - 2) * n / denom);
    f.slope_halfwidth95 = 1.96 * se;
  }
  return f;
}

/// Fitted log-log order of |v| against scale s (e.g. residual vs h, coefficient vs delta).
inline double fit_order(const std::vector<double>& scale, const std::vector<double>& value) {
  std::vector<double> lx, ly;
  for (size_t i = 0; i < scale.size(); ++i) {
    if (std::abs(value[i]) <= 0) continue;
    lx.push_back(std::log(scale[i]));
    ly.push_back(std::log(std::abs(value[i])));
  }
  return fit_line(lx, ly).slope;
}

/// Runs fn(i) for i in [0, n) on `jobs` threads. Results must go to
/// preallocated per-index slots so runs are deterministic.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mutex;
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  int k = std::min<std::size_t>(jobs, n);
  pool.reserve(k);
  for (int t = 0; t < k; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

/// FNV-1a over bytes, used for content-addressed caching and manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ull) {
  return fnv1a(s.data(), s.size(), h);
}

inline std::string to_hex(std::uint64_t v) {
  static const char* d = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = d[v & 0xf];
    v >>= 4;
  }
  return s;
}

/// Natural cubic spline through (t_i, v_i); t strictly increasing.
/// Used for interpolating quantities sampled along a geodesic.
template <typename T>
class CubicSpline {
 public:
  CubicSpline() = default;
  CubicSpline(std::vector<double> t, std::vector<T> v) : t_(std::move(t)), v_(std::move(v)) {
    size_t n = t_.size();
    if (n < 2 || v_.size() != n) fail_invalid("CubicSpline: bad sizes");
    m_.assign(n, T{});
    if (n == 2) return;
    // Tridiagonal solve for second derivatives, natural ends.
    std::vector<double> a(n, 0), b(n, 0), c(n, 0);
    std::vector<T> d(n, T{});
    b[0] = 1.0;
    b[n - 1] = 1.0;
    for (size_t i = 1; i + 1 < n; ++i) {
      double h0 = t_[i] - t_[i - 1], h1 = t_[i + 1] - t_[i];
      a[i] = h0 / 6.0;
      b[i] = (h0 + h1) / 3.0;
      c[i] = h1 / 6.0;
      d[i] = (v_[i + 1] - v_[i]) * (1.0 / h1) - (v_[i] - v_[i - 1]) * (1.0 / h0);
    }
    std::vector<double> cp(n, 0);
    std::vector<T> dp(n, T{});
    cp[0] = c[0] / b[0];
    dp[0] = d[0] * (1.0 / b[0]);
    for (size_t i = 1; i < n; ++i) {
      double m = b[i] - a[i] * cp[i - 1];
      cp[i] = c[i] / m;
      dp[i] = (d[i] - dp[i - 1] * a[i]) * (1.0 / m);
    }
    m_[n - 1] = dp[n - 1];
    for (size_t i = n - 1; i-- > 0;) m_[i] = dp[i] - m_[i + 1] * cp[i];
  }

  T eval(double t) const { return eval_impl(t, 0); }
  T deriv(double t) const { return eval_impl(t, 1); }
  T deriv2(double t) const { return eval_impl(t, 2); }
  double t_min() const { return t_.front(); }
  double t_max() const { return t_.back(); }

 private:
  T eval_impl(double t, int order) const {
    size_t n = t_.size();
    size_t i = std::upper_bound(t_.begin(), t_.end(), t) - t_.begin();
    if (i == 0) i = 1;
    if (i >= n) i = n - 1;
    size_t j = i - 1;
    double h = t_[i] - t_[j];
    double A = (t_[i] - t) / h, B = (t - t_[j]) / h;
    if (order == 0) {
      return v_[j] * A + v_[i] * B +
             (m_[j] * (A * A * A - A) + m_[i] * (B * B * B - B)) * (h * h / 6.0);
    }
    if (order == 1) {
      return (v_[i] - v_[j]) * (1.0 / h) +
             (m_[j] * (1.0 - 3.0 * A * A) + m_[i] * (3.0 * B * B - 1.0)) * (h / 6.0);
    }
    return m_[j] * A + m_[i] * B;
  }

  std::vector<double> t_;
  std::vector<T> v_;
  std::vector<T> m_;
};

constexpr double kPi = 3.14159265358979323846;

}  // namespace ctalab
