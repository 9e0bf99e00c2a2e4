#pragma once

// Signal processing used around the network: spline upscaling, Chebyshev
// type I low-pass design and filtering, decimation, STFT and quality metrics.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tfilm/error.hpp"

namespace tfilm::dsp {

using Signal = std::vector<double>;
using cplx = std::complex<double>;

// ---- cubic splines ----

// Natural cubic spline through (xs[i], ys[i]) with strictly increasing xs.
// Outside [xs.front(), xs.back()] the end segments are extended.
class NaturalSpline {
 public:
  NaturalSpline(std::vector<double> xs, std::vector<double> ys) : x_(std::move(xs)), y_(std::move(ys)) {
    const std::size_t n = x_.size();
    if (n != y_.size()) fail(ErrorCode::LengthMismatch, "spline knots and values differ in length");
    if (n < 2) fail(ErrorCode::TooShort, "spline needs at least 2 knots");
    for (std::size_t i = 1; i < n; ++i)
      if (!(x_[i] > x_[i - 1])) fail(ErrorCode::InvalidSpec, "spline knots must be strictly increasing");
    m_.assign(n, 0.0);
    if (n < 3) return;
    // Thomas algorithm on the interior second derivatives.
    const std::size_t k = n - 2;
    std::vector<double> diag(k), upper(k), rhs(k);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double h0 = x_[i] - x_[i - 1], h1 = x_[i + 1] - x_[i];
      diag[i - 1] = 2.0 * (h0 + h1);
      upper[i - 1] = h1;
      rhs[i - 1] = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
    }
    for (std::size_t i = 1; i < k; ++i) {
      const double lower = x_[i + 1] - x_[i];
      const double w = lower / diag[i - 1];
      diag[i] -= w * upper[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    m_[k] = rhs[k - 1] / diag[k - 1];
    for (std::size_t i = k - 1; i-- > 0;) m_[i + 1] = (rhs[i] - upper[i] * m_[i + 2]) / diag[i];
  }

  double operator()(double x) const {
    const std::size_t n = x_.size();
    std::size_t seg;
    if (x <= x_.front()) {
      seg = 0;
    } else if (x >= x_.back()) {
      seg = n - 2;
    } else {
      seg = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), x) - x_.begin()) - 1;
    }
    const double h = x_[seg + 1] - x_[seg];
    const double a = (x_[seg + 1] - x) / h, b = (x - x_[seg]) / h;
    return a * y_[seg] + b * y_[seg + 1] +
           ((a * a * a - a) * m_[seg] + (b * b * b - b) * m_[seg + 1]) * h * h / 6.0;
  }

  const std::vector<double>& second_derivatives() const { return m_; }

 private:
  std::vector<double> x_, y_, m_;
};

// Samples x[i] sit at positions i*r of the output grid 0..r*len-1. The last
// r-1 outputs extrapolate the final cubic segment.
inline Signal spline_upsample(std::span<const double> x, std::size_t r) {
  if (r == 0) fail(ErrorCode::InvalidSpec, "upsampling ratio must be >= 1");
  if (r == 1) return Signal(x.begin(), x.end());
  if (x.size() < 4) fail(ErrorCode::TooShort, "spline upsampling needs at least 4 samples");
  std::vector<double> knots(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) knots[i] = static_cast<double>(i * r);
  const NaturalSpline s(std::move(knots), Signal(x.begin(), x.end()));
  Signal y(x.size() * r);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % r == 0 ? x[i / r] : s(static_cast<double>(i));
  return y;
}

// Re-fills positions flagged in `missing` by a natural spline through the
// remaining samples (linear when fewer than 3 remain).
inline Signal spline_fill(std::span<const double> x, const std::vector<bool>& missing) {
  if (missing.size() != x.size()) fail(ErrorCode::LengthMismatch, "mask and signal differ in length");
  std::vector<double> kx, ky;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!missing[i]) {
      kx.push_back(static_cast<double>(i));
      ky.push_back(x[i]);
    }
  Signal y(x.begin(), x.end());
  if (kx.size() == x.size()) return y;
  if (kx.empty()) return Signal(x.size(), 0.0);
  if (kx.size() == 1) return Signal(x.size(), ky[0]);
  const NaturalSpline s(std::move(kx), std::move(ky));
  for (std::size_t i = 0; i < x.size(); ++i)
    if (missing[i]) y[i] = s(static_cast<double>(i));
  return y;
}

// ---- IIR filters ----

struct IirFilter {
  std::vector<double> b;
  std::vector<double> a;  // a[0] == 1
  std::size_t order = 0;
  double ripple_db = 0.0;
  double cutoff = 0.0;  // fraction of Nyquist

  std::vector<cplx> poles() const;
  cplx response(double w) const {  // w in radians/sample
    const cplx z1 = std::polar(1.0, -w);
    cplx num = 0.0, den = 0.0, zk = 1.0;
    for (std::size_t k = 0; k < std::max(b.size(), a.size()); ++k) {
      if (k < b.size()) num += b[k] * zk;
      if (k < a.size()) den += a[k] * zk;
      zk *= z1;
    }
    return num / den;
  }
};

namespace detail {

// Coefficients of prod (z - r_i), highest power first.
inline std::vector<cplx> poly_from_roots(const std::vector<cplx>& roots) {
  std::vector<cplx> c{1.0};
  for (const cplx& r : roots) {
    c.push_back(0.0);
    for (std::size_t i = c.size() - 1; i > 0; --i) c[i] -= r * c[i - 1];
  }
  return c;
}

// Durand-Kerner root finder, adequate for the low orders used here.
inline std::vector<cplx> poly_roots(const std::vector<double>& coeffs) {
  const std::size_t n = coeffs.size() - 1;
  std::vector<cplx> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = std::pow(cplx(0.4, 0.9), static_cast<double>(i));
  auto eval = [&](cplx x) {
    cplx v = 0.0;
    for (double c : coeffs) v = v * x + c / coeffs[0];
    return v;
  };
  for (int it = 0; it < 2000; ++it) {
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      cplx den = 1.0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) den *= z[i] - z[j];
      const cplx step = eval(z[i]) / den;
      z[i] -= step;
      delta = std::max(delta, std::abs(step));
    }
    if (delta < 1e-15) break;
  }
  return z;
}

}  // namespace detail

inline std::vector<cplx> IirFilter::poles() const { return a.size() < 2 ? std::vector<cplx>{} : detail::poly_roots(a); }

// Analog Chebyshev I prototype, frequency-scaled to the pre-warped cutoff,
// then mapped through the bilinear transform (sampling rate 2, so Nyquist 1).
inline IirFilter cheby1_design(std::size_t order, double ripple_db, double cutoff) {
  if (!(cutoff > 0.0 && cutoff < 1.0)) fail(ErrorCode::InvalidCutoff, "cutoff must lie in (0, 1)");
  if (!(ripple_db > 0.0)) fail(ErrorCode::InvalidRipple, "ripple must be positive");
  if (order == 0) fail(ErrorCode::InvalidSpec, "filter order must be >= 1");
  using std::numbers::pi;
  const double N = static_cast<double>(order);
  const double eps = std::sqrt(std::pow(10.0, 0.1 * ripple_db) - 1.0);
  const double mu = std::asinh(1.0 / eps) / N;

  std::vector<cplx> p;
  for (int m = -static_cast<int>(order) + 1; m < static_cast<int>(order); m += 2) {
    const double theta = pi * m / (2.0 * N);
    p.push_back(-std::sinh(cplx(mu, theta)));
  }
  cplx gain = 1.0;
  for (const cplx& pk : p) gain *= -pk;
  double k = gain.real();
  if (order % 2 == 0) k /= std::sqrt(1.0 + eps * eps);

  const double fs = 2.0;
  const double warped = 2.0 * fs * std::tan(pi * cutoff / fs);
  for (cplx& pk : p) pk *= warped;
  k *= std::pow(warped, N);

  const double fs2 = 2.0 * fs;
  cplx den = 1.0;
  std::vector<cplx> pz;
  for (const cplx& pk : p) {
    pz.push_back((fs2 + pk) / (fs2 - pk));
    den *= fs2 - pk;
  }
  k *= (1.0 / den).real();
  const std::vector<cplx> zz(order, cplx(-1.0, 0.0));

  IirFilter f;
  f.order = order;
  f.ripple_db = ripple_db;
  f.cutoff = cutoff;
  for (const cplx& c : detail::poly_from_roots(zz)) f.b.push_back(k * c.real());
  for (const cplx& c : detail::poly_from_roots(pz)) f.a.push_back(c.real());
  return f;
}

// Direct-form II transposed. `z` (size max(len a, len b) - 1) is the initial
// state and is updated in place.
inline Signal iir_apply(const IirFilter& f, std::span<const double> x, std::vector<double>* state = nullptr) {
  const std::size_t n = std::max(f.a.size(), f.b.size());
  std::vector<double> b(f.b), a(f.a);
  b.resize(n, 0.0);
  a.resize(n, 0.0);
  const double a0 = a[0];
  for (double& v : b) v /= a0;
  for (double& v : a) v /= a0;
  std::vector<double> z = state && !state->empty() ? *state : std::vector<double>(n - 1, 0.0);
  z.resize(n - 1, 0.0);
  Signal y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const double yi = b[0] * xi + (n > 1 ? z[0] : 0.0);
    for (std::size_t j = 1; j + 1 < n; ++j) z[j - 1] = b[j] * xi + z[j] - a[j] * yi;
    if (n > 1) z[n - 2] = b[n - 1] * xi - a[n - 1] * yi;
    y[i] = yi;
  }
  if (state) *state = std::move(z);
  return y;
}

// Steady-state initial conditions for a unit step.
inline std::vector<double> lfilter_zi(const IirFilter& f) {
  const std::size_t n = std::max(f.a.size(), f.b.size());
  std::vector<double> b(f.b), a(f.a);
  b.resize(n, 0.0);
  a.resize(n, 0.0);
  const double a0 = a[0];
  for (double& v : b) v /= a0;
  for (double& v : a) v /= a0;
  const std::size_t m = n - 1;
  if (m == 0) return {};
  // (I - A^T) zi = b[1:] - a[1:] * b[0], A the companion matrix of a.
  std::vector<double> M(m * m, 0.0), rhs(m);
  for (std::size_t i = 0; i < m; ++i) {
    M[i * m + i] = 1.0;
    M[i * m + 0] += a[i + 1];
    if (i + 1 < m) M[i * m + i + 1] -= 1.0;
    rhs[i] = b[i + 1] - a[i + 1] * b[0];
  }
  for (std::size_t c = 0; c < m; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < m; ++r)
      if (std::abs(M[r * m + c]) > std::abs(M[piv * m + c])) piv = r;
    if (piv != c) {
      for (std::size_t k = 0; k < m; ++k) std::swap(M[c * m + k], M[piv * m + k]);
      std::swap(rhs[c], rhs[piv]);
    }
    for (std::size_t r = c + 1; r < m; ++r) {
      const double w = M[r * m + c] / M[c * m + c];
      for (std::size_t k = c; k < m; ++k) M[r * m + k] -= w * M[c * m + k];
      rhs[r] -= w * rhs[c];
    }
  }
  std::vector<double> zi(m);
  for (std::size_t c = m; c-- > 0;) {
    double s = rhs[c];
    for (std::size_t k = c + 1; k < m; ++k) s -= M[c * m + k] * zi[k];
    zi[c] = s / M[c * m + c];
  }
  return zi;
}

// Forward-backward filtering with odd extension at both ends, so the result
// has zero phase. The pad is 3*max(len a, len b), shortened for short inputs.
inline Signal filtfilt(const IirFilter& f, std::span<const double> x) {
  const std::size_t len = x.size();
  if (len == 0) return {};
  const std::size_t pad = std::min(3 * std::max(f.a.size(), f.b.size()), len - 1);
  Signal ext(len + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
  std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
  for (std::size_t i = 0; i < pad; ++i) ext[pad + len + i] = 2.0 * x[len - 1] - x[len - 2 - i];

  const std::vector<double> zi = lfilter_zi(f);
  auto scaled = [&zi](double s) {
    std::vector<double> z(zi);
    for (double& v : z) v *= s;
    return z;
  };
  std::vector<double> z = scaled(ext.front());
  Signal y = iir_apply(f, ext, &z);
  std::reverse(y.begin(), y.end());
  z = scaled(y.front());
  y = iir_apply(f, y, &z);
  std::reverse(y.begin(), y.end());
  return Signal(y.begin() + static_cast<std::ptrdiff_t>(pad), y.begin() + static_cast<std::ptrdiff_t>(pad + len));
}

inline constexpr std::size_t kDegradeOrder = 8;
inline constexpr double kDegradeRippleDb = 0.05;

inline IirFilter degrade_filter(std::size_t r) { return cheby1_design(kDegradeOrder, kDegradeRippleDb, 0.8 / static_cast<double>(r)); }

// Anti-alias low-pass (zero phase) followed by keeping every r-th sample.
inline Signal degrade(std::span<const double> x, std::size_t r) {
  if (r == 0) fail(ErrorCode::InvalidSpec, "ratio must be >= 1");
  if (r == 1) return Signal(x.begin(), x.end());
  const Signal filtered = filtfilt(degrade_filter(r), x);
  Signal y;
  y.reserve((x.size() + r - 1) / r);
  for (std::size_t i = 0; i < filtered.size(); i += r) y.push_back(filtered[i]);
  return y;
}

// ---- Fourier transforms ----

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 transform; n must be a power of two.
inline void fft_inplace(std::vector<cplx>& a) {
  const std::size_t n = a.size();
  if (!is_pow2(n)) fail(ErrorCode::InvalidSpec, "radix-2 transform needs a power-of-two length");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len)
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cplx w = std::polar(1.0, ang * static_cast<double>(k));
        const cplx u = a[i + k], v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
  }
}

// One-sided spectrum bins 0..n/2 by direct summation.
inline std::vector<cplx> dft_real(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<cplx> out(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    cplx s = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      s += x[t] * cplx(std::cos(ang), std::sin(ang));
    }
    out[k] = s;
  }
  return out;
}

inline std::vector<cplx> rfft(std::span<const double> x) {
  if (!is_pow2(x.size())) return dft_real(x);
  std::vector<cplx> a(x.begin(), x.end());
  fft_inplace(a);
  a.resize(x.size() / 2 + 1);
  return a;
}

enum class Window { Hann, Rectangular };

inline const char* to_string(Window w) { return w == Window::Hann ? "hann" : "rectangular"; }

struct StftConfig {
  std::size_t frame_length = 8192;
  std::size_t hop = 0;  // 0 means frame_length / 2
  Window window = Window::Hann;

  std::size_t effective_hop() const { return hop == 0 ? std::max<std::size_t>(1, frame_length / 2) : hop; }
};

struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::size_t frame_length = 0;
  std::size_t hop = 0;
  Window window = Window::Hann;
  std::vector<cplx> values;  // [frames][bins]

  cplx at(std::size_t t, std::size_t k) const { return values[t * bins + k]; }
};

// Periodic Hann window.
inline std::vector<double> make_window(Window w, std::size_t n) {
  std::vector<double> out(n, 1.0);
  if (w == Window::Hann)
    for (std::size_t i = 0; i < n; ++i)
      out[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return out;
}

inline Spectrogram stft(std::span<const double> x, const StftConfig& cfg = {}) {
  const std::size_t L = cfg.frame_length;
  if (L == 0) fail(ErrorCode::InvalidSpec, "frame length must be positive");
  if (x.size() < L)
    fail(ErrorCode::SignalTooShort, "signal of length " + std::to_string(x.size()) + " shorter than frame " +
                                        std::to_string(L));
  Spectrogram s;
  s.frame_length = L;
  s.hop = cfg.effective_hop();
  s.window = cfg.window;
  s.bins = L / 2 + 1;
  s.frames = (x.size() - L) / s.hop + 1;
  s.values.resize(s.frames * s.bins);
  const std::vector<double> win = make_window(cfg.window, L);
  std::vector<double> frame(L);
  for (std::size_t t = 0; t < s.frames; ++t) {
    for (std::size_t i = 0; i < L; ++i) frame[i] = x[t * s.hop + i] * win[i];
    const std::vector<cplx> spec = rfft(frame);
    std::copy(spec.begin(), spec.end(), s.values.begin() + static_cast<std::ptrdiff_t>(t * s.bins));
  }
  return s;
}

// ---- metrics ----

inline constexpr double kLsdEpsilon = 1e-10;

// 10*log10(|y|^2 / |x - y|^2). Returns +inf when x == y.
inline double snr(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    fail(ErrorCode::LengthMismatch, "snr: lengths " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sig += y[i] * y[i];
    const double d = x[i] - y[i];
    err += d * d;
  }
  if (sig == 0.0) fail(ErrorCode::ZeroReference, "snr: reference is all zeros");
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(sig / err);
}

// Mean over frames of the RMS over bins of ln(|S|^2 + eps) differences.
inline double lsd(std::span<const double> x, std::span<const double> y, const StftConfig& cfg = {}) {
  if (x.size() != y.size())
    fail(ErrorCode::LengthMismatch, "lsd: lengths " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  const Spectrogram sx = stft(x, cfg), sy = stft(y, cfg);
  double total = 0.0;
  for (std::size_t t = 0; t < sx.frames; ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k < sx.bins; ++k) {
      const double a = std::log(std::norm(sx.at(t, k)) + kLsdEpsilon);
      const double b = std::log(std::norm(sy.at(t, k)) + kLsdEpsilon);
      acc += (a - b) * (a - b);
    }
    total += std::sqrt(acc / static_cast<double>(sx.bins));
  }
  return total / static_cast<double>(sx.frames);
}

inline double mse(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::LengthMismatch, "mse: lengths differ");
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return s / static_cast<double>(x.size());
}

}  // namespace tfilm::dsp
