#pragma once

// Slow, direct reference implementations used only by the tests.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace oracle {

inline std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      // reduce the index first so the angle stays small
      const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

// erf(z) = 2/sqrt(pi) exp(-z^2) sum_n 2^n z^(2n+1) / (2n+1)!!
inline double erf_series(double z) {
  double term = z;  // n = 0
  double sum = term;
  for (int n = 1; n < 400; ++n) {
    term *= 2.0 * z * z / (2.0 * n + 1.0);
    sum += term;
    if (std::abs(term) < 1e-18 * std::abs(sum)) break;
  }
  return 2.0 / std::sqrt(std::numbers::pi) * std::exp(-z * z) * sum;
}

// P(|X - mu| <= thr), X ~ N(mu, sigma^2), via the series
inline double trust(double sigma, double thr) { return erf_series(thr / (sigma * std::sqrt(2.0))); }

// |H(f)| of an FIR from the taps, by direct summation
inline double fir_mag(const std::vector<double>& h, double f, double fs) {
  std::complex<double> acc = 0.0;
  for (std::size_t j = 0; j < h.size(); ++j) {
    const double ang = -2.0 * std::numbers::pi * f * static_cast<double>(j) / fs;
    acc += h[j] * std::complex<double>(std::cos(ang), std::sin(ang));
  }
  return std::abs(acc);
}

inline std::vector<double> tone(double freq_hz, double fs, std::size_t n, double amp = 1.0, double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t)
    x[t] = amp * std::sin(2.0 * std::numbers::pi * freq_hz * static_cast<double>(t) / fs + phase);
  return x;
}

inline double power_at(const std::vector<double>& x, double freq_hz, double fs) {
  // single-bin Goertzel-style projection, fine for integer-cycle tones
  std::complex<double> acc = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double ang = -2.0 * std::numbers::pi * freq_hz * static_cast<double>(t) / fs;
    acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
  }
  return std::norm(acc);
}

// Frequency (BPM) of the least-squares sinusoid x ~ c + a cos + b sin, searched
// on a fine grid around `center_bpm`. Unlike a spectral peak it is not pulled
// by the mirror image near Nyquist.
inline double fit_tone_bpm(const std::vector<double>& x, double fs, double center_bpm, double half_width_bpm,
                           double step_bpm = 0.01) {
  double best = center_bpm, best_rss = 1e300;
  const std::size_t n = x.size();
  for (double bpm = center_bpm - half_width_bpm; bpm <= center_bpm + half_width_bpm; bpm += step_bpm) {
    const double w = 2.0 * std::numbers::pi * bpm / 60.0 / fs;
    // normal equations for [1, cos, sin]
    double g[3][3] = {}, r[3] = {};
    for (std::size_t t = 0; t < n; ++t) {
      const double b[3] = {1.0, std::cos(w * static_cast<double>(t)), std::sin(w * static_cast<double>(t))};
      for (int i = 0; i < 3; ++i) {
        r[i] += b[i] * x[t];
        for (int j = 0; j < 3; ++j) g[i][j] += b[i] * b[j];
      }
    }
    // Gaussian elimination, 3x3
    for (int c = 0; c < 3; ++c)
      for (int i = c + 1; i < 3; ++i) {
        const double f = g[i][c] / g[c][c];
        for (int j = c; j < 3; ++j) g[i][j] -= f * g[c][j];
        r[i] -= f * r[c];
      }
    double coef[3];
    for (int i = 2; i >= 0; --i) {
      double acc = r[i];
      for (int j = i + 1; j < 3; ++j) acc -= g[i][j] * coef[j];
      coef[i] = acc / g[i][i];
    }
    double rss = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double e = x[t] - coef[0] - coef[1] * std::cos(w * static_cast<double>(t)) -
                       coef[2] * std::sin(w * static_cast<double>(t));
      rss += e * e;
    }
    if (rss < best_rss) {
      best_rss = rss;
      best = bpm;
    }
  }
  return best;
}

}  // namespace oracle
