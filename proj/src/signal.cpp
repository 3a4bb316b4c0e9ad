#include "kidppg/signal.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

#include "kidppg/error.hpp"

namespace kidppg::signal {

namespace {

constexpr double kPi = std::numbers::pi;

// FFTW plans are cached per (length, direction). Planning is not
// thread-safe, execution with the new-array interface is.
fftw_plan plan_for(std::size_t n, bool inverse) {
  static std::mutex mu;
  static std::map<std::pair<std::size_t, bool>, fftw_plan> plans;
  std::lock_guard lock(mu);
  auto& p = plans[{n, inverse}];
  if (!p) {
    std::vector<cplx> in(n), out(n);
    p = fftw_plan_dft_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(in.data()),
                         reinterpret_cast<fftw_complex*>(out.data()), inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                         FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!p) throw std::runtime_error("fftw: planning failed for n = " + std::to_string(n));
  }
  return p;
}

std::vector<cplx> transform(std::vector<cplx> x, bool inverse) {
  if (x.empty()) throw std::invalid_argument("dft: empty input");
  std::vector<cplx> out(x.size());
  fftw_execute_dft(plan_for(x.size(), inverse), reinterpret_cast<fftw_complex*>(x.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

void check_finite(std::span<const double> x, const char* what) {
  for (double v : x)
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite sample");
}

std::vector<double> lowpass_sinc(double fc, double fs, std::size_t taps) {
  std::vector<double> h(taps);
  const double mid = static_cast<double>(taps - 1) / 2.0;
  const double wc = 2.0 * fc / fs;
  for (std::size_t i = 0; i < taps; ++i) {
    const double n = static_cast<double>(i) - mid;
    h[i] = (n == 0.0) ? wc : std::sin(kPi * wc * n) / (kPi * n);
  }
  return h;
}

std::vector<double> hamming(std::size_t taps) {
  std::vector<double> w(taps, 1.0);
  if (taps == 1) return w;
  for (std::size_t i = 0; i < taps; ++i)
    w[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(taps - 1));
  return w;
}

}  // namespace

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::vector<cplx> fft(std::vector<cplx> x) { return transform(std::move(x), false); }

std::vector<cplx> ifft_unnormalized(std::vector<cplx> x) { return transform(std::move(x), true); }

Spectrum dft_forward(std::span<const double> x, double fs) {
  if (x.empty()) throw std::invalid_argument("dft_forward: empty input");
  std::vector<cplx> c(x.begin(), x.end());
  Spectrum s;
  s.n = x.size();
  s.df = fs / static_cast<double>(s.n);
  s.bins = fft(std::move(c));
  return s;
}

std::vector<double> dft_inverse(const Spectrum& s) {
  auto t = ifft_unnormalized(s.bins);
  std::vector<double> out(t.size());
  const double scale = 1.0 / static_cast<double>(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i].real() * scale;
  return out;
}

std::vector<cplx> half_spectrum(std::span<const double> x) {
  auto s = dft_forward(x);
  s.bins.resize(x.size() / 2 + 1);
  return s.bins;
}

double hamming_transition_width(double fs, std::size_t taps) {
  return 3.3 * fs / static_cast<double>(taps);
}

FirFilter design_bandstop(double fs, double f_lo, double f_hi, std::size_t taps) {
  if (!(fs > 0)) throw std::invalid_argument("design_bandstop: fs must be positive");
  if (taps % 2 == 0 || taps < 3) throw std::invalid_argument("design_bandstop: tap count must be odd and >= 3");
  if (!(f_lo > 0.0 && f_lo < f_hi && f_hi < fs / 2.0))
    throw std::invalid_argument("design_bandstop: band must satisfy 0 < f_lo < f_hi < fs/2");

  FirFilter f;
  f.design.fs = fs;
  f.design.f_lo = f_lo;
  f.design.f_hi = f_hi;
  f.design.transition = hamming_transition_width(fs, taps);
  const double widen = f.design.transition / 2.0;
  f.design.cut_lo = std::max(0.0, f_lo - widen);
  f.design.cut_hi = std::min(fs / 2.0, f_hi + widen);

  // delta - lowpass(cut_hi) + lowpass(cut_lo); a cutoff that falls off the
  // axis drops its branch (high-pass or low-pass degenerate case).
  std::vector<double> h(taps, 0.0);
  h[(taps - 1) / 2] = 1.0;
  if (f.design.cut_hi < fs / 2.0) {
    auto hi = lowpass_sinc(f.design.cut_hi, fs, taps);
    for (std::size_t i = 0; i < taps; ++i) h[i] -= hi[i];
  } else {
    h.assign(taps, 0.0);
  }
  if (f.design.cut_lo > 0.0) {
    auto lo = lowpass_sinc(f.design.cut_lo, fs, taps);
    for (std::size_t i = 0; i < taps; ++i) h[i] += lo[i];
  }
  const auto w = hamming(taps);
  for (std::size_t i = 0; i < taps; ++i) h[i] *= w[i];
  // Exact symmetry; sin() round-off is not guaranteed to be mirror-exact.
  for (std::size_t i = 0; i < taps / 2; ++i) h[taps - 1 - i] = h[i];
  f.taps = std::move(h);
  return f;
}

FirFilter design_lowpass(double fs, double cutoff, std::size_t taps) {
  if (!(fs > 0)) throw std::invalid_argument("design_lowpass: fs must be positive");
  if (taps % 2 == 0 || taps < 3) throw std::invalid_argument("design_lowpass: tap count must be odd and >= 3");
  if (!(cutoff > 0.0 && cutoff < fs / 2.0)) throw std::invalid_argument("design_lowpass: cutoff must lie in (0, fs/2)");
  FirFilter f;
  f.design.fs = fs;
  f.design.transition = hamming_transition_width(fs, taps);
  f.design.cut_lo = cutoff;
  auto h = lowpass_sinc(cutoff, fs, taps);
  const auto w = hamming(taps);
  double sum = 0.0;
  for (std::size_t i = 0; i < taps; ++i) sum += (h[i] *= w[i]);
  for (double& v : h) v /= sum;
  for (std::size_t i = 0; i < taps / 2; ++i) h[taps - 1 - i] = h[i];
  f.taps = std::move(h);
  return f;
}

double magnitude_response(const FirFilter& f, double freq_hz, double fs) {
  cplx acc{0.0, 0.0};
  for (std::size_t i = 0; i < f.taps.size(); ++i)
    acc += f.taps[i] * std::polar(1.0, -2.0 * kPi * freq_hz / fs * static_cast<double>(i));
  return std::abs(acc);
}

std::vector<double> correlate_same(std::span<const double> x, std::span<const double> kernel) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const auto k = static_cast<std::ptrdiff_t>(kernel.size());
  const std::ptrdiff_t half = (k - 1) / 2;
  std::vector<double> y(x.size(), 0.0);
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    double acc = 0.0;
    const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, half - t);
    const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(k, n - t + half);
    for (std::ptrdiff_t j = j0; j < j1; ++j) acc += kernel[j] * x[t + j - half];
    y[t] = acc;
  }
  return y;
}

std::vector<double> apply_fir(std::span<const double> x, const FirFilter& f) {
  if (x.size() <= f.taps.size())
    throw std::invalid_argument("apply_fir: input length must exceed tap count");
  // Convolution with a centered kernel equals correlation with the reversed
  // kernel; linear-phase taps are symmetric, but reverse anyway for generality.
  std::vector<double> rev(f.taps.rbegin(), f.taps.rend());
  return correlate_same(x, rev);
}

Channel apply_fir(const Channel& x, const FirFilter& f) {
  Channel out = x;
  out.samples = apply_fir(std::span<const double>(x.samples), f);
  return out;
}

std::vector<double> resample(std::span<const double> x, double fs_in, double fs_out) {
  if (!(fs_in > 0) || !(fs_out > 0)) throw std::invalid_argument("resample: sampling rates must be positive");
  if (fs_in == fs_out || x.empty()) return {x.begin(), x.end()};
  const std::size_t n_in = x.size();
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * fs_out / fs_in));
  if (n_out == 0) return {};
  if (n_in == 1) return std::vector<double>(n_out, x[0]);

  // Endpoint-matched line: x[0] at t=0, x[n-1] at t=(n-1)/fs_in.
  const double slope = (x[n_in - 1] - x[0]) / static_cast<double>(n_in - 1);
  std::vector<cplx> c(n_in);
  for (std::size_t i = 0; i < n_in; ++i) c[i] = x[i] - (x[0] + slope * static_cast<double>(i));
  auto X = fft(std::move(c));

  std::vector<cplx> Y(n_out, cplx{0.0, 0.0});
  const std::size_t n = std::min(n_in, n_out);
  const std::size_t nyq = n / 2 + 1;
  for (std::size_t k = 0; k < nyq; ++k) Y[k] = X[k];
  for (std::size_t k = 1; k < n - nyq + 1; ++k) Y[n_out - k] = X[n_in - k];
  if (n % 2 == 0) {
    if (n_out < n_in) {
      Y[n / 2] += X[n_in - n / 2];
    } else if (n_out > n_in) {
      Y[n / 2] *= 0.5;
      Y[n_out - n / 2] = Y[n / 2];
    }
  }
  auto y = ifft_unnormalized(std::move(Y));
  std::vector<double> out(n_out);
  const double scale = 1.0 / static_cast<double>(n_in);
  const double slope_out = slope * static_cast<double>(n_in) / static_cast<double>(n_out);
  for (std::size_t i = 0; i < n_out; ++i)
    out[i] = y[i].real() * scale + x[0] + slope_out * static_cast<double>(i);
  return out;
}

Channel resample(const Channel& x, double fs_out) {
  if (!(fs_out > 0)) throw std::invalid_argument("resample: fs_out must be positive");
  Channel out = x;
  out.samples = resample(std::span<const double>(x.samples), x.fs, fs_out);
  out.fs = fs_out;
  return out;
}

SpectralPeak spectral_peak(std::span<const double> x, double fs, double band_lo_bpm,
                           double band_hi_bpm) {
  if (x.empty()) throw std::invalid_argument("spectral_peak: empty input");
  if (!(band_lo_bpm > 0.0 && band_lo_bpm < band_hi_bpm && band_hi_bpm <= fs / 2.0 * kBpmPerHz))
    throw std::invalid_argument("spectral_peak: band must lie within (0, fs/2]");
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  const std::size_t n = next_power_of_two(x.size() * kPeakPadFactor);
  std::vector<cplx> c(n, cplx{0.0, 0.0});
  for (std::size_t i = 0; i < x.size(); ++i) c[i] = x[i] - mean;
  const auto X = fft(std::move(c));
  const double df = fs / static_cast<double>(n);

  SpectralPeak best;
  bool found = false;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    const double mag = std::abs(X[k]);
    best.global_magnitude = std::max(best.global_magnitude, mag);
    const double bpm = static_cast<double>(k) * df * kBpmPerHz;
    if (bpm < band_lo_bpm || bpm > band_hi_bpm) continue;
    if (!found || mag > best.magnitude) {
      best.magnitude = mag;
      best.bpm = bpm;
      found = true;
    }
  }
  if (!found) throw std::invalid_argument("spectral_peak: band contains no spectral bins");
  if (!(best.global_magnitude > 0.0) || !(best.magnitude > 0.0))
    throw NoDominantPeak("spectral_peak: signal has no spectral content");
  return best;
}

Bpm dominant_frequency_bpm(std::span<const double> x, double fs, double band_lo_bpm,
                           double band_hi_bpm) {
  return spectral_peak(x, fs, band_lo_bpm, band_hi_bpm).bpm;
}

double band_power(std::span<const double> x, double fs, double f_lo, double f_hi,
                  std::size_t pad_factor) {
  if (x.empty()) return 0.0;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  const std::size_t n = next_power_of_two(x.size() * std::max<std::size_t>(1, pad_factor));
  std::vector<cplx> c(n, cplx{0.0, 0.0});
  for (std::size_t i = 0; i < x.size(); ++i) c[i] = x[i] - mean;
  const auto X = fft(std::move(c));
  const double df = fs / static_cast<double>(n);
  double p = 0.0;
  for (std::size_t k = 0; k <= n / 2; ++k) {
    const double f = static_cast<double>(k) * df;
    if (f >= f_lo && f <= f_hi) p += std::norm(X[k]);
  }
  return p;
}

std::vector<double> zscore(std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  if (x.empty()) return out;
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (double& v : out) v = sd > 1e-12 ? (v - mean) / sd : 0.0;
  return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("pearson: length mismatch");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

std::size_t window_count(double duration_s, double win_s, double stride_s) {
  if (!(win_s > 0) || !(stride_s > 0)) throw std::invalid_argument("window_count: win and stride must be positive");
  if (duration_s + 1e-9 < win_s) return 0;
  return static_cast<std::size_t>(std::floor((duration_s - win_s) / stride_s + 1e-9)) + 1;
}

std::optional<Bpm> hr_at(const std::vector<HrPoint>& track, double t) {
  if (track.empty()) return std::nullopt;
  constexpr double eps = 1e-9;
  if (t < track.front().t_s - eps || t > track.back().t_s + eps) return std::nullopt;
  if (track.size() == 1) return track.front().hr;
  auto it = std::lower_bound(track.begin(), track.end(), t,
                             [](const HrPoint& p, double v) { return p.t_s < v; });
  if (it == track.begin()) return it->hr;
  if (it == track.end()) return track.back().hr;
  const auto& b = *it;
  const auto& a = *(it - 1);
  if (b.t_s - a.t_s <= 0.0) return b.hr;
  const double u = (t - a.t_s) / (b.t_s - a.t_s);
  return a.hr + u * (b.hr - a.hr);
}

AlignedSignals align_channels(const SessionRecording& s, double fs) {
  AlignedSignals out;
  out.fs = fs;
  std::vector<Channel> chans;
  for (const char* name : kRequiredChannels) {
    const Channel& c = s.channel(name);
    check_finite(c.samples, name);
    chans.push_back(c.fs == fs ? c : resample(c, fs));
  }
  double t_start = -1e300, t_end = 1e300;
  for (const auto& c : chans) {
    t_start = std::max(t_start, c.t0);
    t_end = std::min(t_end, c.t_end());
  }
  out.t0 = t_start;
  if (t_end <= t_start) return out;
  auto n = static_cast<std::size_t>(std::floor((t_end - t_start) * fs + 1e-6));
  std::vector<std::size_t> offset(chans.size());
  for (std::size_t c = 0; c < chans.size(); ++c) {
    const auto off = std::llround((t_start - chans[c].t0) * fs);
    offset[c] = static_cast<std::size_t>(std::max<long long>(0, off));
    n = std::min(n, chans[c].samples.size() - std::min(chans[c].samples.size(), offset[c]));
  }
  out.ppg.assign(chans[0].samples.begin() + static_cast<std::ptrdiff_t>(offset[0]),
                 chans[0].samples.begin() + static_cast<std::ptrdiff_t>(offset[0] + n));
  out.acc.resize(n * 3);
  for (std::size_t axis = 0; axis < 3; ++axis)
    for (std::size_t t = 0; t < n; ++t) out.acc[t * 3 + axis] = chans[axis + 1].samples[offset[axis + 1] + t];
  return out;
}

std::vector<SampleFrame> window_aligned(const AlignedSignals& a, const SessionRecording& meta,
                                        const WindowOptions& opts) {
  const auto n_win = static_cast<std::size_t>(std::llround(opts.win_s * a.fs));
  const double duration = static_cast<double>(a.size()) / a.fs;
  const std::size_t count = window_count(duration, opts.win_s, opts.stride_s);
  std::vector<SampleFrame> frames;
  frames.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double rel = static_cast<double>(i) * opts.stride_s;
    const auto start = static_cast<std::size_t>(std::llround(rel * a.fs));
    if (start + n_win > a.size()) break;
    SampleFrame f;
    f.fs = a.fs;
    f.t0 = a.t0 + rel;
    f.index = i;
    f.subject_id = meta.subject_id;
    f.ppg.assign(a.ppg.begin() + static_cast<std::ptrdiff_t>(start),
                 a.ppg.begin() + static_cast<std::ptrdiff_t>(start + n_win));
    f.acc.assign(a.acc.begin() + static_cast<std::ptrdiff_t>(start * 3),
                 a.acc.begin() + static_cast<std::ptrdiff_t>((start + n_win) * 3));
    f.hr = hr_at(meta.hr_track, f.t0 + opts.win_s);
    f.activity = meta.activity_at(f.t0 + opts.win_s / 2.0);
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<SampleFrame> window_stream(const SessionRecording& s, const WindowOptions& opts) {
  if (!(opts.win_s > 0) || !(opts.stride_s > 0) || !(opts.fs > 0))
    throw std::invalid_argument("window_stream: win, stride and fs must be positive");
  return window_aligned(align_channels(s, opts.fs), s, opts);
}

}  // namespace kidppg::signal
