#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kidppg/types.hpp"

namespace kidppg::signal {

using cplx = std::complex<double>;

// Full-length DFT of a real input. bins.size() == n, df = fs / n.
struct Spectrum {
  std::vector<cplx> bins;
  double df = 0.0;
  std::size_t n = 0;
};

// Complex transforms of arbitrary length (FFTW). The inverse is
// unnormalized (no 1/n).
std::vector<cplx> fft(std::vector<cplx> x);
std::vector<cplx> ifft_unnormalized(std::vector<cplx> x);

Spectrum dft_forward(std::span<const double> x, double fs = 1.0);
// Real part of the normalized inverse transform.
std::vector<double> dft_inverse(const Spectrum& s);
// Bins 0..n/2 of the real-input transform.
std::vector<cplx> half_spectrum(std::span<const double> x);

bool is_power_of_two(std::size_t n);
std::size_t next_power_of_two(std::size_t n);

struct BandstopDesign {
  double fs = 0.0;
  double f_lo = 0.0;  // requested stop band, Hz
  double f_hi = 0.0;
  double transition = 0.0;  // Hamming transition width 3.3 * fs / taps, Hz
  double cut_lo = 0.0;      // sinc cutoffs actually used (0 => no low-pass branch)
  double cut_hi = 0.0;
};

struct FirFilter {
  std::vector<double> taps;
  BandstopDesign design;
};

constexpr std::size_t kAdversarialTaps = 81;

// Hamming-windowed-sinc band-stop. The sinc cutoffs sit half a transition
// width outside [f_lo, f_hi] so the whole requested band lands in the
// window's stop region rather than on the -6 dB cutoff points.
FirFilter design_bandstop(double fs, double f_lo, double f_hi, std::size_t taps = kAdversarialTaps);

// Hamming-windowed-sinc low-pass with unit DC gain (cutoff = -6 dB point).
FirFilter design_lowpass(double fs, double cutoff, std::size_t taps = 31);

double hamming_transition_width(double fs, std::size_t taps);

// |H(f)| of an FIR evaluated directly from the taps.
double magnitude_response(const FirFilter& f, double freq_hz, double fs);

// Same-length, group-delay-compensated FIR filtering with zero-padded edges.
std::vector<double> apply_fir(std::span<const double> x, const FirFilter& f);
Channel apply_fir(const Channel& x, const FirFilter& f);

// "Same"-length centered cross-correlation with zero padding:
// y[t] = sum_j k[j] * x[t + j - (K-1)/2].
std::vector<double> correlate_same(std::span<const double> x, std::span<const double> kernel);

// Band-limited (FFT) resampling. Output length is round(n * fs_out / fs_in).
// A straight line between the end points is removed before the transform and
// added back afterwards so the periodic extension has no jump.
std::vector<double> resample(std::span<const double> x, double fs_in, double fs_out);
Channel resample(const Channel& x, double fs_out);

struct SpectralPeak {
  double bpm = 0.0;
  double magnitude = 0.0;         // at the returned peak
  double global_magnitude = 0.0;  // largest magnitude anywhere in (0, fs/2]
};

constexpr std::size_t kPeakPadFactor = 4;

// Mean-removed, zero-padded (>= 4x, power of two) magnitude spectrum argmax
// within [band_lo_bpm, band_hi_bpm]. Throws NoDominantPeak on a flat input.
SpectralPeak spectral_peak(std::span<const double> x, double fs, double band_lo_bpm,
                           double band_hi_bpm);
Bpm dominant_frequency_bpm(std::span<const double> x, double fs, double band_lo_bpm = 40.0,
                           double band_hi_bpm = 300.0);

// Energy of the zero-padded spectrum inside [f_lo, f_hi] Hz (mean removed).
double band_power(std::span<const double> x, double fs, double f_lo, double f_hi,
                  std::size_t pad_factor = kPeakPadFactor);

std::vector<double> zscore(std::span<const double> x);

double pearson(std::span<const double> a, std::span<const double> b);
double rms(std::span<const double> x);

struct WindowOptions {
  double win_s = 8.0;
  double stride_s = 2.0;
  double fs = 32.0;  // common analysis rate
};

// Number of complete windows over a span of `duration_s` seconds.
std::size_t window_count(double duration_s, double win_s, double stride_s);

// Resamples the required channels to opts.fs and cuts complete windows over
// the common time span. Labels are the hr_track interpolated at each frame's
// end time (absent outside the track). Frame activity is the interval
// containing the frame center.
std::vector<SampleFrame> window_stream(const SessionRecording& s, const WindowOptions& opts = {});

// Channels of a session resampled to a common rate and cropped to the common
// span, in the order ppg, acc_x, acc_y, acc_z.
struct AlignedSignals {
  double t0 = 0.0;
  double fs = 0.0;
  std::vector<double> ppg;
  std::vector<double> acc;  // row-major n x 3
  std::size_t size() const { return ppg.size(); }
};
AlignedSignals align_channels(const SessionRecording& s, double fs);

// Windowing over already aligned signals; `meta` supplies labels, activities
// and the subject id.
std::vector<SampleFrame> window_aligned(const AlignedSignals& a, const SessionRecording& meta,
                                        const WindowOptions& opts = {});

// Linear interpolation of the HR track, nullopt outside its time range.
std::optional<Bpm> hr_at(const std::vector<HrPoint>& track, double t);

}  // namespace kidppg::signal
