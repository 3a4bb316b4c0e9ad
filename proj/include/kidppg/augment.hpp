#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kidppg/types.hpp"

namespace kidppg::augment {

enum class Provenance { Original, Adversarial, HighHr };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

inline constexpr double kLabelLo = 40.0;
inline constexpr double kLabelHi = 300.0;  // exclusive
inline constexpr double kBandHalfWidthBpm = 2.5;
inline constexpr double kMinBandEdgeHz = 0.1;
inline constexpr double kCleanTolBpm = 5.0;

// A training example. `prev` is the preceding window of the same session
// (stride apart) when the network uses temporal attention; absent for the
// first window.
struct LabeledFrame {
  SampleFrame frame;
  std::optional<SampleFrame> prev;
  Bpm hr_label = 0.0;
  Provenance provenance = Provenance::Original;
};

// Label ~ Uniform[40, 300).
Bpm random_label(std::mt19937_64& rng);

// PPG band-stopped (81 taps, sequentially) at i*hr +- 2.5 BPM for i = 1..3.
// Bands reaching Nyquist are skipped; a band touching DC has its low edge
// clamped to 0.1 Hz and a warning appended to `warnings` if given.
std::vector<double> erase_bvp(std::span<const double> ppg, double fs, Bpm hr,
                              std::vector<std::string>* warnings = nullptr);

// Erases both the current and the previous window (the network sees both),
// keeps ACC and timestamps, and draws a new label.
LabeledFrame make_adversarial_example(const LabeledFrame& lf, std::mt19937_64& rng,
                                      std::vector<std::string>* warnings = nullptr);

// One adversarial example per original (labels drawn in input order), then a
// uniformly random subset of round(fraction * n) is kept, in input order.
std::vector<LabeledFrame> build_adversarial_subset(const std::vector<LabeledFrame>& ds, double fraction,
                                                   std::mt19937_64& rng,
                                                   std::vector<std::string>* warnings = nullptr);

bool is_clean_frame(const LabeledFrame& lf, double tol_bpm = kCleanTolBpm);

// x2 time compression of `src` into n samples: low-pass at 0.45 * (fs / 2)
// then every second sample. With fewer than 2n source samples the frame's
// own n samples are compressed and tiled twice.
std::vector<double> speed_up_x2(std::span<const double> src, std::size_t n, double fs);

// ctx_cur: 2N source samples starting at the frame's t0 (current + next
// window). ctx_prev: the same for the previous output window. Either may be
// empty, which selects the tiling fallback. nullopt when 2 * hr >= 300.
std::optional<LabeledFrame> make_high_hr_sample(const LabeledFrame& lf, std::span<const double> ctx_cur = {},
                                                std::span<const double> ctx_prev = {});

// Concatenation shuffled with rng.
std::vector<LabeledFrame> merge_training_sets(const std::vector<LabeledFrame>& original,
                                              const std::vector<LabeledFrame>& high_hr,
                                              const std::vector<LabeledFrame>& adversarial, std::mt19937_64& rng);

std::map<Provenance, std::size_t> provenance_counts(const std::vector<LabeledFrame>& ds);

// Cache directory: manifest.txt (counts per provenance, seeds, shape),
// frames.csv, ppg.f32, prev.f32, acc.f32, prev_acc.f32 (zeros where there is no prev).
struct AugmentedSet {
  std::vector<LabeledFrame> frames;
  std::map<std::string, std::string> info;  // seeds and options, written to the manifest
};
void save_augmented(const AugmentedSet& set, const std::filesystem::path& dir);
AugmentedSet load_augmented(const std::filesystem::path& dir);

}  // namespace kidppg::augment
