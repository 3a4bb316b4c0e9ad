#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "kidppg/augment.hpp"
#include "kidppg/error.hpp"
#include "kidppg/kv.hpp"
#include "kidppg/signal.hpp"

namespace kidppg::augment {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::Original: return "original";
    case Provenance::Adversarial: return "adversarial";
    case Provenance::HighHr: return "high_hr";
  }
  return "?";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "original") return Provenance::Original;
  if (s == "adversarial") return Provenance::Adversarial;
  if (s == "high_hr") return Provenance::HighHr;
  throw FormatError("unknown provenance '" + s + "'");
}

Bpm random_label(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(kLabelLo, kLabelHi);
  double v = u(rng);
  // uniform_real_distribution may round up to b
  if (v >= kLabelHi) v = std::nextafter(kLabelHi, kLabelLo);
  return v;
}

std::vector<double> erase_bvp(std::span<const double> ppg, double fs, Bpm hr, std::vector<std::string>* warnings) {
  if (!(hr > 0)) throw std::invalid_argument("erase_bvp: hr must be positive");
  std::vector<double> x(ppg.begin(), ppg.end());
  const double nyq = fs / 2.0;
  for (int i = 1; i <= 3; ++i) {
    double lo = (i * hr - kBandHalfWidthBpm) / kBpmPerHz;
    const double hi = (i * hr + kBandHalfWidthBpm) / kBpmPerHz;
    if (hi >= nyq) continue;
    if (lo < kMinBandEdgeHz) {
      if (warnings)
        warnings->push_back("band " + std::to_string(i) + " at " + format_double(hr) +
                            " BPM touches DC; low edge clamped to 0.1 Hz");
      lo = kMinBandEdgeHz;
    }
    x = signal::apply_fir(x, signal::design_bandstop(fs, lo, hi, signal::kAdversarialTaps));
  }
  return x;
}

LabeledFrame make_adversarial_example(const LabeledFrame& lf, std::mt19937_64& rng, std::vector<std::string>* warnings) {
  if (lf.provenance != Provenance::Original) throw std::invalid_argument("make_adversarial_example: input must be original");
  LabeledFrame out = lf;
  out.frame.ppg = erase_bvp(lf.frame.ppg, lf.frame.fs, lf.hr_label, warnings);
  if (out.prev) out.prev->ppg = erase_bvp(lf.prev->ppg, lf.prev->fs, lf.hr_label, nullptr);
  out.hr_label = random_label(rng);
  out.frame.hr = out.hr_label;
  out.provenance = Provenance::Adversarial;
  return out;
}

std::vector<LabeledFrame> build_adversarial_subset(const std::vector<LabeledFrame>& ds, double fraction,
                                                   std::mt19937_64& rng, std::vector<std::string>* warnings) {
  if (ds.empty()) throw std::invalid_argument("build_adversarial_subset: empty input");
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("build_adversarial_subset: fraction outside [0,1]");
  std::vector<LabeledFrame> all;
  all.reserve(ds.size());
  for (const auto& lf : ds) all.push_back(make_adversarial_example(lf, rng, warnings));
  const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<LabeledFrame> out;
  out.reserve(keep);
  for (auto i : idx) out.push_back(std::move(all[i]));
  return out;
}

bool is_clean_frame(const LabeledFrame& lf, double tol_bpm) {
  try {
    const Bpm f = signal::dominant_frequency_bpm(lf.frame.ppg, lf.frame.fs);
    return std::abs(f - lf.hr_label) <= tol_bpm;
  } catch (const NoDominantPeak&) {
    return false;
  }
}

std::vector<double> speed_up_x2(std::span<const double> src, std::size_t n, double fs) {
  if (n == 0) throw std::invalid_argument("speed_up_x2: empty output");
  const bool tile = src.size() < 2 * n;
  std::span<const double> s = tile ? src.first(std::min(src.size(), n)) : src.first(2 * n);
  if (s.size() < n) throw std::invalid_argument("speed_up_x2: source shorter than one frame");
  const auto lp = signal::design_lowpass(fs, 0.45 * fs / 2.0, 31);
  const auto f = signal::apply_fir(s, lp);
  std::vector<double> out(n);
  if (!tile) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f[2 * i];
  } else {
    const std::size_t half = (n + 1) / 2;
    for (std::size_t i = 0; i < n; ++i) out[i] = f[2 * (i % half)];
  }
  return out;
}

std::optional<LabeledFrame> make_high_hr_sample(const LabeledFrame& lf, std::span<const double> ctx_cur,
                                                std::span<const double> ctx_prev) {
  if (2.0 * lf.hr_label >= kLabelHi) return std::nullopt;
  LabeledFrame out = lf;
  const std::size_t n = lf.frame.size();
  out.frame.ppg = speed_up_x2(ctx_cur.size() >= 2 * n ? ctx_cur : std::span<const double>(lf.frame.ppg), n, lf.frame.fs);
  if (out.prev) {
    out.prev->ppg =
        speed_up_x2(ctx_prev.size() >= 2 * n ? ctx_prev : std::span<const double>(lf.prev->ppg), n, lf.prev->fs);
  }
  out.hr_label = 2.0 * lf.hr_label;
  out.frame.hr = out.hr_label;
  out.provenance = Provenance::HighHr;
  return out;
}

std::vector<LabeledFrame> merge_training_sets(const std::vector<LabeledFrame>& original,
                                              const std::vector<LabeledFrame>& high_hr,
                                              const std::vector<LabeledFrame>& adversarial, std::mt19937_64& rng) {
  std::vector<LabeledFrame> out;
  out.reserve(original.size() + high_hr.size() + adversarial.size());
  out.insert(out.end(), original.begin(), original.end());
  out.insert(out.end(), high_hr.begin(), high_hr.end());
  out.insert(out.end(), adversarial.begin(), adversarial.end());
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

std::map<Provenance, std::size_t> provenance_counts(const std::vector<LabeledFrame>& ds) {
  std::map<Provenance, std::size_t> c{{Provenance::Original, 0}, {Provenance::Adversarial, 0}, {Provenance::HighHr, 0}};
  for (const auto& lf : ds) ++c[lf.provenance];
  return c;
}

void save_augmented(const AugmentedSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t n = set.frames.empty() ? 0 : set.frames.front().frame.size();
  std::vector<double> ppg, prev, acc, prev_acc;
  ppg.reserve(set.frames.size() * n);
  std::ostringstream csv;
  csv << "index,t0_s,fs,hr_label,provenance,subject_id,activity,has_prev,prev_t0_s\n";
  for (std::size_t i = 0; i < set.frames.size(); ++i) {
    const auto& lf = set.frames[i];
    if (lf.frame.size() != n || lf.frame.acc.size() != 3 * n)
      throw std::invalid_argument("save_augmented: frames must share one length");
    ppg.insert(ppg.end(), lf.frame.ppg.begin(), lf.frame.ppg.end());
    acc.insert(acc.end(), lf.frame.acc.begin(), lf.frame.acc.end());
    if (lf.prev) {
      if (lf.prev->size() != n || lf.prev->acc.size() != 3 * n) throw std::invalid_argument("save_augmented: prev frame length differs");
      prev.insert(prev.end(), lf.prev->ppg.begin(), lf.prev->ppg.end());
      prev_acc.insert(prev_acc.end(), lf.prev->acc.begin(), lf.prev->acc.end());
    } else {
      prev.insert(prev.end(), n, 0.0);
      prev_acc.insert(prev_acc.end(), 3 * n, 0.0);
    }
    csv << lf.frame.index << ',' << format_double(lf.frame.t0) << ',' << format_double(lf.frame.fs) << ','
        << format_double(lf.hr_label) << ',' << to_string(lf.provenance) << ',' << lf.frame.subject_id << ','
        << lf.frame.activity << ',' << (lf.prev ? 1 : 0) << ',' << format_double(lf.prev ? lf.prev->t0 : 0.0) << '\n';
  }
  KeyValueDoc doc;
  doc.set("format_version", 1);
  doc.set("kind", std::string("augmented_set"));
  doc.set("frames", set.frames.size());
  doc.set("frame_len", n);
  for (const auto& [p, c] : provenance_counts(set.frames)) doc.set("count." + to_string(p), c);
  for (const auto& [k, v] : set.info) doc.set("info." + k, v);
  doc.save(dir / "manifest.txt");
  write_text(dir / "frames.csv", csv.str());
  write_f32(dir / "ppg.f32", ppg);
  write_f32(dir / "prev.f32", prev);
  write_f32(dir / "acc.f32", acc);
  write_f32(dir / "prev_acc.f32", prev_acc);
}

AugmentedSet load_augmented(const std::filesystem::path& dir) {
  const auto doc = KeyValueDoc::load(dir / "manifest.txt");
  if (doc.get_string("kind", "") != "augmented_set") throw FormatError(doc.origin() + ": not an augmented_set");
  const auto count = static_cast<std::size_t>(doc.require_int("frames"));
  const auto n = static_cast<std::size_t>(doc.require_int("frame_len"));
  const auto ppg = read_f32(dir / "ppg.f32");
  const auto prev = read_f32(dir / "prev.f32");
  const auto acc = read_f32(dir / "acc.f32");
  const auto prev_acc = read_f32(dir / "prev_acc.f32");
  if (ppg.size() != count * n || prev.size() != count * n || acc.size() != 3 * count * n ||
      prev_acc.size() != 3 * count * n)
    throw CorruptionError(dir.string() + ": payload sizes do not match manifest (" + std::to_string(count) + " x " +
                          std::to_string(n) + ")");
  AugmentedSet set;
  for (const auto& [k, v] : doc.with_prefix("info.")) set.info[k.substr(5)] = v;
  std::istringstream in(read_text(dir / "frames.csv"));
  std::string line;
  std::getline(in, line);  // header
  std::size_t i = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 9) throw FormatError((dir / "frames.csv").string() + ": row " + std::to_string(i + 1) + " needs 9 fields");
    if (i >= count) throw CorruptionError((dir / "frames.csv").string() + ": more rows than the manifest declares");
    const std::string ctx = (dir / "frames.csv").string();
    LabeledFrame lf;
    lf.frame.index = static_cast<std::size_t>(parse_int(f[0], ctx));
    lf.frame.t0 = parse_double(f[1], ctx);
    lf.frame.fs = parse_double(f[2], ctx);
    lf.hr_label = parse_double(f[3], ctx);
    lf.frame.hr = lf.hr_label;
    lf.provenance = provenance_from_string(f[4]);
    lf.frame.subject_id = f[5];
    lf.frame.activity = f[6];
    lf.frame.ppg.assign(ppg.begin() + static_cast<std::ptrdiff_t>(i * n), ppg.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    lf.frame.acc.assign(acc.begin() + static_cast<std::ptrdiff_t>(3 * i * n),
                        acc.begin() + static_cast<std::ptrdiff_t>(3 * (i + 1) * n));
    if (f[7] == "1") {
      SampleFrame p = lf.frame;
      p.t0 = parse_double(f[8], ctx);
      p.ppg.assign(prev.begin() + static_cast<std::ptrdiff_t>(i * n), prev.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
      p.acc.assign(prev_acc.begin() + static_cast<std::ptrdiff_t>(3 * i * n),
                   prev_acc.begin() + static_cast<std::ptrdiff_t>(3 * (i + 1) * n));
      lf.prev = std::move(p);
    }
    set.frames.push_back(std::move(lf));
    ++i;
  }
  if (i != count) throw CorruptionError((dir / "frames.csv").string() + ": row count does not match manifest");
  return set;
}

}  // namespace kidppg::augment
