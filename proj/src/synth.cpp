#include "kidppg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "kidppg/error.hpp"
#include "kidppg/ingest.hpp"
#include "kidppg/signal.hpp"

namespace kidppg::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Raised-cosine gate over [a, b) with `fade` seconds ramps.
double gate(double t, double a, double b, double fade) {
  if (t < a || t >= b) return 0.0;
  const double up = std::min(1.0, (t - a) / fade);
  const double down = std::min(1.0, (b - t) / fade);
  const double g = std::min(up, down);
  return g >= 1.0 ? 1.0 : 0.5 - 0.5 * std::cos(std::numbers::pi * g);
}

std::vector<double> band_noise(std::size_t n, double fs, double f_lo, double f_hi, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<signal::cplx> x(n);
  for (auto& v : x) v = nd(rng);
  x = signal::fft(std::move(x));
  for (std::size_t k = 0; k < n; ++k) {
    const double f = static_cast<double>(std::min(k, n - k)) * fs / static_cast<double>(n);
    if (f < f_lo || f > f_hi) x[k] = 0.0;
  }
  const auto y = signal::ifft_unnormalized(std::move(x));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = y[i].real();
  const double r = signal::rms(out);
  if (r > 0.0)
    for (double& v : out) v /= r;
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

}  // namespace

double trajectory_at(const std::vector<HrPoint>& nodes, double t) {
  if (nodes.empty()) throw std::invalid_argument("trajectory_at: empty trajectory");
  if (t <= nodes.front().t_s) return nodes.front().hr;
  if (t >= nodes.back().t_s) return nodes.back().hr;
  return *signal::hr_at(nodes, t);
}

void SynthSpec::validate() const {
  if (!(fs > 0.0)) throw ValidationError("fs", "must be > 0");
  if (!(duration_s > 0.0)) throw ValidationError("duration_s", "must be > 0");
  if (hr_nodes.empty()) throw ValidationError("hr", "trajectory needs at least one node");
  for (std::size_t i = 0; i < hr_nodes.size(); ++i) {
    if (!(hr_nodes[i].hr >= 40.0 && hr_nodes[i].hr < 300.0)) throw ValidationError("hr", "nodes must lie in [40, 300) BPM");
    if (i > 0 && !(hr_nodes[i].t_s > hr_nodes[i - 1].t_s)) throw ValidationError("hr", "node times must increase");
  }
  if (mix_k < 1) throw ValidationError("mix_k", "must be >= 1");
  if (mix_k % 2 == 0) throw ValidationError("mix_k", "must be odd (centred taps)");
  if (!planted_mix.empty() && planted_mix.size() != static_cast<std::size_t>(3 * mix_k))
    throw ValidationError("mix", "needs 3 * mix_k taps");
  if (!(noise_std >= 0.0)) throw ValidationError("noise_std", "must be >= 0");
  if (!(morph_drift >= 0.0 && morph_drift <= 1.0)) throw ValidationError("morph_drift", "must lie in [0, 1]");
  for (const auto& [a, b] : erasures)
    if (!(b > a)) throw ValidationError("erasure", "episodes need end > start");
}

KeyValueDoc SynthSpec::to_doc() const {
  KeyValueDoc d;
  d.set("subject_id", subject_id);
  d.set("duration_s", duration_s);
  d.set("fs", fs);
  std::string hr;
  for (std::size_t i = 0; i < hr_nodes.size(); ++i)
    hr += (i ? "," : "") + format_double(hr_nodes[i].t_s) + ":" + format_double(hr_nodes[i].hr);
  d.set("hr", hr);
  d.set("bvp_amp", join_doubles({bvp_amp[0], bvp_amp[1], bvp_amp[2]}));
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const auto& c = acc[i];
    d.set("acc." + std::to_string(i), format_double(c.start_s) + ":" + format_double(c.end_s) + ":" +
                                          format_double(c.freq_hz) + ":" + format_double(c.bandwidth_hz) + ":" +
                                          format_double(c.amp[0]) + ":" + format_double(c.amp[1]) + ":" +
                                          format_double(c.amp[2]));
  }
  d.set("mix_k", mix_k);
  if (!planted_mix.empty()) d.set("mix", join_doubles(planted_mix));
  d.set("noise_std", noise_std);
  d.set("morph_drift", morph_drift);
  std::string er;
  for (std::size_t i = 0; i < erasures.size(); ++i)
    er += (i ? "," : "") + format_double(erasures[i].first) + ":" + format_double(erasures[i].second);
  if (!er.empty()) d.set("erasure", er);
  std::string act;
  for (std::size_t i = 0; i < activities.size(); ++i)
    act += (i ? "," : "") + format_double(activities[i].start_s) + ":" + format_double(activities[i].end_s) + ":" +
           activities[i].label;
  if (!act.empty()) d.set("activity", act);
  return d;
}

SynthSpec SynthSpec::from_doc(const KeyValueDoc& d) {
  SynthSpec s;
  const std::string o = d.origin();
  s.subject_id = d.get_string("subject_id", s.subject_id);
  s.duration_s = d.get_double("duration_s", s.duration_s);
  s.fs = d.get_double("fs", s.fs);
  for (const auto& node : split(d.require("hr"), ',')) {
    const auto f = split(node, ':');
    if (f.size() != 2) throw FormatError(o + ": hr node '" + node + "' must be t:bpm");
    s.hr_nodes.push_back({parse_double(f[0], o + ": hr"), parse_double(f[1], o + ": hr")});
  }
  if (auto v = d.get("bvp_amp")) {
    const auto f = split(*v, ',');
    if (f.size() != 3) throw FormatError(o + ": bvp_amp needs 3 values");
    for (int i = 0; i < 3; ++i) s.bvp_amp[static_cast<std::size_t>(i)] = parse_double(f[static_cast<std::size_t>(i)], o + ": bvp_amp");
  }
  for (const auto& [k, v] : d.with_prefix("acc.")) {
    const auto f = split(v, ':');
    if (f.size() != 7) throw FormatError(o + ": " + k + " must be start:end:freq:bw:ax:ay:az");
    AccComponent c;
    c.start_s = parse_double(f[0], o + ": " + k);
    c.end_s = parse_double(f[1], o + ": " + k);
    c.freq_hz = parse_double(f[2], o + ": " + k);
    c.bandwidth_hz = parse_double(f[3], o + ": " + k);
    for (std::size_t a = 0; a < 3; ++a) c.amp[a] = parse_double(f[4 + a], o + ": " + k);
    s.acc.push_back(c);
  }
  s.mix_k = static_cast<int>(d.get_int("mix_k", 1));
  if (auto v = d.get("mix"))
    for (const auto& x : split(*v, ',')) s.planted_mix.push_back(parse_double(x, o + ": mix"));
  s.noise_std = d.get_double("noise_std", 0.0);
  s.morph_drift = d.get_double("morph_drift", 0.0);
  if (auto v = d.get("erasure"))
    for (const auto& ep : split(*v, ',')) {
      const auto f = split(ep, ':');
      if (f.size() != 2) throw FormatError(o + ": erasure episode '" + ep + "' must be start:end");
      s.erasures.emplace_back(parse_double(f[0], o + ": erasure"), parse_double(f[1], o + ": erasure"));
    }
  if (auto v = d.get("activity"))
    for (const auto& iv : split(*v, ',')) {
      const auto f = split(iv, ':');
      if (f.size() != 3) throw FormatError(o + ": activity '" + iv + "' must be start:end:label");
      s.activities.push_back({parse_double(f[0], o + ": activity"), parse_double(f[1], o + ": activity"), f[2]});
    }
  s.validate();
  return s;
}

SynthSession gen_session(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * spec.fs));
  const double dt = 1.0 / spec.fs;
  std::mt19937_64 rng_phase(splitmix(seed ^ 0x1111));
  std::mt19937_64 rng_acc(splitmix(seed ^ 0x2222));
  std::mt19937_64 rng_noise(splitmix(seed ^ 0x3333));
  std::uniform_real_distribution<double> uphase(0.0, kTwoPi);

  SynthSession out;
  out.spec = spec;
  auto& truth = out.truth;

  // BVP from the integrated instantaneous frequency.
  std::array<double, 3> phi{};
  for (auto& p : phi) p = uphase(rng_phase);
  std::array<double, 3> m_rate{}, m_off{};
  for (std::size_t h = 0; h < 3; ++h) {
    m_rate[h] = kTwoPi / std::uniform_real_distribution<double>(40.0, 90.0)(rng_phase);
    m_off[h] = uphase(rng_phase);
  }
  truth.hr.resize(n);
  truth.bvp.resize(n);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    truth.hr[i] = trajectory_at(spec.hr_nodes, t);
    if (i > 0) phase += kTwoPi * 0.5 * (truth.hr[i - 1] + truth.hr[i]) / kBpmPerHz * dt;
    bool erased = false;
    for (const auto& [a, b] : spec.erasures)
      if (t >= a && t < b) erased = true;
    double v = 0.0;
    if (!erased)
      for (std::size_t h = 0; h < 3; ++h) {
        double amp = spec.bvp_amp[h], ph = phi[h];
        if (h > 0 && spec.morph_drift > 0.0) {
          const double m = std::sin(m_rate[h] * t + m_off[h]);
          ph += spec.morph_drift * (kTwoPi / 4.0) * m;
          amp *= 1.0 + 0.4 * spec.morph_drift * std::sin(m_rate[0] * t + m_off[h]);
        }
        v += amp * std::sin(static_cast<double>(h + 1) * phase + ph);
      }
    truth.bvp[i] = v;
  }

  // Acceleration, rounded to the f32 the container stores.
  std::array<std::vector<double>, 3> acc;
  for (auto& a : acc) a.assign(n, 0.0);
  for (const auto& c : spec.acc) {
    std::array<double, 3> ph{};
    for (auto& p : ph) p = uphase(rng_acc);
    std::array<std::vector<double>, 3> noise;
    if (c.bandwidth_hz > 0.0)
      for (std::size_t a = 0; a < 3; ++a)
        noise[a] = band_noise(n, spec.fs, std::max(0.0, c.freq_hz - c.bandwidth_hz / 2), c.freq_hz + c.bandwidth_hz / 2, rng_acc);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) * dt;
      const double g = gate(t, c.start_s, c.end_s, 0.5);
      if (g == 0.0) continue;
      for (std::size_t a = 0; a < 3; ++a) {
        const double base = c.bandwidth_hz > 0.0 ? noise[a][i] * c.amp[a] / std::sqrt(2.0)
                                                 : c.amp[a] * std::sin(kTwoPi * c.freq_hz * t + ph[a]);
        acc[a][i] += g * base;
      }
    }
  }
  for (auto& a : acc)
    for (double& v : a) v = static_cast<double>(static_cast<float>(v));

  truth.artifact.assign(n, 0.0);
  if (!spec.planted_mix.empty()) {
    for (std::size_t c = 0; c < 3; ++c) {
      std::span<const double> k(spec.planted_mix.data() + c * static_cast<std::size_t>(spec.mix_k),
                                static_cast<std::size_t>(spec.mix_k));
      const auto part = signal::correlate_same(acc[c], k);
      for (std::size_t i = 0; i < n; ++i) truth.artifact[i] += part[i];
    }
  }

  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> ppg(n);
  truth.noise.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double noise = spec.noise_std > 0.0 ? spec.noise_std * nd(rng_noise) : 0.0;
    ppg[i] = static_cast<double>(static_cast<float>(truth.bvp[i] + truth.artifact[i] + noise));
    truth.noise[i] = ppg[i] - truth.bvp[i] - truth.artifact[i];
  }

  auto& s = out.session;
  s.subject_id = spec.subject_id;
  s.metadata["generator"] = "synth";
  s.metadata["seed"] = std::to_string(seed);
  s.channels["ppg"] = Channel{std::move(ppg), spec.fs, 0.0, "au"};
  s.channels["acc_x"] = Channel{std::move(acc[0]), spec.fs, 0.0, "g/64"};
  s.channels["acc_y"] = Channel{std::move(acc[1]), spec.fs, 0.0, "g/64"};
  s.channels["acc_z"] = Channel{std::move(acc[2]), spec.fs, 0.0, "g/64"};
  const auto last = static_cast<long long>(std::floor(spec.duration_s));
  for (long long t = 0; t <= last; ++t)
    s.hr_track.push_back({static_cast<double>(t), trajectory_at(spec.hr_nodes, static_cast<double>(t))});
  s.activity_track = spec.activities;
  return out;
}

SynthSpec benchmark_spec(int subject, std::uint64_t seed) {
  if (subject < 1 || subject > kSuiteSubjects) throw std::invalid_argument("benchmark_spec: subject out of range");
  std::mt19937_64 rng(splitmix(seed * 31 + static_cast<std::uint64_t>(subject)));
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };

  SynthSpec s;
  s.subject_id = "S" + std::to_string(subject);
  s.fs = 32.0;
  s.duration_s = 720.0;
  s.bvp_amp = {10.0, 4.0, 2.0};
  s.noise_std = 1.0;
  s.morph_drift = 1.0;
  s.mix_k = 9;

  // Planted filter: Hann-tapered random taps, normalised to unit RMS gain
  // at 1.5 Hz across the three axes.
  s.planted_mix.resize(27);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t j = 0; j < 9; ++j)
      s.planted_mix[c * 9 + j] = nd(rng) * (0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(j + 1) / 10.0));
  auto response = [&](std::size_t c, double f) {
    signal::cplx h{0.0, 0.0};
    for (std::size_t j = 0; j < 9; ++j)
      h += s.planted_mix[c * 9 + j] * std::polar(1.0, kTwoPi * f / s.fs * (static_cast<double>(j) - 4.0));
    return h;
  };
  double g2 = 0.0;
  for (std::size_t c = 0; c < 3; ++c) g2 += std::norm(response(c, 1.5));
  const double scale = 1.0 / std::sqrt(g2 / 3.0);
  for (double& w : s.planted_mix) w *= scale;

  const double h_a = uni(60, 90), h_b = uni(70, 110), h_c = uni(80, 130), h_d = uni(65, 120);
  // Each level drifts slowly (+-4 BPM, nodes 30 s apart) so labels are not
  // a handful of exact values; 4 s transitions between segments.
  s.hr_nodes.clear();
  const double levels[4] = {h_a, h_b, h_c, h_d};
  for (int seg = 0; seg < 4; ++seg) {
    const double a = seg * 120.0, b = a + 120.0;
    s.hr_nodes.push_back({seg == 0 ? 0.0 : a + 2.0, levels[seg]});
    for (double t = a + 30.0; t < b - 2.0; t += 30.0) s.hr_nodes.push_back({t, levels[seg] + uni(-4, 4)});
    s.hr_nodes.push_back({b - 2.0, levels[seg] + uni(-4, 4)});
  }
  s.hr_nodes.push_back({482, 60});
  s.hr_nodes.push_back({720, 180});
  s.activities = {{0, 120, kScenarios[0]},
                  {120, 240, kScenarios[1]},
                  {240, 360, kScenarios[2]},
                  {360, 480, kScenarios[3]},
                  {480, 720, kScenarios[4]}};
  s.erasures = {{380, 410}, {430, 460}};

  auto away_from = [&](double hr) {
    for (;;) {
      const double sign = uni(0, 1) < 0.5 ? -1.0 : 1.0;
      const double bpm = hr + sign * uni(35, 60);
      if (bpm >= 54 && bpm <= 180) return bpm / kBpmPerHz;
    }
  };

  // Motion tone per segment with axis amplitudes chosen so the artifact
  // tone reaches `target` through the planted filter (axes in phase is not
  // assumed; use the RMS gain which the random axis phases average to).
  auto motion = [&](double start, double end, double f, double target) {
    std::array<double, 3> u{uni(0.5, 1.0), uni(0.5, 1.0), uni(0.5, 1.0)};
    double gain2 = 0.0;
    for (std::size_t c = 0; c < 3; ++c) gain2 += std::norm(response(c, f)) * u[c] * u[c];
    const double k = std::min(target / std::sqrt(gain2), 15.0 / std::max({u[0], u[1], u[2]}));
    s.acc.push_back({start, end, f, 0.0, {k * u[0], k * u[1], k * u[2]}});
    s.acc.push_back({start, end, 2.0, 3.0, {1.5, 1.5, 1.5}});
  };
  // Of a few admissible motion frequencies, take the one the planted filter
  // passes best so the artifact target is reachable without huge ACC.
  auto strong_motion = [&](double hr) {
    double best = away_from(hr), best_gain = 0.0;
    for (int i = 0; i < 6; ++i) {
      const double f = i == 0 ? best : away_from(hr);
      double g = 0.0;
      for (std::size_t c = 0; c < 3; ++c) g += std::norm(response(c, f));
      if (g > best_gain) {
        best_gain = g;
        best = f;
      }
    }
    return best;
  };
  motion(120, 240, strong_motion(h_b), 30.0);
  motion(240, 360, (h_c + 9.0) / kBpmPerHz, 30.0);
  motion(360, 480, strong_motion(h_d), 25.0);
  motion(480, 720, uni(1.2, 2.0), 20.0);
  return s;
}

std::vector<SynthSession> gen_benchmark_suite(std::uint64_t seed) {
  std::vector<SynthSession> out;
  for (int subject = 1; subject <= kSuiteSubjects; ++subject) {
    auto s = gen_session(benchmark_spec(subject, seed), splitmix(seed + static_cast<std::uint64_t>(subject)));
    s.session.metadata["suite_seed"] = std::to_string(seed);
    out.push_back(std::move(s));
  }
  return out;
}

void write_synth(const SynthSession& s, const std::filesystem::path& dir) {
  ingest::write_session(s.session, dir);
  std::filesystem::create_directories(dir / "truth");
  write_f32(dir / "truth" / "bvp.f32", s.truth.bvp);
  write_f32(dir / "truth" / "artifact.f32", s.truth.artifact);
  s.spec.to_doc().save(dir / "truth" / "spec.txt");
}

}  // namespace kidppg::synth
