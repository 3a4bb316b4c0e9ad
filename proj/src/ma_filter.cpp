#include "kidppg/ma_filter.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "kidppg/error.hpp"
#include "kidppg/kv.hpp"

namespace kidppg::mafilter {

namespace {

using signal::cplx;

struct Forward {
  std::vector<double> hidden;  // 3 x N
  std::vector<double> out;     // N
};

Forward forward(const MixFilterModel& m, std::span<const double> acc) {
  const std::size_t n = acc.size() / 3;
  const auto k1 = static_cast<std::ptrdiff_t>(m.k1);
  const auto k2 = static_cast<std::ptrdiff_t>(m.k2);
  const std::ptrdiff_t p1 = (k1 - 1) / 2, p2 = (k2 - 1) / 2;
  const auto sn = static_cast<std::ptrdiff_t>(n);
  Forward f;
  f.hidden.assign(3 * n, 0.0);
  f.out.assign(n, 0.0);
  for (std::size_t o = 0; o < 3; ++o) {
    double* h = f.hidden.data() + o * n;
    for (std::size_t c = 0; c < 3; ++c) {
      const double* w = m.layer1.data() + (o * 3 + c) * m.k1;
      for (std::ptrdiff_t t = 0; t < sn; ++t) {
        const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, p1 - t);
        const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(k1, sn - t + p1);
        double acc_sum = 0.0;
        for (std::ptrdiff_t j = j0; j < j1; ++j) acc_sum += w[j] * acc[static_cast<std::size_t>(t + j - p1) * 3 + c];
        h[t] += acc_sum;
      }
    }
  }
  for (std::size_t o = 0; o < 3; ++o) {
    const double* h = f.hidden.data() + o * n;
    const double* w = m.layer2.data() + o * m.k2;
    for (std::ptrdiff_t t = 0; t < sn; ++t) {
      const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, p2 - t);
      const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(k2, sn - t + p2);
      double s = 0.0;
      for (std::ptrdiff_t j = j0; j < j1; ++j) s += w[j] * h[t + j - p2];
      f.out[t] += s;
    }
  }
  return f;
}

void check_shapes(const MixFilterModel& m, std::span<const double> acc) {
  m.check();
  if (acc.size() % 3 != 0) throw std::invalid_argument("mix filter: acc must be N x 3");
  if (acc.size() / 3 < static_cast<std::size_t>(m.k1 + m.k2))
    throw std::invalid_argument("mix filter: need N >= k1 + k2 samples");
}

// Half-spectrum difference D[k] = DFT(pred)[k] - DFT(ppg)[k], k = 0..n/2.
std::vector<cplx> spectral_difference(std::span<const double> pred, std::span<const double> ppg) {
  const std::size_t n = pred.size();
  std::vector<cplx> d(n);
  for (std::size_t t = 0; t < n; ++t) d[t] = pred[t] - ppg[t];
  d = signal::fft(std::move(d));
  d.resize(n / 2 + 1);
  return d;
}

double loss_from_difference(const std::vector<cplx>& d, LossMode mode) {
  double s = 0.0;
  for (const auto& v : d) s += mode == LossMode::MseFreq ? std::norm(v) : std::abs(v);
  return s / static_cast<double>(d.size());
}

}  // namespace

std::string to_string(LossMode m) { return m == LossMode::MseFreq ? "mse_freq" : "mae_freq"; }

LossMode loss_mode_from_string(const std::string& s) {
  if (s == "mse_freq" || s == "mse") return LossMode::MseFreq;
  if (s == "mae_freq" || s == "mae") return LossMode::MaeFreq;
  throw std::invalid_argument("unknown loss mode '" + s + "'");
}

MixFilterModel MixFilterModel::init(int k1, int k2, std::uint64_t seed, LossMode loss, double init_std) {
  MixFilterModel m;
  m.k1 = k1;
  m.k2 = k2;
  m.seed = seed;
  m.loss = loss;
  if (k1 < 1 || k2 < 1 || k1 % 2 == 0 || k2 % 2 == 0)
    throw std::invalid_argument("mix filter: kernel lengths must be odd and positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, init_std);
  m.layer1.resize(static_cast<std::size_t>(9 * k1));
  for (double& w : m.layer1) w = nd(rng);
  m.layer2.assign(static_cast<std::size_t>(3 * k2), 0.0);
  for (int c = 0; c < 3; ++c) m.layer2[static_cast<std::size_t>(c * k2 + (k2 - 1) / 2)] = 1.0;
  return m;
}

void MixFilterModel::check() const {
  if (k1 < 1 || k2 < 1 || k1 % 2 == 0 || k2 % 2 == 0)
    throw std::invalid_argument("mix filter: kernel lengths must be odd and positive");
  if (layer1.size() != static_cast<std::size_t>(9 * k1) || layer2.size() != static_cast<std::size_t>(3 * k2))
    throw std::invalid_argument("mix filter: weight sizes do not match kernel lengths");
}

std::vector<double> predict_artifact(const MixFilterModel& m, std::span<const double> acc) {
  check_shapes(m, acc);
  return forward(m, acc).out;
}

double adapt_loss(const MixFilterModel& m, std::span<const double> acc, std::span<const double> ppg, LossMode mode) {
  check_shapes(m, acc);
  if (ppg.size() * 3 != acc.size()) throw std::invalid_argument("adapt_loss: acc and ppg lengths differ");
  const auto pred = forward(m, acc).out;
  return loss_from_difference(spectral_difference(pred, ppg), mode);
}

LossGrad adapt_loss_grad(const MixFilterModel& m, std::span<const double> acc, std::span<const double> ppg,
                         LossMode mode) {
  check_shapes(m, acc);
  if (ppg.size() * 3 != acc.size()) throw std::invalid_argument("adapt_loss: acc and ppg lengths differ");
  const std::size_t n = ppg.size();
  const auto fw = forward(m, acc);
  const auto d = spectral_difference(fw.out, ppg);
  LossGrad r;
  r.loss = loss_from_difference(d, mode);

  // dL/dpred[t] = (c / K) * Re(sum_k w_k e^{+2 pi i k t / n}) over the half
  // spectrum, with w_k = D_k (c = 2) for MSE and D_k / |D_k| (c = 1) for MAE.
  const double kb = static_cast<double>(d.size());
  std::vector<cplx> full(n, cplx{0.0, 0.0});
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (mode == LossMode::MseFreq) {
      full[k] = 2.0 * d[k];
    } else {
      const double mag = std::abs(d[k]);
      full[k] = mag > 0.0 ? d[k] / mag : cplx{0.0, 0.0};
    }
  }
  const auto back = signal::ifft_unnormalized(std::move(full));
  std::vector<double> g(n);
  for (std::size_t t = 0; t < n; ++t) g[t] = back[t].real() / kb;

  const auto sn = static_cast<std::ptrdiff_t>(n);
  const auto k1 = static_cast<std::ptrdiff_t>(m.k1);
  const auto k2 = static_cast<std::ptrdiff_t>(m.k2);
  const std::ptrdiff_t p1 = (k1 - 1) / 2, p2 = (k2 - 1) / 2;
  r.g_layer1.assign(m.layer1.size(), 0.0);
  r.g_layer2.assign(m.layer2.size(), 0.0);
  std::vector<double> gh(3 * n, 0.0);
  for (std::size_t o = 0; o < 3; ++o) {
    const double* h = fw.hidden.data() + o * n;
    const double* w = m.layer2.data() + o * m.k2;
    for (std::ptrdiff_t j = 0; j < k2; ++j) {
      double s = 0.0;
      for (std::ptrdiff_t t = 0; t < sn; ++t) {
        const std::ptrdiff_t src = t + j - p2;
        if (src < 0 || src >= sn) continue;
        s += g[t] * h[src];
        gh[o * n + static_cast<std::size_t>(src)] += w[j] * g[t];
      }
      r.g_layer2[o * m.k2 + static_cast<std::size_t>(j)] = s;
    }
  }
  for (std::size_t o = 0; o < 3; ++o) {
    for (std::size_t c = 0; c < 3; ++c) {
      double* gw = r.g_layer1.data() + (o * 3 + c) * m.k1;
      for (std::ptrdiff_t j = 0; j < k1; ++j) {
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, p1 - j);
        const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(sn, sn + p1 - j);
        double s = 0.0;
        for (std::ptrdiff_t t = t0; t < t1; ++t) s += gh[o * n + t] * acc[static_cast<std::size_t>(t + j - p1) * 3 + c];
        gw[j] = s;
      }
    }
  }
  return r;
}

TrainResult train_mix_filter(const std::vector<Segment>& segments, const AdaptHyperParams& hp,
                             std::uint64_t init_seed, int k1, int k2) {
  if (segments.empty()) throw std::invalid_argument("train_mix_filter: no segments");
  if (!(hp.lr > 0.0)) throw std::invalid_argument("train_mix_filter: lr must be > 0");
  if (!(hp.momentum >= 0.0 && hp.momentum < 1.0)) throw std::invalid_argument("train_mix_filter: momentum must be in [0, 1)");
  for (const auto& s : segments)
    if (s.acc.size() != 3 * s.ppg.size()) throw std::invalid_argument("train_mix_filter: segment acc/ppg length mismatch");

  TrainResult r;
  r.model = MixFilterModel::init(k1, k2, init_seed, hp.loss);
  auto& m = r.model;
  std::vector<double> buf1(m.layer1.size(), 0.0), buf2(m.layer2.size(), 0.0);

  auto epoch_loss = [&] {
    double s = 0.0;
    for (const auto& seg : segments) s += adapt_loss(m, seg.acc, seg.ppg, hp.loss);
    return s / static_cast<double>(segments.size());
  };
  r.loss_trace.push_back(epoch_loss());
  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    // Epoch loss is the mean of the per-step losses (each measured before
    // its own update).
    double loss = 0.0;
    for (const auto& seg : segments) {
      const auto lg = adapt_loss_grad(m, seg.acc, seg.ppg, hp.loss);
      if (!std::isfinite(lg.loss))
        throw DivergenceError("mix filter training diverged at epoch " + std::to_string(epoch) +
                              " (lr=" + format_double(hp.lr) + ")");
      loss += lg.loss;
      for (std::size_t i = 0; i < m.layer1.size(); ++i) {
        buf1[i] = hp.momentum * buf1[i] + lg.g_layer1[i];
        m.layer1[i] -= hp.lr * buf1[i];
      }
      for (std::size_t i = 0; i < m.layer2.size(); ++i) {
        buf2[i] = hp.momentum * buf2[i] + lg.g_layer2[i];
        m.layer2[i] -= hp.lr * buf2[i];
      }
    }
    loss /= static_cast<double>(segments.size());
    if (!std::isfinite(loss))
      throw DivergenceError("mix filter training diverged at epoch " + std::to_string(epoch) +
                            " (lr=" + format_double(hp.lr) + ")");
    const double prev = r.loss_trace.back();
    r.loss_trace.push_back(loss);
    // epoch 1's pre-update losses can equal the initial entry (one segment),
    // so only compare two training epochs
    if (epoch > 1 && prev > 0.0 && std::abs(prev - loss) / prev < hp.early_stop_rel) break;
  }
  return r;
}

SampleFrame remove_artifacts(const MixFilterModel& m, const SampleFrame& frame) {
  SampleFrame out = frame;
  const auto art = predict_artifact(m, frame.acc);
  for (std::size_t t = 0; t < out.ppg.size(); ++t) out.ppg[t] = frame.ppg[t] - art[t];
  return out;
}

std::vector<Segment> activity_segments(const signal::AlignedSignals& a, const SessionRecording& s,
                                       const std::string& activity, const signal::WindowOptions& opts) {
  std::vector<Segment> out;
  const auto n_win = static_cast<std::size_t>(std::llround(opts.win_s * a.fs));
  for (const auto& iv : s.activity_track) {
    if (iv.label != activity) continue;
    const double lo = std::max(iv.start_s, a.t0);
    for (double t = lo; t + opts.win_s <= iv.end_s + 1e-9; t += opts.stride_s) {
      const auto start = std::llround((t - a.t0) * a.fs);
      if (start < 0 || static_cast<std::size_t>(start) + n_win > a.size()) continue;
      const auto st = static_cast<std::size_t>(start);
      Segment seg;
      seg.ppg.assign(a.ppg.begin() + static_cast<std::ptrdiff_t>(st), a.ppg.begin() + static_cast<std::ptrdiff_t>(st + n_win));
      seg.acc.assign(a.acc.begin() + static_cast<std::ptrdiff_t>(st * 3),
                     a.acc.begin() + static_cast<std::ptrdiff_t>((st + n_win) * 3));
      out.push_back(std::move(seg));
    }
  }
  return out;
}

FilterBank train_filter_bank(const signal::AlignedSignals& a, const SessionRecording& s, const AdaptHyperParams& hp,
                             std::uint64_t seed, int k1, int k2, std::map<std::string, std::vector<double>>* traces) {
  FilterBank bank;
  std::vector<std::string> labels;
  for (const auto& iv : s.activity_track)
    if (std::find(labels.begin(), labels.end(), iv.label) == labels.end()) labels.push_back(iv.label);
  std::uint64_t k = 0;
  for (const auto& label : labels) {
    auto segs = activity_segments(a, s, label);
    ++k;
    if (segs.empty()) continue;
    auto r = train_mix_filter(segs, hp, seed + k, k1, k2);
    if (traces) (*traces)[label] = r.loss_trace;
    bank.filters.emplace(label, std::move(r.model));
  }
  return bank;
}

signal::AlignedSignals clean_session(const FilterBank& bank, const signal::AlignedSignals& a, const SessionRecording& s) {
  signal::AlignedSignals out = a;
  if (bank.filters.empty()) return out;
  const std::size_t n = a.size();

  // Per-sample filter label.
  std::vector<std::string> label(n);
  std::string fallback;
  if (bank.filters.contains("")) {
    fallback = "";
  } else {
    for (const auto& iv : s.activity_track)
      if (bank.filters.contains(iv.label)) {
        fallback = iv.label;
        break;
      }
    if (fallback.empty()) fallback = bank.filters.begin()->first;
  }
  std::string current = fallback;
  std::size_t iv_idx = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double time = a.t0 + static_cast<double>(t) / a.fs;
    while (iv_idx < s.activity_track.size() && s.activity_track[iv_idx].end_s <= time) {
      if (bank.filters.contains(s.activity_track[iv_idx].label)) current = s.activity_track[iv_idx].label;
      ++iv_idx;
    }
    if (!bank.filters.contains("") && iv_idx < s.activity_track.size() && time >= s.activity_track[iv_idx].start_s &&
        bank.filters.contains(s.activity_track[iv_idx].label))
      current = s.activity_track[iv_idx].label;
    label[t] = bank.filters.contains("") ? "" : current;
  }
  for (const auto& [name, model] : bank.filters) {
    if (std::find(label.begin(), label.end(), name) == label.end()) continue;
    const auto art = predict_artifact(model, a.acc);
    for (std::size_t t = 0; t < n; ++t)
      if (label[t] == name) out.ppg[t] = a.ppg[t] - art[t];
  }
  return out;
}

void save_model(const MixFilterModel& m, const std::filesystem::path& dir) {
  m.check();
  std::filesystem::create_directories(dir);
  KeyValueDoc doc;
  doc.set("format_version", 1);
  doc.set("kind", std::string("mix_filter"));
  doc.set("k1", m.k1);
  doc.set("k2", m.k2);
  doc.set("seed", static_cast<long long>(m.seed));
  doc.set("loss_mode", to_string(m.loss));
  doc.set("layer1", std::string("shape:3x3x") + std::to_string(m.k1) + ",dtype:f32le");
  doc.set("layer2", std::string("shape:1x3x") + std::to_string(m.k2) + ",dtype:f32le");
  doc.save(dir / "manifest.txt");
  write_f32(dir / "layer1.f32", m.layer1);
  write_f32(dir / "layer2.f32", m.layer2);
}

MixFilterModel load_model(const std::filesystem::path& dir) {
  const auto doc = KeyValueDoc::load(dir / "manifest.txt");
  if (doc.get_string("kind", "") != "mix_filter") throw FormatError(doc.origin() + ": not a mix_filter model");
  MixFilterModel m;
  m.k1 = static_cast<int>(doc.require_int("k1"));
  m.k2 = static_cast<int>(doc.require_int("k2"));
  m.seed = static_cast<std::uint64_t>(doc.require_int("seed"));
  m.loss = loss_mode_from_string(doc.require("loss_mode"));
  m.layer1 = read_f32(dir / "layer1.f32");
  m.layer2 = read_f32(dir / "layer2.f32");
  if (m.layer1.size() != static_cast<std::size_t>(9 * m.k1) || m.layer2.size() != static_cast<std::size_t>(3 * m.k2))
    throw CorruptionError(dir.string() + ": weight payload sizes do not match k1/k2");
  return m;
}

void save_bank(const FilterBank& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  KeyValueDoc doc;
  doc.set("format_version", 1);
  doc.set("kind", std::string("mix_filter_bank"));
  std::size_t i = 0;
  for (const auto& [label, model] : b.filters) {
    const std::string sub = "filter_" + std::to_string(i++);
    doc.set("activity." + label, sub);
    save_model(model, dir / sub);
  }
  doc.save(dir / "manifest.txt");
}

FilterBank load_bank(const std::filesystem::path& dir) {
  const auto doc = KeyValueDoc::load(dir / "manifest.txt");
  if (doc.get_string("kind", "") != "mix_filter_bank") throw FormatError(doc.origin() + ": not a mix_filter_bank");
  FilterBank b;
  for (const auto& [key, sub] : doc.with_prefix("activity.")) b.filters.emplace(key.substr(9), load_model(dir / sub));
  return b;
}

FilterBank load_bank_or_model(const std::filesystem::path& dir) {
  const auto doc = KeyValueDoc::load(dir / "manifest.txt");
  const auto kind = doc.get_string("kind", "");
  if (kind == "mix_filter_bank") return load_bank(dir);
  if (kind == "mix_filter") {
    FilterBank b;
    b.filters.emplace("", load_model(dir));
    return b;
  }
  throw FormatError(doc.origin() + ": unknown model kind '" + kind + "'");
}

}  // namespace kidppg::mafilter
