#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "kidppg/error.hpp"
#include "kidppg/nn.hpp"

namespace kidppg::nn {

void NetConfig::validate() const {
  auto bad = [](const std::string& f, const std::string& w) { throw ValidationError("net." + f, w); };
  if (in_channels != 1 && in_channels != 4) bad("in_channels", "must be 1 or 4");
  if (conv_channels.empty()) bad("conv_channels", "need at least one conv layer");
  if (kernel == 0 || kernel % 2 == 0) bad("kernel", "must be odd");
  if (stride == 0) bad("stride", "must be positive");
  std::size_t n = frame_len;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    if (conv_channels[i] == 0) bad("conv_channels", "zero width");
    if (n + 2 * (kernel / 2) < kernel) bad("frame_len", "too short for the conv stack");
    n = (n + 2 * (kernel / 2) - kernel) / stride + 1;
  }
  if (pool_to == 0 || n % pool_to != 0)
    bad("pool_to", "conv output length " + std::to_string(n) + " is not a multiple of " + std::to_string(pool_to));
  if (heads == 0 || embed_dim() % heads != 0) bad("heads", "embedding dim not divisible by heads");
  if (hidden == 0) bad("hidden", "must be positive");
  if (!(mu_scale > 0) || !(sigma_scale > 0) || !std::isfinite(mu_offset)) bad("scale", "output scaling must be positive");
}

KeyValueDoc NetConfig::to_doc() const {
  KeyValueDoc d;
  d.set("net.in_channels", in_channels);
  d.set("net.frame_len", frame_len);
  std::string ch;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) ch += (i ? "," : "") + std::to_string(conv_channels[i]);
  d.set("net.conv_channels", ch);
  d.set("net.kernel", kernel);
  d.set("net.stride", stride);
  d.set("net.pool_to", pool_to);
  d.set("net.heads", heads);
  d.set("net.projections", projections);
  d.set("net.temporal", temporal);
  d.set("net.hidden", hidden);
  d.set("net.probabilistic", probabilistic);
  d.set("net.mu_offset", mu_offset);
  d.set("net.mu_scale", mu_scale);
  d.set("net.sigma_scale", sigma_scale);
  return d;
}

NetConfig NetConfig::from_doc(const KeyValueDoc& d) {
  NetConfig c;
  c.in_channels = static_cast<std::size_t>(d.get_int("net.in_channels", 1));
  c.frame_len = static_cast<std::size_t>(d.get_int("net.frame_len", 256));
  if (auto ch = d.get("net.conv_channels")) {
    c.conv_channels.clear();
    for (const auto& s : split(*ch, ',')) c.conv_channels.push_back(static_cast<std::size_t>(parse_int(s, "net.conv_channels")));
  }
  c.kernel = static_cast<std::size_t>(d.get_int("net.kernel", 7));
  c.stride = static_cast<std::size_t>(d.get_int("net.stride", 2));
  c.pool_to = static_cast<std::size_t>(d.get_int("net.pool_to", 16));
  c.heads = static_cast<std::size_t>(d.get_int("net.heads", 4));
  c.projections = d.get_bool("net.projections", true);
  c.temporal = d.get_bool("net.temporal", true);
  c.hidden = static_cast<std::size_t>(d.get_int("net.hidden", 64));
  c.probabilistic = d.get_bool("net.probabilistic", true);
  c.mu_offset = d.get_double("net.mu_offset", 0.0);
  c.mu_scale = d.get_double("net.mu_scale", 1.0);
  c.sigma_scale = d.get_double("net.sigma_scale", 1.0);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

HrNetwork::HrNetwork(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
  cfg_.validate();
  layout();
  std::mt19937_64 rng(seed);
  auto fill = [&](const std::string& name, double std) {
    std::normal_distribution<double> nd(0.0, std);
    for (double& w : view(name)) w = nd(rng);
  };
  std::size_t cin = cfg_.in_channels;
  for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
    fill("conv" + std::to_string(i) + ".w", std::sqrt(2.0 / static_cast<double>(cin * cfg_.kernel)));
    cin = cfg_.conv_channels[i];
  }
  const double d = static_cast<double>(cfg_.embed_dim());
  if (cfg_.projections)
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) fill(w, 1.0 / std::sqrt(d));
  fill("dense1.w", std::sqrt(2.0 / (d * static_cast<double>(cfg_.pool_to))));
  fill("dense2.w", 0.01);
}

void HrNetwork::layout() {
  groups_.clear();
  std::size_t off = 0;
  auto add = [&](std::string name, std::size_t n) {
    groups_.push_back({std::move(name), off, n});
    off += n;
  };
  std::size_t cin = cfg_.in_channels;
  for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
    const std::size_t cout = cfg_.conv_channels[i];
    add("conv" + std::to_string(i) + ".w", cout * cin * cfg_.kernel);
    add("conv" + std::to_string(i) + ".b", cout);
    cin = cout;
  }
  const std::size_t d = cfg_.embed_dim();
  if (cfg_.projections)
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) add(w, d * d);
  add("dense1.w", cfg_.hidden * cfg_.pool_to * d);
  add("dense1.b", cfg_.hidden);
  add("dense2.w", cfg_.outputs() * cfg_.hidden);
  add("dense2.b", cfg_.outputs());
  params_.assign(off, 0.0);
}

const ParamGroup& HrNetwork::group(const std::string& name) const {
  for (const auto& g : groups_)
    if (g.name == name) return g;
  throw std::invalid_argument("no parameter group '" + name + "'");
}

std::span<double> HrNetwork::view(const std::string& name) {
  const auto& g = group(name);
  return {params_.data() + g.offset, g.size};
}

std::span<const double> HrNetwork::view(const std::string& name) const {
  const auto& g = group(name);
  return {params_.data() + g.offset, g.size};
}

ConvParams HrNetwork::conv_layer(std::size_t i) const {
  ConvParams p;
  p.in = i == 0 ? cfg_.in_channels : cfg_.conv_channels[i - 1];
  p.out = cfg_.conv_channels.at(i);
  p.k = cfg_.kernel;
  p.stride = cfg_.stride;
  p.pad = cfg_.kernel / 2;
  p.act = Activation::Relu;
  auto w = view("conv" + std::to_string(i) + ".w");
  auto b = view("conv" + std::to_string(i) + ".b");
  p.w.assign(w.begin(), w.end());
  p.b.assign(b.begin(), b.end());
  return p;
}

AttentionParams HrNetwork::attention() const {
  AttentionParams p;
  p.heads = cfg_.heads;
  p.projections = cfg_.projections;
  if (p.projections) {
    auto cp = [&](const char* n) {
      auto v = view(n);
      return std::vector<double>(v.begin(), v.end());
    };
    p.wq = cp("attn.wq");
    p.wk = cp("attn.wk");
    p.wv = cp("attn.wv");
    p.wo = cp("attn.wo");
  }
  return p;
}

HrEstimate HrNetwork::head(std::span<const double> raw, double frame_time) const {
  HrEstimate e;
  e.frame_time = frame_time;
  e.mu_hr = cfg_.mu_offset + cfg_.mu_scale * raw[0];
  if (cfg_.probabilistic) {
    e.sigma_hr = cfg_.sigma_scale * softplus(raw[1]) + kSigmaFloor;
  } else {
    e.probabilistic = false;
    e.sigma_hr = kSigmaFloor;
  }
  return e;
}

namespace {

struct Branch {
  std::vector<Tensor> acts;  // acts[0] = input, acts[i+1] = output of conv i
  Tensor e;                  // T x d
};

struct Forward {
  Branch cur, prev;
  bool self = true;
  AttentionCache attn;
  Tensor out;                  // T x d
  std::vector<double> hidden;  // post-ReLU
  std::vector<double> raw;
};

}  // namespace

// Layers are materialized once per call; the copies are small next to the
// convolution work.
struct NetOps {
  std::vector<ConvParams> conv;
  AttentionParams attn;
};

static NetOps ops_of(const HrNetwork& net) {
  NetOps o;
  for (std::size_t i = 0; i < net.config().conv_channels.size(); ++i) o.conv.push_back(net.conv_layer(i));
  o.attn = net.attention();
  return o;
}

static Branch run_branch(const NetConfig& cfg, const NetOps& ops, std::span<const double> x) {
  if (x.size() != cfg.in_channels * cfg.frame_len)
    throw std::invalid_argument("network input must be in_channels x frame_len = " +
                                std::to_string(cfg.in_channels * cfg.frame_len) + " values, got " +
                                std::to_string(x.size()));
  Branch b;
  b.acts.emplace_back(std::vector<std::size_t>{cfg.in_channels, cfg.frame_len}, std::vector<double>(x.begin(), x.end()));
  for (const auto& layer : ops.conv) b.acts.push_back(conv1d_forward(b.acts.back(), layer));
  const Tensor& h = b.acts.back();
  const std::size_t d = h.shape[0], len = h.shape[1], t = cfg.pool_to, pool = len / t;
  b.e = Tensor({t, d});
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t i = 0; i < t; ++i) {
      double s = 0.0;
      for (std::size_t q = 0; q < pool; ++q) s += h.data[c * len + i * pool + q];
      b.e.data[i * d + c] = s / static_cast<double>(pool);
    }
  return b;
}

static void branch_backward(const NetConfig& cfg, const NetOps& ops, const Branch& b, const Tensor& de,
                            const HrNetwork& net, std::vector<double>& grad) {
  const Tensor& h = b.acts.back();
  const std::size_t d = h.shape[0], len = h.shape[1], t = cfg.pool_to, pool = len / t;
  Tensor dh({d, len});
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t i = 0; i < t; ++i) {
      const double g = de.data[i * d + c] / static_cast<double>(pool);
      for (std::size_t q = 0; q < pool; ++q) dh.data[c * len + i * pool + q] = g;
    }
  for (std::size_t l = ops.conv.size(); l-- > 0;) {
    auto g = conv1d_backward(b.acts[l], b.acts[l + 1], ops.conv[l], dh);
    const auto& gw = net.group("conv" + std::to_string(l) + ".w");
    const auto& gb = net.group("conv" + std::to_string(l) + ".b");
    for (std::size_t i = 0; i < gw.size; ++i) grad[gw.offset + i] += g.dw[i];
    for (std::size_t i = 0; i < gb.size; ++i) grad[gb.offset + i] += g.db[i];
    if (l > 0) dh = std::move(g.dx);
  }
}

static Forward run_forward(const HrNetwork& net, const NetOps& ops, std::span<const double> cur,
                           const std::vector<double>* prev) {
  const auto& cfg = net.config();
  Forward f;
  f.cur = run_branch(cfg, ops, cur);
  f.self = !cfg.temporal || prev == nullptr || prev->empty();
  if (!f.self) f.prev = run_branch(cfg, ops, *prev);
  const Tensor& ep = f.self ? f.cur.e : f.prev.e;
  f.out = temporal_attention(f.cur.e, ep, ops.attn, &f.attn);

  const std::size_t in = f.out.size(), hid = cfg.hidden, no = cfg.outputs();
  auto w1 = net.view("dense1.w");
  auto b1 = net.view("dense1.b");
  f.hidden.assign(hid, 0.0);
  for (std::size_t j = 0; j < hid; ++j) {
    double s = b1[j];
    const double* row = w1.data() + j * in;
    for (std::size_t i = 0; i < in; ++i) s += row[i] * f.out.data[i];
    f.hidden[j] = std::max(s, 0.0);
  }
  auto w2 = net.view("dense2.w");
  auto b2 = net.view("dense2.b");
  f.raw.assign(no, 0.0);
  for (std::size_t k = 0; k < no; ++k) {
    double s = b2[k];
    for (std::size_t j = 0; j < hid; ++j) s += w2[k * hid + j] * f.hidden[j];
    f.raw[k] = s;
  }
  return f;
}

std::vector<double> HrNetwork::forward_raw(std::span<const double> cur, const std::vector<double>* prev) const {
  return run_forward(*this, ops_of(*this), cur, prev).raw;
}

HrEstimate HrNetwork::forward(std::span<const double> cur, const std::vector<double>* prev, double frame_time) const {
  return head(forward_raw(cur, prev), frame_time);
}

Tensor HrNetwork::embed(std::span<const double> x) const { return run_branch(cfg_, ops_of(*this), x).e; }

double HrNetwork::loss_and_grad(std::span<const double> cur, const std::vector<double>* prev, Bpm y,
                                std::vector<double>* grad) const {
  const NetOps ops = ops_of(*this);
  const Forward f = run_forward(*this, ops, cur, prev);
  const HrEstimate est = head(f.raw);

  double loss = 0.0;
  std::vector<double> draw(cfg_.outputs(), 0.0);
  if (cfg_.probabilistic) {
    loss = gaussian_nll(est, y);
    const double s = est.sigma_hr, r = y - est.mu_hr;
    draw[0] = (-r / (s * s)) * cfg_.mu_scale;
    draw[1] = (1.0 / s - r * r / (s * s * s)) * cfg_.sigma_scale * sigmoid(f.raw[1]);
  } else {
    const double r = est.mu_hr - y;
    loss = std::abs(r);
    draw[0] = (r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0)) * cfg_.mu_scale;
  }
  if (!std::isfinite(loss)) throw DivergenceError("network loss is not finite");
  if (!grad) return loss;
  if (grad->size() != params_.size()) grad->assign(params_.size(), 0.0);
  auto& g = *grad;

  const std::size_t in = f.out.size(), hid = cfg_.hidden, no = cfg_.outputs();
  const auto& gw2 = group("dense2.w");
  const auto& gb2 = group("dense2.b");
  auto w2 = view("dense2.w");
  std::vector<double> dh(hid, 0.0);
  for (std::size_t k = 0; k < no; ++k) {
    g[gb2.offset + k] += draw[k];
    for (std::size_t j = 0; j < hid; ++j) {
      g[gw2.offset + k * hid + j] += draw[k] * f.hidden[j];
      dh[j] += draw[k] * w2[k * hid + j];
    }
  }
  const auto& gw1 = group("dense1.w");
  const auto& gb1 = group("dense1.b");
  auto w1 = view("dense1.w");
  Tensor dout(f.out.shape);
  for (std::size_t j = 0; j < hid; ++j) {
    if (f.hidden[j] <= 0.0) continue;
    const double dj = dh[j];
    g[gb1.offset + j] += dj;
    double* gr = g.data() + gw1.offset + j * in;
    const double* row = w1.data() + j * in;
    for (std::size_t i = 0; i < in; ++i) {
      gr[i] += dj * f.out.data[i];
      dout.data[i] += dj * row[i];
    }
  }

  const Tensor& ep = f.self ? f.cur.e : f.prev.e;
  auto ga = temporal_attention_backward(f.cur.e, ep, ops.attn, f.attn, dout);
  if (cfg_.projections) {
    const std::pair<const char*, const std::vector<double>*> parts[] = {
        {"attn.wq", &ga.dwq}, {"attn.wk", &ga.dwk}, {"attn.wv", &ga.dwv}, {"attn.wo", &ga.dwo}};
    for (const auto& [name, src] : parts) {
      const auto& gr = group(name);
      for (std::size_t i = 0; i < gr.size; ++i) g[gr.offset + i] += (*src)[i];
    }
  }
  if (f.self) {
    for (std::size_t i = 0; i < ga.de.size(); ++i) ga.de.data[i] += ga.de_prev.data[i];
    branch_backward(cfg_, ops, f.cur, ga.de, *this, g);
  } else {
    branch_backward(cfg_, ops, f.cur, ga.de, *this, g);
    branch_backward(cfg_, ops, f.prev, ga.de_prev, *this, g);
  }
  return loss;
}

std::vector<double> frame_input(const SampleFrame& f, std::size_t in_channels) {
  const std::size_t n = f.size();
  std::vector<double> x(f.ppg);
  if (in_channels == 4) {
    if (f.acc.size() != 3 * n) throw std::invalid_argument("frame_input: acc must be N x 3");
    x.resize(4 * n);
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t t = 0; t < n; ++t) x[(a + 1) * n + t] = f.acc_at(t, a);
  } else if (in_channels != 1) {
    throw std::invalid_argument("frame_input: in_channels must be 1 or 4");
  }
  return x;
}

HrEstimate forward_kidppg(const HrNetwork& net, const SampleFrame& frame_prev, const SampleFrame& frame_cur) {
  if (frame_prev.size() != frame_cur.size()) throw std::invalid_argument("forward_kidppg: frame lengths differ");
  const auto cur = frame_input(frame_cur, net.config().in_channels);
  const double t = frame_cur.t_end();
  if (&frame_prev == &frame_cur || !net.config().temporal) return net.forward(cur, nullptr, t);
  const auto prev = frame_input(frame_prev, net.config().in_channels);
  return net.forward(cur, &prev, t);
}

}  // namespace kidppg::nn
