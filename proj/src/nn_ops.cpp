#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "kidppg/error.hpp"
#include "kidppg/nn.hpp"

namespace kidppg::nn {

namespace {

std::size_t product(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

// C = A(m x k) * B(k x n), optionally with A or B transposed as stored.
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
            bool ta = false, bool tb = false) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      if (!tb) {
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * b[j * k + p];
      }
    }
}

void add_to(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_, double fill) : shape(std::move(shape_)), data(product(shape), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (product(shape) != data.size()) throw std::invalid_argument("tensor: shape does not match data length");
}

void Tensor::check() const {
  if (product(shape) != data.size()) throw std::invalid_argument("tensor: shape does not match data length");
  for (double v : data)
    if (!std::isfinite(v)) throw std::invalid_argument("tensor: non-finite value");
}

std::size_t ConvParams::out_len(std::size_t n) const {
  if (stride == 0 || n + 2 * pad < k) throw std::invalid_argument("conv1d: input shorter than kernel");
  return (n + 2 * pad - k) / stride + 1;
}

static void check_conv(const Tensor& x, const ConvParams& p) {
  if (x.shape.size() != 2 || x.shape[0] != p.in) throw std::invalid_argument("conv1d: input must be in_channels x N");
  if (p.w.size() != p.out * p.in * p.k || p.b.size() != p.out)
    throw std::invalid_argument("conv1d: weight/bias shape mismatch");
}

Tensor conv1d_forward(const Tensor& x, const ConvParams& p) {
  check_conv(x, p);
  const std::size_t n = x.shape[1], m = p.out_len(n);
  Tensor y({p.out, m});
  const long long ln = static_cast<long long>(n);
  for (std::size_t o = 0; o < p.out; ++o) {
    double* yo = &y.data[o * m];
    for (std::size_t t = 0; t < m; ++t) yo[t] = p.b[o];
    for (std::size_t c = 0; c < p.in; ++c) {
      const double* xc = &x.data[c * n];
      const double* w = &p.w[(o * p.in + c) * p.k];
      for (std::size_t t = 0; t < m; ++t) {
        const long long base = static_cast<long long>(t * p.stride) - static_cast<long long>(p.pad);
        double acc = 0.0;
        for (std::size_t j = 0; j < p.k; ++j) {
          const long long i = base + static_cast<long long>(j);
          if (i >= 0 && i < ln) acc += w[j] * xc[i];
        }
        yo[t] += acc;
      }
    }
    if (p.act == Activation::Relu)
      for (std::size_t t = 0; t < m; ++t) yo[t] = std::max(yo[t], 0.0);
  }
  return y;
}

ConvGrads conv1d_backward(const Tensor& x, const Tensor& y, const ConvParams& p, const Tensor& dy) {
  check_conv(x, p);
  const std::size_t n = x.shape[1], m = p.out_len(n);
  if (dy.shape != std::vector<std::size_t>{p.out, m} || y.shape != dy.shape)
    throw std::invalid_argument("conv1d_backward: gradient shape mismatch");
  ConvGrads g{Tensor({p.in, n}), std::vector<double>(p.w.size(), 0.0), std::vector<double>(p.out, 0.0)};
  std::vector<double> dz(m);
  const long long ln = static_cast<long long>(n);
  for (std::size_t o = 0; o < p.out; ++o) {
    for (std::size_t t = 0; t < m; ++t) {
      const double d = dy.data[o * m + t];
      dz[t] = (p.act == Activation::Relu && y.data[o * m + t] <= 0.0) ? 0.0 : d;
      g.db[o] += dz[t];
    }
    for (std::size_t c = 0; c < p.in; ++c) {
      const double* xc = &x.data[c * n];
      double* dxc = &g.dx.data[c * n];
      const double* w = &p.w[(o * p.in + c) * p.k];
      double* dw = &g.dw[(o * p.in + c) * p.k];
      for (std::size_t t = 0; t < m; ++t) {
        if (dz[t] == 0.0) continue;
        const long long base = static_cast<long long>(t * p.stride) - static_cast<long long>(p.pad);
        for (std::size_t j = 0; j < p.k; ++j) {
          const long long i = base + static_cast<long long>(j);
          if (i < 0 || i >= ln) continue;
          dw[j] += dz[t] * xc[i];
          dxc[i] += dz[t] * w[j];
        }
      }
    }
  }
  return g;
}

void softmax_rows(Tensor& s) {
  const std::size_t r = s.shape[0], c = s.shape[1];
  for (std::size_t i = 0; i < r; ++i) {
    double* row = &s.data[i * c];
    const double mx = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= sum;
  }
}

static void check_attention(const Tensor& e, const Tensor& ep, const AttentionParams& p) {
  if (e.shape.size() != 2 || e.shape != ep.shape) throw std::invalid_argument("attention: E and E_prev shapes differ");
  const std::size_t d = e.shape[1];
  if (p.heads == 0 || d % p.heads != 0) throw std::invalid_argument("attention: d not divisible by heads");
  if (p.projections) {
    for (auto* w : {&p.wq, &p.wk, &p.wv, &p.wo})
      if (w->size() != d * d) throw std::invalid_argument("attention: projection must be d x d");
  }
}

Tensor temporal_attention(const Tensor& e, const Tensor& e_prev, const AttentionParams& p, AttentionCache* cache) {
  check_attention(e, e_prev, p);
  const std::size_t t = e.shape[0], d = e.shape[1];
  const std::size_t h = p.projections ? p.heads : 1, dh = d / h;
  Tensor q({t, d}), k({t, d}), v({t, d});
  if (p.projections) {
    matmul(e.data.data(), p.wq.data(), q.data.data(), t, d, d);
    matmul(e_prev.data.data(), p.wk.data(), k.data.data(), t, d, d);
    matmul(e_prev.data.data(), p.wv.data(), v.data.data(), t, d, d);
  } else {
    q = e;
    k = e_prev;
    v = e_prev;
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor concat({t, d});
  std::vector<Tensor> probs;
  probs.reserve(h);
  for (std::size_t hh = 0; hh < h; ++hh) {
    const std::size_t off = hh * dh;
    Tensor s({t, t});
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += q.data[i * d + off + c] * k.data[j * d + off + c];
        s.data[i * t + j] = acc * scale;
      }
    softmax_rows(s);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j) {
        const double pij = s.data[i * t + j];
        for (std::size_t c = 0; c < dh; ++c) concat.data[i * d + off + c] += pij * v.data[j * d + off + c];
      }
    probs.push_back(std::move(s));
  }
  Tensor out({t, d});
  if (p.projections)
    matmul(concat.data.data(), p.wo.data(), out.data.data(), t, d, d);
  else
    out.data = concat.data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += e.data[i];
  if (cache) *cache = AttentionCache{std::move(q), std::move(k), std::move(v), std::move(concat), std::move(probs)};
  return out;
}

AttentionGrads temporal_attention_backward(const Tensor& e, const Tensor& e_prev, const AttentionParams& p,
                                           const AttentionCache& cache, const Tensor& dout) {
  check_attention(e, e_prev, p);
  const std::size_t t = e.shape[0], d = e.shape[1];
  const std::size_t h = p.projections ? p.heads : 1, dh = d / h;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  AttentionGrads g;
  g.de = dout;  // residual
  g.de_prev = Tensor({t, d});

  Tensor dconcat({t, d});
  if (p.projections) {
    g.dwo.assign(d * d, 0.0);
    matmul(cache.concat.data.data(), dout.data.data(), g.dwo.data(), d, t, d, true, false);
    matmul(dout.data.data(), p.wo.data(), dconcat.data.data(), t, d, d, false, true);
  } else {
    dconcat = dout;
  }

  Tensor dq({t, d}), dk({t, d}), dv({t, d});
  std::vector<double> dp(t * t), ds(t * t);
  for (std::size_t hh = 0; hh < h; ++hh) {
    const std::size_t off = hh * dh;
    const auto& pr = cache.probs[hh].data;
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += dconcat.data[i * d + off + c] * cache.v.data[j * d + off + c];
        dp[i * t + j] = acc;
        const double pij = pr[i * t + j];
        for (std::size_t c = 0; c < dh; ++c) dv.data[j * d + off + c] += pij * dconcat.data[i * d + off + c];
      }
    for (std::size_t i = 0; i < t; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < t; ++j) dot += dp[i * t + j] * pr[i * t + j];
      for (std::size_t j = 0; j < t; ++j) ds[i * t + j] = pr[i * t + j] * (dp[i * t + j] - dot) * scale;
    }
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j) {
        const double sij = ds[i * t + j];
        if (sij == 0.0) continue;
        for (std::size_t c = 0; c < dh; ++c) {
          dq.data[i * d + off + c] += sij * cache.k.data[j * d + off + c];
          dk.data[j * d + off + c] += sij * cache.q.data[i * d + off + c];
        }
      }
  }

  if (p.projections) {
    g.dwq.assign(d * d, 0.0);
    g.dwk.assign(d * d, 0.0);
    g.dwv.assign(d * d, 0.0);
    matmul(e.data.data(), dq.data.data(), g.dwq.data(), d, t, d, true, false);
    matmul(e_prev.data.data(), dk.data.data(), g.dwk.data(), d, t, d, true, false);
    matmul(e_prev.data.data(), dv.data.data(), g.dwv.data(), d, t, d, true, false);
    std::vector<double> tmp(t * d);
    matmul(dq.data.data(), p.wq.data(), tmp.data(), t, d, d, false, true);
    add_to(g.de.data, tmp);
    matmul(dk.data.data(), p.wk.data(), tmp.data(), t, d, d, false, true);
    add_to(g.de_prev.data, tmp);
    matmul(dv.data.data(), p.wv.data(), tmp.data(), t, d, d, false, true);
    add_to(g.de_prev.data, tmp);
  } else {
    add_to(g.de.data, dq.data);
    add_to(g.de_prev.data, dk.data);
    add_to(g.de_prev.data, dv.data);
  }
  return g;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double z = std::exp(x);
  return z / (1.0 + z);
}

HrEstimate gaussian_head(double raw_mu, double raw_sigma, double frame_time) {
  return HrEstimate{raw_mu, softplus(raw_sigma) + kSigmaFloor, frame_time, true};
}

HrEstimate gaussian_head(const Tensor& features, double frame_time) {
  if (features.size() < 2) throw std::invalid_argument("gaussian_head: need two features");
  return gaussian_head(features.data[0], features.data[1], frame_time);
}

double gaussian_nll(const HrEstimate& est, Bpm y) {
  const double s2 = est.sigma_hr * est.sigma_hr;
  const double r = y - est.mu_hr;
  return 0.5 * std::log(2.0 * std::numbers::pi * s2) + r * r / (2.0 * s2);
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& st, const AdamOptions& o) {
  if (grads.size() != params.size() || st.m.size() != params.size() || st.v.size() != params.size())
    throw std::invalid_argument("adam_step: size mismatch");
  ++st.step;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = o.beta1 * st.m[i] + (1.0 - o.beta1) * grads[i];
    st.v[i] = o.beta2 * st.v[i] + (1.0 - o.beta2) * grads[i] * grads[i];
    const double mh = st.m[i] / bc1;
    const double vh = st.v[i] / bc2;
    params[i] -= o.lr * mh / (std::sqrt(vh) + o.eps);
  }
}

void sgd_step(std::vector<double>& params, const std::vector<double>& grads, std::vector<double>& buf, double lr,
              double momentum) {
  if (buf.size() != params.size()) buf.assign(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    buf[i] = momentum * buf[i] + grads[i];
    params[i] -= lr * buf[i];
  }
}

}  // namespace kidppg::nn
