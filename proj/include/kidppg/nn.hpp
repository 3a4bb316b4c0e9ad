#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kidppg/kv.hpp"
#include "kidppg/types.hpp"

namespace kidppg::nn {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;  // row-major

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
  void check() const;  // product(shape) == size, all finite
};

enum class Activation { Identity, Relu };

// weights: out x in x k, index (o * in + c) * k + j
struct ConvParams {
  std::size_t in = 1, out = 1, k = 1, stride = 1, pad = 0;
  Activation act = Activation::Relu;
  std::vector<double> w;
  std::vector<double> b;

  std::size_t out_len(std::size_t n) const;
};

Tensor conv1d_forward(const Tensor& x, const ConvParams& p);

struct ConvGrads {
  Tensor dx;
  std::vector<double> dw;
  std::vector<double> db;
};
// y is the forward output (post-activation); dy has the same shape.
ConvGrads conv1d_backward(const Tensor& x, const Tensor& y, const ConvParams& p, const Tensor& dy);

// Multi-head attention of E (queries) over E_prev (keys/values), plus the
// residual. Matrices are d x d and act on the right: Q = E * wq.
// Without projections there is a single head of width d: softmax(E E_prev^T / sqrt(d)) E_prev.
struct AttentionParams {
  std::size_t heads = 4;
  bool projections = true;
  std::vector<double> wq, wk, wv, wo;
};

struct AttentionCache {
  Tensor q, k, v, concat;
  std::vector<Tensor> probs;  // per head, T x T
};

Tensor temporal_attention(const Tensor& e, const Tensor& e_prev, const AttentionParams& p,
                          AttentionCache* cache = nullptr);

struct AttentionGrads {
  Tensor de, de_prev;
  std::vector<double> dwq, dwk, dwv, dwo;
};
AttentionGrads temporal_attention_backward(const Tensor& e, const Tensor& e_prev, const AttentionParams& p,
                                           const AttentionCache& cache, const Tensor& dout);

// Row-wise softmax, max-subtracted.
void softmax_rows(Tensor& s);

double softplus(double x);
double sigmoid(double x);

struct HrEstimate {
  Bpm mu_hr = 0.0;
  Bpm sigma_hr = 1.0;
  double frame_time = 0.0;
  bool probabilistic = true;  // false for point models (sigma_hr is meaningless)
};

inline constexpr double kSigmaFloor = 1e-3;

// mu = raw_mu, sigma = softplus(raw_sigma) + 1e-3
HrEstimate gaussian_head(double raw_mu, double raw_sigma, double frame_time = 0.0);
HrEstimate gaussian_head(const Tensor& features, double frame_time = 0.0);  // first two entries

double gaussian_nll(const HrEstimate& est, Bpm y);

// ---------------------------------------------------------------------------
// Network

struct NetConfig {
  std::size_t in_channels = 1;  // 1 = PPG only, 4 = PPG + acc xyz
  std::size_t frame_len = 256;
  std::vector<std::size_t> conv_channels{8, 16, 32};
  std::size_t kernel = 7;
  std::size_t stride = 2;
  std::size_t pool_to = 16;  // T
  std::size_t heads = 4;
  bool projections = true;
  bool temporal = true;  // false: each frame attends to itself
  std::size_t hidden = 64;
  bool probabilistic = true;
  // Output scaling: mu = mu_offset + mu_scale * raw_mu,
  // sigma = sigma_scale * softplus(raw_sigma) + 1e-3.
  double mu_offset = 0.0;
  double mu_scale = 1.0;
  double sigma_scale = 1.0;

  std::size_t embed_dim() const { return conv_channels.empty() ? in_channels : conv_channels.back(); }
  std::size_t outputs() const { return probabilistic ? 2 : 1; }
  void validate() const;
  KeyValueDoc to_doc() const;
  static NetConfig from_doc(const KeyValueDoc& doc);
};

// Named slice of the flat parameter vector.
struct ParamGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// One conv stack stored once and applied to both frames of a pair.
class HrNetwork {
 public:
  HrNetwork() = default;
  HrNetwork(NetConfig cfg, std::uint64_t seed);

  const NetConfig& config() const { return cfg_; }
  NetConfig& config() { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  const ParamGroup& group(const std::string& name) const;
  std::span<double> view(const std::string& name);
  std::span<const double> view(const std::string& name) const;

  ConvParams conv_layer(std::size_t i) const;
  AttentionParams attention() const;

  // Inputs are C x N row-major. prev == nullptr means self-attention.
  // raw outputs (before the head), length config().outputs()
  std::vector<double> forward_raw(std::span<const double> cur, const std::vector<double>* prev) const;
  HrEstimate forward(std::span<const double> cur, const std::vector<double>* prev, double frame_time = 0.0) const;
  // Embedding (T x d) of one frame, for tests.
  Tensor embed(std::span<const double> x) const;

  // Loss of one sample and its gradient accumulated into grad (same layout as params).
  double loss_and_grad(std::span<const double> cur, const std::vector<double>* prev, Bpm y,
                       std::vector<double>* grad) const;
  double loss(std::span<const double> cur, const std::vector<double>* prev, Bpm y) const {
    return loss_and_grad(cur, prev, y, nullptr);
  }

  HrEstimate head(std::span<const double> raw, double frame_time = 0.0) const;

 private:
  void layout();

  NetConfig cfg_;
  std::uint64_t seed_ = 0;
  std::vector<double> params_;
  std::vector<ParamGroup> groups_;
};

// Network input from a frame: PPG row, then acc x/y/z rows when in_channels == 4.
std::vector<double> frame_input(const SampleFrame& f, std::size_t in_channels);

// frame_prev == frame_cur (same object) or config().temporal == false means self-attention.
HrEstimate forward_kidppg(const HrNetwork& net, const SampleFrame& frame_prev, const SampleFrame& frame_cur);

// ---------------------------------------------------------------------------
// Training

struct NetSample {
  std::vector<double> cur;   // C x N
  std::vector<double> prev;  // empty = self-attention
  Bpm y = 0.0;
  double t = 0.0;
};

// Mean loss over the batch and its gradient. Work is split into fixed
// contiguous chunks and reduced in chunk order, so the result does not depend
// on the thread count. Throws DivergenceError on non-finite values.
double batch_loss_grad(const HrNetwork& net, const std::vector<NetSample>& data,
                       std::span<const std::size_t> idx, std::vector<double>& grad, unsigned threads = 1);

struct AdamOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  long long step = 0;
  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               const AdamOptions& opt = {});

// Plain SGD with momentum (buf = momentum * buf + g; w -= lr * buf).
void sgd_step(std::vector<double>& params, const std::vector<double>& grads, std::vector<double>& buf,
              double lr, double momentum = 0.0);

struct TrainOptions {
  AdamOptions adam;
  std::size_t batch = 64;
  int epochs = 50;
  int patience = 8;  // epochs without validation improvement
  std::uint64_t seed = 0;
  unsigned threads = 1;
  double time_budget_s = 0.0;  // 0 = unlimited
};

struct TrainTrace {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = -1;
  bool stopped_early = false;
};

// Adam on shuffled mini-batches; keeps the parameters of the best
// validation epoch (or the last epoch when val is empty).
TrainTrace train_network(HrNetwork& net, const std::vector<NetSample>& train, const std::vector<NetSample>& val,
                         const TrainOptions& opt, const std::function<void(int, double, double)>& on_epoch = {});

double mean_loss(const HrNetwork& net, const std::vector<NetSample>& data, unsigned threads = 1);

// Directory: manifest.txt (kind=hr_network, config, seed) + params.f32.
void save_network(const HrNetwork& net, const std::filesystem::path& dir);
HrNetwork load_network(const std::filesystem::path& dir);

}  // namespace kidppg::nn
