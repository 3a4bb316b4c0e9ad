#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

#include "kidppg/error.hpp"
#include "kidppg/nn.hpp"

namespace kidppg::nn {

namespace {

// Fixed chunking so the reduction order never depends on the thread count.
constexpr std::size_t kChunks = 8;

}  // namespace

double batch_loss_grad(const HrNetwork& net, const std::vector<NetSample>& data, std::span<const std::size_t> idx,
                       std::vector<double>& grad, unsigned threads) {
  if (idx.empty()) throw std::invalid_argument("batch_loss_grad: empty batch");
  const std::size_t np = net.params().size();
  const std::size_t chunks = std::min(kChunks, idx.size());
  std::vector<std::vector<double>> cg(chunks, std::vector<double>(np, 0.0));
  std::vector<double> closs(chunks, 0.0);
  std::vector<std::exception_ptr> errs(chunks);

  auto work = [&](std::size_t c) {
    try {
      const std::size_t lo = idx.size() * c / chunks, hi = idx.size() * (c + 1) / chunks;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& s = data.at(idx[i]);
        closs[c] += net.loss_and_grad(s.cur, s.prev.empty() ? nullptr : &s.prev, s.y, &cg[c]);
      }
    } catch (...) {
      errs[c] = std::current_exception();
    }
  };
  const unsigned nt = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(chunks)));
  if (nt == 1) {
    for (std::size_t c = 0; c < chunks; ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < nt; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t c = t; c < chunks; c += nt) work(c);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);

  grad.assign(np, 0.0);
  double loss = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    loss += closs[c];
    for (std::size_t i = 0; i < np; ++i) grad[i] += cg[c][i];
  }
  const double inv = 1.0 / static_cast<double>(idx.size());
  for (double& g : grad) {
    g *= inv;
    if (!std::isfinite(g)) throw DivergenceError("non-finite gradient");
  }
  loss *= inv;
  if (!std::isfinite(loss)) throw DivergenceError("non-finite batch loss");
  return loss;
}

double mean_loss(const HrNetwork& net, const std::vector<NetSample>& data, unsigned threads) {
  if (data.empty()) throw std::invalid_argument("mean_loss: empty data");
  const std::size_t chunks = std::min(kChunks, data.size());
  std::vector<double> closs(chunks, 0.0);
  std::vector<std::exception_ptr> errs(chunks);
  auto work = [&](std::size_t c) {
    try {
      const std::size_t lo = data.size() * c / chunks, hi = data.size() * (c + 1) / chunks;
      for (std::size_t i = lo; i < hi; ++i)
        closs[c] += net.loss(data[i].cur, data[i].prev.empty() ? nullptr : &data[i].prev, data[i].y);
    } catch (...) {
      errs[c] = std::current_exception();
    }
  };
  const unsigned nt = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(chunks)));
  if (nt == 1) {
    for (std::size_t c = 0; c < chunks; ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < nt; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t c = t; c < chunks; c += nt) work(c);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return std::accumulate(closs.begin(), closs.end(), 0.0) / static_cast<double>(data.size());
}

TrainTrace train_network(HrNetwork& net, const std::vector<NetSample>& train, const std::vector<NetSample>& val,
                         const TrainOptions& opt, const std::function<void(int, double, double)>& on_epoch) {
  if (train.empty()) throw std::invalid_argument("train_network: no training samples");
  if (opt.batch == 0) throw std::invalid_argument("train_network: batch must be positive");
  const auto t_start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(opt.seed);
  AdamState state(net.params().size());
  std::vector<double> grad;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainTrace trace;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_params = net.params();
  int since_best = 0;
  for (int ep = 0; ep < opt.epochs; ++ep) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += opt.batch) {
      const std::size_t hi = std::min(order.size(), lo + opt.batch);
      std::span<const std::size_t> b(order.data() + lo, hi - lo);
      double l;
      try {
        l = batch_loss_grad(net, train, b, grad, opt.threads);
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(ep) +
                              " (lr=" + format_double(opt.adam.lr) + ")");
      }
      sum += l * static_cast<double>(hi - lo);
      adam_step(net.params(), grad, state, opt.adam);
    }
    const double tl = sum / static_cast<double>(train.size());
    trace.train_loss.push_back(tl);
    const double vl = val.empty() ? tl : mean_loss(net, val, opt.threads);
    if (!val.empty()) trace.val_loss.push_back(vl);
    if (on_epoch) on_epoch(ep, tl, vl);
    if (vl < best) {
      best = vl;
      best_params = net.params();
      trace.best_epoch = ep;
      since_best = 0;
    } else if (++since_best >= opt.patience && !val.empty()) {
      trace.stopped_early = true;
      break;
    }
    if (opt.time_budget_s > 0) {
      const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      if (el > opt.time_budget_s) {
        trace.stopped_early = true;
        break;
      }
    }
  }
  if (!val.empty()) net.params() = best_params;
  return trace;
}

void save_network(const HrNetwork& net, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  KeyValueDoc doc;
  doc.set("format_version", 1);
  doc.set("kind", std::string("hr_network"));
  doc.set("seed", static_cast<long long>(net.seed()));
  const auto cd = net.config().to_doc();
  for (const auto& [k, v] : cd.entries()) doc.set(k, v);
  doc.set("params", "count:" + std::to_string(net.params().size()) + ",dtype:f32le");
  for (const auto& g : net.groups()) doc.set("group." + g.name, std::to_string(g.offset) + ":" + std::to_string(g.size));
  doc.save(dir / "manifest.txt");
  write_f32(dir / "params.f32", net.params());
}

HrNetwork load_network(const std::filesystem::path& dir) {
  const auto doc = KeyValueDoc::load(dir / "manifest.txt");
  if (doc.get_string("kind", "") != "hr_network") throw FormatError(doc.origin() + ": not an hr_network model");
  const auto seed = static_cast<std::uint64_t>(doc.require_int("seed"));
  HrNetwork net(NetConfig::from_doc(doc), seed);
  auto p = read_f32(dir / "params.f32");
  if (p.size() != net.params().size())
    throw CorruptionError((dir / "params.f32").string() + ": " + std::to_string(p.size()) + " values, architecture needs " +
                          std::to_string(net.params().size()));
  net.params() = std::move(p);
  return net;
}

}  // namespace kidppg::nn
