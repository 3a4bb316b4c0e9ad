#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "kidppg/error.hpp"
#include "kidppg/eval.hpp"
#include "kidppg/kv.hpp"

namespace kidppg::eval {

double phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double trust_probability(const nn::HrEstimate& est, double thr) {
  if (!(est.sigma_hr > 0)) throw std::invalid_argument("trust_probability: sigma must be positive");
  if (!(thr > 0)) throw std::invalid_argument("trust_probability: thr must be positive");
  // 2 Phi(z) - 1 == erf(z / sqrt 2), without the cancellation near 1
  return std::erf(thr / (est.sigma_hr * std::sqrt(2.0)));
}

TrustDecision classify_trust(const nn::HrEstimate& est, double thr, double cl) {
  TrustDecision d;
  d.estimate = est;
  d.thr_bpm = thr;
  d.cl = cl;
  if (!est.probabilistic) {
    d.trust_prob = 1.0;
    d.keep = true;
    return d;
  }
  d.trust_prob = trust_probability(est, thr);
  d.keep = d.trust_prob >= cl;
  return d;
}

GroupMetrics evaluate_group(const std::vector<Prediction>& preds, double thr, double cl) {
  if (preds.empty()) throw std::invalid_argument("evaluate: no predictions");
  GroupMetrics g;
  g.n = preds.size();
  const bool prob = std::all_of(preds.begin(), preds.end(), [](const auto& p) { return p.est.probabilistic; });
  std::vector<double> kept_err;
  double nll = 0.0;
  for (const auto& p : preds) {
    const double err = std::abs(p.est.mu_hr - p.y);
    const auto d = classify_trust(p.est, thr, cl);
    const bool keep = prob ? d.keep : true;
    if (keep) kept_err.push_back(err);
    if (prob) {
      nll += nn::gaussian_nll(p.est, p.y);
      const bool pos = err >= thr;
      const bool pred_pos = !keep;
      if (pos && pred_pos) ++g.tp;
      else if (!pos && pred_pos) ++g.fp;
      else if (pos) ++g.fn;
      else ++g.tn;
    }
  }
  g.kept = kept_err.size();
  g.retention_pct = 100.0 * static_cast<double>(g.kept) / static_cast<double>(g.n);
  if (!kept_err.empty()) {
    double s = 0.0;
    for (double e : kept_err) s += e;
    const double mae = s / static_cast<double>(kept_err.size());
    double v = 0.0;
    for (double e : kept_err) v += (e - mae) * (e - mae);
    g.mae = mae;
    g.sd_ae = std::sqrt(v / static_cast<double>(kept_err.size()));
  }
  if (prob) {
    g.mean_nll = nll / static_cast<double>(g.n);
    const std::size_t positives = g.tp + g.fn;
    if (positives == 0) {
      g.no_positives = true;
      g.tpr = 1.0;
    } else {
      g.tpr = static_cast<double>(g.tp) / static_cast<double>(positives);
    }
    const std::size_t den = 2 * g.tp + g.fp + g.fn;
    // TP = FP = FN = 0: the classifier agrees with the truth everywhere.
    g.f1 = den == 0 ? 1.0 : 2.0 * static_cast<double>(g.tp) / static_cast<double>(den);
  }
  return g;
}

MetricsReport evaluate(const std::vector<Prediction>& preds, double thr, double cl) {
  if (preds.empty()) throw std::invalid_argument("evaluate: no predictions");
  MetricsReport r;
  static_cast<GroupMetrics&>(r) = evaluate_group(preds, thr, cl);
  r.thr = thr;
  r.cl = cl;
  r.probabilistic = r.mean_nll.has_value();
  std::map<std::string, std::vector<Prediction>> by_subject, by_activity;
  for (const auto& p : preds) {
    by_subject[p.subject_id].push_back(p);
    by_activity[p.activity].push_back(p);
  }
  for (const auto& [k, v] : by_subject) r.per_subject[k] = evaluate_group(v, thr, cl);
  for (const auto& [k, v] : by_activity) r.per_activity[k] = evaluate_group(v, thr, cl);
  return r;
}

std::vector<Fold> loso_folds(const std::vector<std::string>& ids) {
  std::set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second) throw std::invalid_argument("loso_folds: duplicate subject id '" + id + "'");
  if (ids.size() < 2) throw std::invalid_argument("loso_folds: need at least two subjects");
  std::vector<Fold> folds;
  for (const auto& test : ids) {
    Fold f;
    f.test = test;
    for (const auto& id : ids)
      if (id != test) f.train.push_back(id);
    folds.push_back(std::move(f));
  }
  return folds;
}

std::vector<Fold> loso_folds(const std::vector<SessionRecording>& sessions) {
  std::vector<std::string> ids;
  for (const auto& s : sessions) ids.push_back(s.subject_id);
  return loso_folds(ids);
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

void group_rows(std::ostringstream& o, const GroupMetrics& g, const std::string& scope, bool prob) {
  o << "n," << scope << ',' << g.n << '\n';
  o << "kept," << scope << ',' << g.kept << '\n';
  o << "mae_bpm," << scope << ',' << opt(g.mae) << '\n';
  o << "sd_ae_bpm," << scope << ',' << opt(g.sd_ae) << '\n';
  o << "retention_pct," << scope << ',' << format_double(g.retention_pct) << '\n';
  if (!prob) return;
  o << "mean_nll," << scope << ',' << opt(g.mean_nll) << '\n';
  o << "tpr," << scope << ',' << opt(g.tpr) << '\n';
  o << "f1," << scope << ',' << opt(g.f1) << '\n';
  o << "no_positives," << scope << ',' << (g.no_positives ? 1 : 0) << '\n';
  o << "tp," << scope << ',' << g.tp << '\n';
  o << "fp," << scope << ',' << g.fp << '\n';
  o << "fn," << scope << ',' << g.fn << '\n';
  o << "tn," << scope << ',' << g.tn << '\n';
}

}  // namespace

std::string report_csv(const MetricsReport& r) {
  std::ostringstream o;
  o << "metric,scope,value\n";
  o << "thr_bpm,all," << format_double(r.thr) << '\n';
  o << "cl,all," << format_double(r.cl) << '\n';
  group_rows(o, r, "all", r.probabilistic);
  for (const auto& [k, g] : r.per_subject) group_rows(o, g, "subject:" + k, r.probabilistic);
  for (const auto& [k, g] : r.per_activity) group_rows(o, g, "activity:" + k, r.probabilistic);
  return o.str();
}

std::map<std::pair<std::string, std::string>, std::string> parse_report_csv(const std::string& text) {
  std::map<std::pair<std::string, std::string>, std::string> out;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      if (trim(line) != "metric,scope,value") throw FormatError("report: expected header metric,scope,value");
      header = false;
      continue;
    }
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 3) throw FormatError("report: malformed row '" + line + "'");
    out[{f[0], f[1]}] = f[2];
  }
  return out;
}

std::string report_table(const MetricsReport& r, const std::string& title) {
  auto cell = [](const GroupMetrics& g) {
    if (!g.mae) return std::string("-");
    std::ostringstream c;
    c << std::fixed << std::setprecision(2) << *g.mae << " (" << *g.sd_ae << ")";
    return c.str();
  };
  auto pct = [](double v) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(2) << v;
    return c.str();
  };
  std::vector<std::string> head{""}, mae{"MAE (SD)"}, ret{"Retention %"};
  for (const auto& [k, g] : r.per_subject) {
    head.push_back(k);
    mae.push_back(cell(g));
    ret.push_back(pct(g.retention_pct));
  }
  head.push_back("Avg");
  mae.push_back(cell(r));
  ret.push_back(pct(r.retention_pct));
  std::vector<std::size_t> w(head.size(), 0);
  for (const auto* row : {&head, &mae, &ret})
    for (std::size_t i = 0; i < row->size(); ++i) w[i] = std::max(w[i], (*row)[i].size());
  std::ostringstream o;
  if (!title.empty()) o << title << '\n';
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) o << (i ? " | " : "") << std::setw(static_cast<int>(w[i])) << row[i];
    o << '\n';
  };
  emit(head);
  emit(mae);
  if (r.probabilistic) emit(ret);
  if (r.mean_nll) o << "Mean NLL: " << pct(*r.mean_nll) << '\n';
  return o.str();
}

}  // namespace kidppg::eval
