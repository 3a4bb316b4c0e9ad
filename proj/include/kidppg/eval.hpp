#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kidppg/nn.hpp"
#include "kidppg/types.hpp"

namespace kidppg::eval {

inline constexpr double kDefaultThr = 10.0;
inline constexpr double kDefaultCl = 0.5;

// Standard normal CDF.
double phi(double z);

// Probability mass of N(mu, sigma^2) inside [mu - thr, mu + thr]
// = 2 Phi(thr / sigma) - 1. Independent of mu.
double trust_probability(const nn::HrEstimate& est, double thr);

struct TrustDecision {
  nn::HrEstimate estimate;
  double trust_prob = 1.0;
  bool keep = true;
  double thr_bpm = kDefaultThr;
  double cl = kDefaultCl;
};

// Keep iff trust >= cl. Point estimates are always kept with trust 1.
TrustDecision classify_trust(const nn::HrEstimate& est, double thr = kDefaultThr, double cl = kDefaultCl);

struct Prediction {
  nn::HrEstimate est;
  Bpm y = 0.0;
  std::string subject_id;
  std::string activity;
};

struct GroupMetrics {
  std::size_t n = 0;
  std::size_t kept = 0;
  std::optional<double> mae;      // over kept; absent when nothing is kept
  std::optional<double> sd_ae;    // population SD of |mu - y| over kept
  std::optional<double> mean_nll; // over all samples; absent for point models
  double retention_pct = 0.0;
  // Error classifier: positive = |mu - y| >= thr, predicted positive = dropped.
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::optional<double> tpr;  // absent for point models
  std::optional<double> f1;
  bool no_positives = false;  // tpr reported as 1 by convention
};

struct MetricsReport : GroupMetrics {
  double thr = kDefaultThr;
  double cl = kDefaultCl;
  bool probabilistic = true;
  std::map<std::string, GroupMetrics> per_subject;
  std::map<std::string, GroupMetrics> per_activity;
};

// Throws std::invalid_argument on empty input.
MetricsReport evaluate(const std::vector<Prediction>& preds, double thr = kDefaultThr, double cl = kDefaultCl);
GroupMetrics evaluate_group(const std::vector<Prediction>& preds, double thr, double cl);

struct Fold {
  std::vector<std::string> train;
  std::string test;
};

// One fold per subject in input order. Throws std::invalid_argument on fewer
// than two subjects or duplicate ids.
std::vector<Fold> loso_folds(const std::vector<SessionRecording>& sessions);
std::vector<Fold> loso_folds(const std::vector<std::string>& subject_ids);

// `metric,scope,value` rows; absent values are written as NA.
std::string report_csv(const MetricsReport& r);
// Pools per-fold report CSVs back into (metric, scope) -> value.
std::map<std::pair<std::string, std::string>, std::string> parse_report_csv(const std::string& text);

// Table with one column per subject plus the average: MAE (SD) and retention.
std::string report_table(const MetricsReport& r, const std::string& title = "");

}  // namespace kidppg::eval
