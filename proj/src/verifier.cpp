#include "taggant/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace taggant {

namespace {

double log_sum_exp(const std::vector<double>& terms) {
  const double peak = *std::max_element(terms.begin(), terms.end());
  if (peak == -std::numeric_limits<double>::infinity()) return peak;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - peak);
  return peak + std::log(s);
}

void check_counts(int num_keys, int k, int num_classes) {
  if (num_keys < 1) throw std::invalid_argument("binomial_pvalue: K must be >= 1");
  if (num_classes < 1 || k < 1 || k > num_classes) throw std::invalid_argument("binomial_pvalue: require 1 <= k <= C");
}

}  // namespace

double log_binomial_pvalue(int t, int num_keys, int k, int num_classes) {
  check_counts(num_keys, k, num_classes);
  if (t < 0 || t > num_keys) throw std::invalid_argument("binomial_pvalue: require 0 <= T <= K");
  if (t == 0) return 0.0;
  const double q = double(k) / double(num_classes);
  const double log_q = std::log(q);
  const double log_1mq = k == num_classes ? -std::numeric_limits<double>::infinity() : std::log1p(-q);
  const double log_kfact = std::lgamma(double(num_keys) + 1.0);
  std::vector<double> terms;
  for (int z = t; z <= num_keys; ++z) {
    const int rest = num_keys - z;
    double term = log_kfact - std::lgamma(double(z) + 1.0) - std::lgamma(double(rest) + 1.0) + z * log_q;
    if (rest > 0) term += rest * log_1mq;
    terms.push_back(term);
  }
  return std::min(0.0, log_sum_exp(terms));
}

double binomial_pvalue(int t, int num_keys, int k, int num_classes) {
  return std::exp(log_binomial_pvalue(t, num_keys, k, num_classes));
}

double fisher_combine(const std::vector<double>& pvalues) {
  if (pvalues.empty()) throw std::invalid_argument("fisher_combine: no p-values");
  double half = 0.0;  // X / 2
  for (double p : pvalues) {
    if (!(p > 0.0 && p <= 1.0))
      throw std::invalid_argument("fisher_combine: p-values must lie in (0, 1]; floor zeros before combining");
    half -= std::log(p);
  }
  if (half == 0.0) return 1.0;
  std::vector<double> terms;
  for (std::size_t j = 0; j < pvalues.size(); ++j) terms.push_back(double(j) * std::log(half) - std::lgamma(double(j) + 1.0));
  return std::min(1.0, std::exp(-half + log_sum_exp(terms)));
}

int detection_threshold(int num_keys, int k, int num_classes, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("detection_threshold: alpha must be in (0, 1)");
  for (int t = 0; t <= num_keys; ++t)
    if (binomial_pvalue(t, num_keys, k, num_classes) <= alpha) return t;
  return num_keys + 1;
}

std::string to_string(Verdict v) { return v == Verdict::detected ? "detected" : "not-detected"; }

Decision decide(const std::vector<double>& pvalues, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("decide: alpha must be in (0, 1)");
  std::vector<double> floored;
  for (double p : pvalues) floored.push_back(floor_pvalue(p));
  Decision d;
  d.combined_pvalue = fisher_combine(floored);
  d.verdict = d.combined_pvalue <= alpha ? Verdict::detected : Verdict::not_detected;
  return d;
}

namespace {

std::vector<int> checked_answer(const TopKOracle& oracle, const AudioClip& clip, int k, std::size_t key) {
  std::vector<int> answer;
  try {
    answer = oracle.topk(clip, k);
  } catch (const OracleError&) {
    throw;
  } catch (const std::exception& e) {
    throw OracleError("oracle failed on key " + std::to_string(key) + ": " + e.what());
  }
  if (answer.size() < std::size_t(k))
    throw OracleError("oracle returned " + std::to_string(answer.size()) + " classes for key " + std::to_string(key) +
                      " but top-" + std::to_string(k) + " was requested");
  answer.resize(std::size_t(k));
  std::set<int> seen;
  for (int c : answer) {
    if (c < 0 || c >= oracle.num_classes())
      throw OracleError("oracle returned class " + std::to_string(c) + " outside [0, C) for key " + std::to_string(key));
    if (!seen.insert(c).second) throw OracleError("oracle repeated class " + std::to_string(c) + " for key " + std::to_string(key));
  }
  return answer;
}

}  // namespace

KeyAccuracy topk_key_accuracy(const TopKOracle& oracle, const KeySet& keys, int k) {
  if (k < 1 || k > oracle.num_classes()) throw std::invalid_argument("topk_key_accuracy: require 1 <= k <= C");
  KeyAccuracy out;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto answer = checked_answer(oracle, keys.keys[i].clip, k, i);
    const bool hit = std::find(answer.begin(), answer.end(), keys.keys[i].label) != answer.end();
    out.per_key.push_back(hit);
    out.hits += hit;
  }
  return out;
}

std::vector<std::vector<int>> query_rankings(const TopKOracle& oracle, const KeySet& keys, int k_max) {
  if (k_max < 1 || k_max > oracle.num_classes()) throw std::invalid_argument("query_rankings: require 1 <= k <= C");
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < keys.size(); ++i) out.push_back(checked_answer(oracle, keys.keys[i].clip, k_max, i));
  return out;
}

VerificationReport build_report(const std::vector<std::vector<int>>& rankings, const std::vector<int>& key_labels,
                                int num_classes, int chosen_k, double alpha, int k_max,
                                const std::vector<double>& prior_run_pvalues) {
  if (rankings.size() != key_labels.size() || rankings.empty())
    throw std::invalid_argument("build_report: need one ranking per key");
  if (k_max < 1 || k_max > num_classes || chosen_k < 1 || chosen_k > k_max)
    throw std::invalid_argument("build_report: require 1 <= k <= k_max <= C");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("build_report: alpha must be in (0, 1)");
  for (std::size_t i = 0; i < rankings.size(); ++i)
    if (rankings[i].size() < std::size_t(k_max))
      throw OracleError("ranking for key " + std::to_string(i) + " has fewer than " + std::to_string(k_max) + " classes");

  VerificationReport r;
  r.num_keys = int(key_labels.size());
  r.num_classes = num_classes;
  r.chosen_k = chosen_k;
  r.k_max = k_max;
  r.alpha = alpha;
  r.key_labels = key_labels;
  for (const auto& rank : rankings) r.rankings.emplace_back(rank.begin(), rank.begin() + k_max);
  for (int k = 1; k <= k_max; ++k) {
    int hits = 0;
    for (std::size_t i = 0; i < rankings.size(); ++i)
      hits += std::find(rankings[i].begin(), rankings[i].begin() + k, key_labels[i]) != rankings[i].begin() + k;
    r.t_k.push_back(hits);
    r.p_k.push_back(binomial_pvalue(hits, r.num_keys, k, num_classes));
  }
  r.run_pvalues = prior_run_pvalues;
  r.run_pvalues.push_back(r.p_k[std::size_t(chosen_k - 1)]);
  const Decision d = decide(r.run_pvalues, alpha);
  r.combined_pvalue = d.combined_pvalue;
  r.verdict = d.verdict;
  r.threshold = detection_threshold(r.num_keys, chosen_k, num_classes, alpha);
  return r;
}

VerificationReport verify(const TopKOracle& oracle, const KeySet& keys, int chosen_k, double alpha,
                          std::optional<int> k_max) {
  const int C = oracle.num_classes();
  const int kmax = k_max ? *k_max : std::max(chosen_k, std::min(C, 10));
  return build_report(query_rankings(oracle, keys, kmax), keys.labels(), C, chosen_k, alpha, kmax);
}

nlohmann::json VerificationReport::to_json() const {
  nlohmann::json per_k = nlohmann::json::array();
  for (std::size_t i = 0; i < t_k.size(); ++i) per_k.push_back({{"k", i + 1}, {"T_k", t_k[i]}, {"p_value", p_k[i]}});
  nlohmann::json keys = nlohmann::json::array();
  for (std::size_t i = 0; i < rankings.size(); ++i) keys.push_back({{"index", i}, {"label", key_labels[i]}, {"ranking", rankings[i]}});
  return {{"K", num_keys},
          {"C", num_classes},
          {"k", chosen_k},
          {"k_max", k_max},
          {"alpha", alpha},
          {"per_k", per_k},
          {"keys", keys},
          {"run_p_values", run_pvalues},
          {"p_value_floor", pvalue_floor},
          {"combined_p_value", combined_pvalue},
          {"threshold_tau", threshold},
          {"verdict", to_string(verdict)}};
}

RateReport evaluate_rates(const std::vector<SuspectRun>& runs, const KeySet& keys, int k, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("evaluate_rates: alpha must be in (0, 1)");
  RateReport out;
  int protected_runs = 0, misses = 0, benign_runs = 0, false_alarms = 0;
  for (const SuspectRun& run : runs) {
    if (!run.oracle) throw std::invalid_argument("evaluate_rates: null oracle");
    const KeyAccuracy acc = topk_key_accuracy(*run.oracle, keys, k);
    const double p = binomial_pvalue(acc.hits, int(keys.size()), k, run.oracle->num_classes());
    const Verdict v = p <= alpha ? Verdict::detected : Verdict::not_detected;
    out.pvalues.push_back(p);
    out.verdicts.push_back(v);
    if (run.trained_on_protected) {
      ++protected_runs;
      misses += v == Verdict::not_detected;
    } else {
      ++benign_runs;
      false_alarms += v == Verdict::detected;
    }
  }
  if (protected_runs) out.fnr = double(misses) / protected_runs;
  if (benign_runs) out.fpr = double(false_alarms) / benign_runs;
  return out;
}

}  // namespace taggant
