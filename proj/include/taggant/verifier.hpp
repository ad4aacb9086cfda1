#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "taggant/keygen.hpp"
#include "taggant/oracle.hpp"

namespace taggant {

/// Survival P(Z >= t) of Z ~ Binomial(K, k/C), summed exactly in log space.
double binomial_pvalue(int t, int num_keys, int k, int num_classes);
double log_binomial_pvalue(int t, int num_keys, int k, int num_classes);

constexpr double kPValueFloor = 1e-300;

inline double floor_pvalue(double p, double floor = kPValueFloor) { return p < floor ? floor : p; }

/// Fisher's method: X = -2 sum ln p_i against chi-square with 2m degrees of
/// freedom, via the closed-form even-dof survival series. Inputs must lie in (0, 1].
double fisher_combine(const std::vector<double>& pvalues);

/// Smallest T with binomial_pvalue(T) <= alpha, or K + 1 when none exists.
int detection_threshold(int num_keys, int k, int num_classes, double alpha);

enum class Verdict { detected, not_detected };
std::string to_string(Verdict v);

struct Decision {
  double combined_pvalue = 1.0;
  Verdict verdict = Verdict::not_detected;
};

Decision decide(const std::vector<double>& pvalues, double alpha);

struct KeyAccuracy {
  int hits = 0;
  std::vector<bool> per_key;
};

/// Counts keys whose label is in the oracle's top-k for that key's clip.
/// Oracle errors, or answers that are short or out of range, abort with OracleError.
KeyAccuracy topk_key_accuracy(const TopKOracle& oracle, const KeySet& keys, int k);

/// Everything needed to recompute a verdict by hand.
struct VerificationReport {
  int num_keys = 0;
  int num_classes = 0;
  int chosen_k = 1;
  int k_max = 1;
  double alpha = 0.05;
  std::vector<int> key_labels;
  std::vector<std::vector<int>> rankings;  // top-k_max answer per key
  std::vector<int> t_k;                    // index k-1
  std::vector<double> p_k;                 // index k-1
  std::vector<double> run_pvalues;         // p at chosen_k of every run combined
  double combined_pvalue = 1.0;
  int threshold = 0;
  Verdict verdict = Verdict::not_detected;
  double pvalue_floor = kPValueFloor;

  nlohmann::json to_json() const;
};

/// Builds the report from per-key rankings (best first, at least k_max long).
VerificationReport build_report(const std::vector<std::vector<int>>& rankings, const std::vector<int>& key_labels,
                                int num_classes, int chosen_k, double alpha, int k_max,
                                const std::vector<double>& prior_run_pvalues = {});

/// Queries the oracle once per key for its top-k_max list.
std::vector<std::vector<int>> query_rankings(const TopKOracle& oracle, const KeySet& keys, int k_max);

VerificationReport verify(const TopKOracle& oracle, const KeySet& keys, int chosen_k, double alpha,
                          std::optional<int> k_max = std::nullopt);

struct SuspectRun {
  const TopKOracle* oracle = nullptr;
  bool trained_on_protected = false;
};

struct RateReport {
  std::optional<double> fnr;  // undefined without protected runs
  std::optional<double> fpr;  // undefined without benign runs
  std::vector<double> pvalues;
  std::vector<Verdict> verdicts;
};

RateReport evaluate_rates(const std::vector<SuspectRun>& runs, const KeySet& keys, int k, double alpha);

}  // namespace taggant
