#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "taggant/dataset.hpp"
#include "taggant/keygen.hpp"
#include "taggant/model.hpp"

namespace taggant {

struct CraftConfig {
  int steps = 250;
  double step_size = 1e-3;  // magnitude of one signed-Adam update
  double clip_bound = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int restarts = 1;
  int batch_size = 64;  // poisons accumulated per chunk; does not change the result
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const CraftConfig& c);
CraftConfig craft_config_from_json(const nlohmann::json& j);

struct AlignmentTrace {
  std::vector<double> loss;        // steps + 1 entries of the chosen restart
  std::vector<double> key_cosine;  // signed cosine per key at the returned deltas
  int restart = 0;
  std::vector<double> restart_loss;  // returned loss of every restart
};

nlohmann::json to_json(const AlignmentTrace& t);

class CraftingFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-key terms of the mean (1 - cosine) objective between key gradients and
/// summed poison gradients.
struct AlignmentTerms {
  double loss = 0.0;
  std::vector<double> cosine;
  /// d loss / d poison_sum[i]; zero for keys whose sum vanishes.
  std::vector<Eigen::VectorXd> direction;
};

/// A key with an empty (zero-norm) poison sum contributes 1. Throws
/// std::invalid_argument for a zero-norm key gradient or mismatched sizes.
AlignmentTerms alignment_terms(const std::vector<Eigen::VectorXd>& key_grads,
                               const std::vector<Eigen::VectorXd>& poison_sums);
double alignment_loss(const std::vector<Eigen::VectorXd>& key_grads, const std::vector<Eigen::VectorXd>& poison_sums);

struct CraftResult {
  PerturbationSet perturbations;
  AlignmentTrace trace;
  std::vector<std::string> warnings;
};

using CraftProgress = std::function<void(int restart, int step, double loss)>;

/// Signed-Adam minimisation of the alignment loss over bounded waveform deltas
/// on a frozen surrogate. Deltas stay feasible after every step:
/// |delta| <= clip_bound and x + delta in [-1, 1].
CraftResult craft(const ModelParams& surrogate, const LabeledDataset& ds, const PoisonPlan& plan, const KeySet& keys,
                  const CraftConfig& cfg, const CraftProgress& progress = {});

}  // namespace taggant
