#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "taggant/dataset.hpp"
#include "taggant/model.hpp"
#include "taggant/rng.hpp"

namespace taggant {

struct TrainConfig {
  int epochs = 12;
  int batch_size = 32;
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool cosine_schedule = true;
  double mixup_alpha = 0.2;  // 0 disables mixup
  int time_mask = 8;         // frames
  int freq_mask = 6;         // mel bands
  std::uint64_t seed = 0;
  SpectroConfig spectro = desk_spectro();
  std::vector<int> channels{8, 16, 32, 32};
  int hidden = 128;

  /// 64 mel bands over the default 25 ms / 10 ms STFT.
  static SpectroConfig desk_spectro() {
    SpectroConfig s;
    s.n_mels = 64;
    return s;
  }
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

class TrainingFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  ModelParams params;
  double validation_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

using TrainProgress = std::function<void(int epoch, double mean_loss)>;

/// Adam on soft-label cross-entropy with waveform mixup and time/frequency
/// masking. Deterministic for a given seed.
TrainResult train(const LabeledDataset& ds, const TrainConfig& cfg, const TrainProgress& progress = {});

/// Fraction of `split` items whose top-1 prediction equals the label.
double accuracy(const ModelParams& params, const LabeledDataset& ds, Split split);

struct Batch {
  std::vector<Eigen::VectorXd> inputs;
  std::vector<Eigen::VectorXd> targets;  // probability vectors
};

/// Mixup with a single lambda ~ Beta(alpha, alpha) per batch and partners
/// chosen by an in-batch permutation. `lambda` overrides the draw.
Batch mixup_batch(const Batch& batch, double alpha, Rng& rng, std::optional<double> lambda = std::nullopt);

/// Zeroes one random stripe of `time_width` frames and one of `freq_width`
/// bands.
void spec_masks(Eigen::MatrixXd& features, int time_width, int freq_width, Rng& rng);
MelMatrix spec_masks(const MelMatrix& features, int time_width, int freq_width, Rng& rng);

}  // namespace taggant
