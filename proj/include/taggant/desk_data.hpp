#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "taggant/dataset.hpp"
#include "taggant/rng.hpp"

namespace taggant {

/// Synthetic 10-class keyword-spotting stand-in: tones, chirps, noise bursts,
/// click trains and modulated tones over a noisy background.
struct DeskDataConfig {
  int num_clips = 5000;
  int sample_rate = 16000;
  Eigen::Index clip_samples = 16000;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;

  static constexpr int kNumClasses = 10;
  void validate() const;
};

const std::string& desk_class_name(int label);

AudioClip desk_clip(int label, const DeskDataConfig& cfg, Rng& rng);

/// Balanced classes, ids "<class>_<nnnnn>"; every item's split is fixed by the seed.
LabeledDataset make_desk_dataset(const DeskDataConfig& cfg);

}  // namespace taggant
