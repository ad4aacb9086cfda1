#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "taggant/audio.hpp"
#include "taggant/dsp.hpp"
#include "taggant/rng.hpp"

namespace taggant {

enum class KeyDistribution { bernoulli, uniform };

std::string to_string(KeyDistribution d);
KeyDistribution key_distribution_from_string(const std::string& s);

struct KeyGenConfig {
  int d = 128;
  KeyDistribution distribution = KeyDistribution::uniform;
  Interpolation interpolation = Interpolation::bilinear;
  int num_keys = 10;
  int num_classes = 10;
  std::uint64_t seed = 0;
  SpectroConfig spectro;
  int gl_iterations = 60;
  /// Waveform length of every key; matches the dataset's fixed clip length.
  Eigen::Index clip_samples = 16000;
  /// Largest mel magnitude of a synthesized key (see reference_mel_level()).
  double mel_peak = 1.0;

  void validate() const;
  /// (n_mels, n_frames) of the model input the keys are resized onto.
  std::pair<Eigen::Index, Eigen::Index> target_shape() const {
    return {spectro.n_mels, spectro.n_frames(clip_samples)};
  }

  bool operator==(const KeyGenConfig&) const = default;
};

struct Key {
  AudioClip clip;
  int label = 0;
  Eigen::MatrixXd source;
};

struct KeySet {
  std::vector<Key> keys;
  KeyGenConfig config;

  std::size_t size() const { return keys.size(); }
  std::vector<int> labels() const;
};

/// i.i.d. d x d draws: Bernoulli(0.5) in {0, 1} or uniform on [0, 1).
Eigen::MatrixXd sample_key_matrix(int d, KeyDistribution distribution, Rng& rng);

/// Treats `m` as a mel spectrogram: resizes it onto the model input grid, maps
/// its maximum to cfg.mel_peak, inverts the filterbank and runs Griffin-Lim.
/// The waveform is trimmed/padded to cfg.clip_samples and snapped to the
/// 16-bit grid so that the persisted key is the key that was crafted against.
AudioClip synthesize_key(const Eigen::MatrixXd& m, const KeyGenConfig& cfg, std::uint64_t phase_seed);

/// K labels drawn uniformly from [0, C) with replacement.
std::vector<int> assign_key_labels(int num_keys, int num_classes, Rng& rng);

KeySet generate_keyset(const KeyGenConfig& cfg);

/// Given percentile of all mel magnitudes over `clips`; used for cfg.mel_peak.
double reference_mel_level(const std::vector<AudioClip>& clips, const SpectroConfig& spectro, double percentile = 95.0);

/// "key_000", "key_001", ...: file stem of key i and its id in prediction logs.
std::string key_id(std::size_t i);

/// Writes key_XXX.wav files and keys.json. Refuses to touch an existing key
/// set unless `overwrite` is set.
void save_keyset(const KeySet& keys, const std::filesystem::path& dir, bool overwrite = false);

/// Loads a key set and checks that the seed regenerates the recorded source
/// matrices (by content hash).
KeySet load_keyset(const std::filesystem::path& dir);

}  // namespace taggant
