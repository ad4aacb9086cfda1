#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "taggant/audio.hpp"
#include "taggant/dsp.hpp"
#include "taggant/network.hpp"
#include "taggant/oracle.hpp"

namespace taggant {

/// Affine standardisation applied to log-mel features.
struct FeatureNorm {
  double mean = 0.0;
  double std = 1.0;
  bool operator==(const FeatureNorm&) const = default;
};

/// Differentiable waveform -> standardised log-mel front end.
class FeatureExtractor {
 public:
  static constexpr double kMelFloor = 1e-3;

  FeatureExtractor(const SpectroConfig& cfg, FeatureNorm norm);

  struct Trace {
    Eigen::MatrixXcd spectrum;
    Eigen::MatrixXd magnitude;
    Eigen::MatrixXd mel;
    Eigen::Index length = 0;
  };

  Eigen::MatrixXd operator()(const Eigen::Ref<const Eigen::VectorXd>& x, Trace* trace = nullptr) const;
  /// dL/dx given dL/dfeatures for the waveform recorded in `trace`.
  Eigen::VectorXd backward(const Trace& trace, const Eigen::MatrixXd& dfeatures) const;

  const SpectroConfig& config() const { return cfg_; }
  FeatureNorm norm() const { return norm_; }

 private:
  SpectroConfig cfg_;
  FeatureNorm norm_;
  Eigen::MatrixXd filterbank_;
};

/// Mean/std of raw log-mel values over `clips`.
FeatureNorm estimate_feature_norm(const std::vector<Eigen::VectorXd>& clips, const SpectroConfig& cfg);

/// Flat parameter vector plus everything needed to interpret it.
struct ModelParams {
  ArchSpec arch;
  SpectroConfig spectro;
  FeatureNorm norm;
  Eigen::VectorXd values;

  Eigen::Index size() const { return values.size(); }
  void validate() const;
  FeatureExtractor extractor() const { return FeatureExtractor(spectro, norm); }
};

/// He-uniform weights, zero biases.
ModelParams init_params(const ArchSpec& arch, const SpectroConfig& spectro, FeatureNorm norm, std::uint64_t seed);

/// Architecture matching a spectro config and clip length.
ArchSpec arch_for(const SpectroConfig& spectro, Eigen::Index clip_samples, int num_classes);

Eigen::VectorXd logits(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXd logits(const ModelParams& params, const AudioClip& clip);

double loss(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x, int label);

Eigen::VectorXd one_hot(int label, int num_classes);

struct SampleGradients {
  double loss = 0.0;
  Eigen::VectorXd params;    // dL/dtheta in layout order
  Eigen::VectorXd waveform;  // dL/dx (empty unless requested)
};

SampleGradients sample_gradients(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x,
                                 const Eigen::VectorXd& target, bool want_waveform);

/// Cross-entropy gradient with respect to every trainable parameter.
Eigen::VectorXd per_sample_gradient(const ModelParams& params, const AudioClip& clip, int label);
Eigen::VectorXd per_sample_gradient(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x, int label);

/// dL/dx for a hard label.
Eigen::VectorXd waveform_gradient(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x, int label);

/// d/dx [ direction . dL/dtheta (x) ], computed exactly by forward-mode
/// differentiation of the reverse pass along `direction`.
Eigen::VectorXd mixed_waveform_gradient(const ModelParams& params, const Eigen::Ref<const Eigen::VectorXd>& x,
                                        int label, const Eigen::VectorXd& direction);

/// Indices of the k largest logits, descending; ties go to the lower class index.
std::vector<int> topk_indices(const Eigen::VectorXd& logits, int k);
std::vector<int> predict_topk(const ModelParams& params, const AudioClip& clip, int k);

/// TopKOracle facade over a local checkpoint; exposes rankings only.
class ModelOracle final : public TopKOracle {
 public:
  explicit ModelOracle(ModelParams params) : params_(std::move(params)) {}
  int num_classes() const override { return params_.arch.num_classes; }
  std::vector<int> topk(const AudioClip& clip, int k) const override { return predict_topk(params_, clip, k); }

 private:
  ModelParams params_;
};

struct Checkpoint {
  ModelParams params;
  nlohmann::json train_config;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const nlohmann::json& train_config = nlohmann::json::object());
/// Throws if the stored architecture differs from `expected` when one is given.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ArchSpec>& expected = std::nullopt);

}  // namespace taggant
