#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "taggant/crafter.hpp"
#include "taggant/dataset.hpp"
#include "taggant/desk_data.hpp"
#include "taggant/keygen.hpp"
#include "taggant/model.hpp"
#include "taggant/train.hpp"
#include "taggant/verifier.hpp"

namespace taggant {

using Log = std::function<void(std::string_view)>;

/// Environment variable naming the default output root of the CLI.
inline constexpr const char* kOutputRootEnv = "TAGGANT_OUT";

/// Key-synthesis loudness: 95th-percentile mel level over up to `max_clips`
/// training clips of `ds`.
double dataset_mel_peak(const LabeledDataset& ds, const SpectroConfig& spectro, std::size_t max_clips = 200);

// keygen ---------------------------------------------------------------------

struct KeygenOptions {
  KeyGenConfig config;
  std::filesystem::path out_dir;
  bool force = false;
  /// Clean dataset used to set config.mel_peak; without one config.mel_peak is used as given.
  std::optional<std::filesystem::path> reference_manifest;
  IngestOptions ingest;
};

KeySet cmd_keygen(const KeygenOptions& opts, const Log& log = {});

// protect --------------------------------------------------------------------

struct SnrRow {
  std::string id;
  std::size_t key = 0;
  int label = 0;
  double snr_db = 0.0;
  double max_abs_delta = 0.0;
};

struct ProtectOptions {
  std::filesystem::path manifest;
  IngestOptions ingest;
  std::filesystem::path keys_dir;
  double epsilon = 0.01;
  std::uint64_t plan_seed = 0;
  CraftConfig craft;
  /// Used to train a surrogate when no checkpoint is supplied.
  TrainConfig surrogate_train;
  std::optional<std::filesystem::path> surrogate_checkpoint;
  std::filesystem::path out_dir;
  bool force = false;
};

struct ProtectResult {
  PoisonPlan plan;
  CraftResult craft;
  std::vector<SnrRow> snr;
  LabeledDataset protected_dataset;
};

/// Per poisoned id: SNR of the perturbed clip and its largest |delta|.
std::vector<SnrRow> snr_summary(const LabeledDataset& clean, const PoisonPlan& plan, const PerturbationSet& perts);

/// In-memory protect: select, craft, apply.
ProtectResult protect(const LabeledDataset& ds, const KeySet& keys, const ModelParams& surrogate, double epsilon,
                      std::uint64_t plan_seed, const CraftConfig& craft_cfg, const Log& log = {});

/// Writes <out>/dataset (manifest + WAVs, the shareable part), <out>/perturbations,
/// <out>/snr.tsv, <out>/alignment.json and, when trained here, <out>/surrogate.ckpt.
/// The output directory is removed again if anything fails.
ProtectResult cmd_protect(const ProtectOptions& opts, const Log& log = {});

// train ----------------------------------------------------------------------

struct TrainOptions {
  std::filesystem::path manifest;
  IngestOptions ingest;
  TrainConfig config;
  std::filesystem::path checkpoint;
};

TrainResult cmd_train(const TrainOptions& opts, const Log& log = {});

// verify ---------------------------------------------------------------------

class PredictionLogError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lines "<key id><whitespace><class> <class> ...", best first. Blank lines and
/// lines starting with '#' are skipped.
std::map<std::string, std::vector<int>> read_prediction_log(const std::filesystem::path& path, int num_classes);

struct VerifyOptions {
  std::filesystem::path keys_dir;
  /// One run per checkpoint and per prediction log; their p-values are combined.
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::filesystem::path> prediction_logs;
  int k = 10;
  double alpha = 0.05;
  std::optional<int> k_max;
  std::optional<std::filesystem::path> report;
};

struct VerifyOutcome {
  std::vector<std::string> sources;
  std::vector<VerificationReport> runs;
  Decision combined;

  nlohmann::json to_json() const;
};

VerifyOutcome cmd_verify(const VerifyOptions& opts, const Log& log = {});

// experiment -----------------------------------------------------------------

struct GridCell {
  int d = 128;
  KeyDistribution distribution = KeyDistribution::uniform;
  Interpolation interpolation = Interpolation::bilinear;

  std::string label() const;
};

struct ExperimentConfig {
  /// Clean dataset; the synthetic desk set is generated when absent.
  std::optional<std::filesystem::path> manifest;
  IngestOptions ingest;
  DeskDataConfig desk;
  std::vector<GridCell> grid{GridCell{}};
  int num_keys = 10;
  int gl_iterations = 60;
  double epsilon = 0.01;
  CraftConfig craft;
  TrainConfig train;
  int repetitions = 3;
  double alpha = 0.05;
  int k = 10;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  bool save_models = false;

  void validate() const;
  nlohmann::json to_json() const;
  /// Content hash of to_json(), carried by every table row.
  std::string hash() const;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

/// d in {8, 16, 32, 64, 128} x both distributions x both interpolations.
std::vector<GridCell> full_grid();

struct RunRow {
  std::size_t cell = 0;
  bool poisoned = false;
  int repetition = 0;
  std::uint64_t seed = 0;
  double validation_accuracy = 0.0;
  std::vector<int> t_k;
  std::vector<double> p_k;
  Verdict verdict = Verdict::not_detected;
};

struct CellResult {
  GridCell cell;
  std::string status = "ok";  // error message when the cell failed
  KeySet keys;
  PoisonPlan plan;
  PerturbationSet perturbations;
  AlignmentTrace trace;
  std::vector<SnrRow> snr;
  double combined_pvalue_poisoned = 1.0;
  double combined_pvalue_benign = 1.0;
  std::optional<double> fnr;
  std::optional<double> fpr;
  double poisoned_accuracy = 0.0;
  double benign_accuracy = 0.0;
};

struct ExperimentResult {
  std::string config_hash;
  double surrogate_accuracy = 0.0;
  ModelParams surrogate;
  int k_max = 10;
  std::vector<CellResult> cells;
  std::vector<RunRow> runs;
};

/// Surrogate and benign models are trained once and shared by every cell.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const LabeledDataset& ds, const Log& log = {});

/// runs.tsv, summary.tsv, curves.tsv and validation.tsv under out_dir.
void write_experiment_tables(const ExperimentResult& result, const ExperimentConfig& cfg,
                             const std::filesystem::path& out_dir);

ExperimentResult cmd_experiment(const ExperimentConfig& cfg, const Log& log = {});

}  // namespace taggant
