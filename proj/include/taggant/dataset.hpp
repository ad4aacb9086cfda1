#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "taggant/audio.hpp"
#include "taggant/keygen.hpp"

namespace taggant {

enum class Split { train, validation };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct DatasetItem {
  std::string id;
  AudioClip clip;
  int label = 0;
  Split split = Split::train;
};

/// Items ordered by id; immutable once built.
class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(std::vector<DatasetItem> items, int num_classes);

  const std::vector<DatasetItem>& items() const { return items_; }
  const DatasetItem& operator[](std::size_t i) const { return items_[i]; }
  std::size_t size() const { return items_.size(); }
  int num_classes() const { return num_classes_; }
  int sample_rate() const { return items_.empty() ? 0 : items_.front().clip.sample_rate(); }

  std::vector<std::size_t> indices(Split split) const;
  /// Throws std::out_of_range for unknown ids.
  std::size_t index_of(const std::string& id) const;
  bool contains(const std::string& id) const { return by_id_.count(id) != 0; }

 private:
  std::vector<DatasetItem> items_;
  int num_classes_ = 0;
  std::unordered_map<std::string, std::size_t> by_id_;
};

struct IngestOptions {
  int num_classes = 10;
  int sample_rate = 16000;
  Eigen::Index clip_samples = 16000;
  double max_failure_fraction = 0.01;
};

struct IngestIssue {
  std::size_t row = 0;  // 1-based data row, header excluded
  std::string id;
  std::string message;
};

struct IngestResult {
  LabeledDataset dataset;
  std::vector<IngestIssue> issues;
};

class IngestError : public std::runtime_error {
 public:
  IngestError(const std::string& what, std::vector<IngestIssue> issues)
      : std::runtime_error(what), issues_(std::move(issues)) {}
  const std::vector<IngestIssue>& issues() const { return issues_; }

 private:
  std::vector<IngestIssue> issues_;
};

/// Reads an `id,path,label,split` manifest (paths relative to the manifest).
/// Bad rows are reported; more than max_failure_fraction of them aborts.
IngestResult ingest(const std::filesystem::path& manifest, const IngestOptions& opts);

/// Clean-label poison selection: partition[i] holds the ids crafted toward key i.
struct PoisonPlan {
  double epsilon = 0.01;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::string>> partition;
  std::vector<std::string> warnings;

  std::size_t total() const;
};

class UnsatisfiablePlan : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

PoisonPlan select_poison_set(const LabeledDataset& ds, const std::vector<int>& key_labels, double epsilon,
                             std::uint64_t seed);
PoisonPlan select_poison_set(const LabeledDataset& ds, const KeySet& keys, double epsilon, std::uint64_t seed);

struct PerturbationSet {
  std::map<std::string, Eigen::VectorXd> deltas;
  double bound = 0.05;
};

/// x + delta clamped to [-1, 1] for every perturbed id; all other items untouched.
LabeledDataset apply_perturbations(const LabeledDataset& ds, const PerturbationSet& perts);

/// Writes 16-bit WAVs and manifest.csv; returns the manifest path.
std::filesystem::path export_protected(const LabeledDataset& ds, const std::filesystem::path& out_dir);

void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& ids,
                    const std::vector<std::string>& paths, const std::vector<int>& labels,
                    const std::vector<Split>& splits);

/// Per-id float32 delta WAVs plus perturbations.json holding bound and plan.
void save_perturbations(const PerturbationSet& perts, const PoisonPlan& plan, int sample_rate,
                        const std::filesystem::path& dir);
std::pair<PerturbationSet, PoisonPlan> load_perturbations(const std::filesystem::path& dir);

}  // namespace taggant
