#include "taggant/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "taggant/json_io.hpp"
#include "taggant/rng.hpp"

namespace taggant {

namespace fs = std::filesystem;

std::string to_string(Split s) { return s == Split::train ? "train" : "validation"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "val" || s == "valid") return Split::validation;
  throw std::invalid_argument("unknown split '" + s + "'");
}

LabeledDataset::LabeledDataset(std::vector<DatasetItem> items, int num_classes)
    : items_(std::move(items)), num_classes_(num_classes) {
  if (num_classes_ < 2) throw std::invalid_argument("LabeledDataset: need at least 2 classes");
  std::sort(items_.begin(), items_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  bool has_train = false, has_val = false;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& it = items_[i];
    if (it.label < 0 || it.label >= num_classes_)
      throw std::invalid_argument("LabeledDataset: item '" + it.id + "' has label " + std::to_string(it.label) +
                                  " outside [0, " + std::to_string(num_classes_) + ")");
    if (it.clip.empty()) throw std::invalid_argument("LabeledDataset: item '" + it.id + "' has no audio");
    if (!by_id_.emplace(it.id, i).second) throw std::invalid_argument("LabeledDataset: duplicate id '" + it.id + "'");
    has_train |= it.split == Split::train;
    has_val |= it.split == Split::validation;
  }
  if (!has_train || !has_val) throw std::invalid_argument("LabeledDataset: need at least one item per split");
}

std::vector<std::size_t> LabeledDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items_.size(); ++i)
    if (items_[i].split == split) out.push_back(i);
  return out;
}

std::size_t LabeledDataset::index_of(const std::string& id) const {
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) throw std::out_of_range("unknown item id '" + id + "'");
  return it->second;
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

IngestResult ingest(const fs::path& manifest, const IngestOptions& opts) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(manifest.string() + ": empty manifest");
  const std::vector<std::string> header = split_fields(line);
  const auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error(manifest.string() + ": missing column '" + name + "'");
    return std::size_t(it - header.begin());
  };
  const std::size_t c_id = column("id"), c_path = column("path"), c_label = column("label"), c_split = column("split");
  const fs::path base = manifest.parent_path();

  std::vector<DatasetItem> items;
  std::vector<IngestIssue> issues;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++rows;
    const auto fields = split_fields(line);
    IngestIssue issue{rows, "", ""};
    try {
      if (fields.size() != header.size())
        throw std::runtime_error("expected " + std::to_string(header.size()) + " fields, got " +
                                 std::to_string(fields.size()));
      issue.id = fields[c_id];
      if (issue.id.empty()) throw std::runtime_error("empty id");
      std::size_t used = 0;
      const int label = std::stoi(fields[c_label], &used);
      if (used != fields[c_label].size()) throw std::runtime_error("label '" + fields[c_label] + "' is not an integer");
      if (label < 0 || label >= opts.num_classes)
        throw std::runtime_error("label " + std::to_string(label) + " outside [0, " + std::to_string(opts.num_classes) +
                                 ")");
      const Split split = split_from_string(fields[c_split]);
      WavData wav = read_wav(base / fields[c_path]);
      Eigen::VectorXf samples = resample(wav.samples.cwiseMax(-1.0f).cwiseMin(1.0f), wav.sample_rate, opts.sample_rate);
      if (samples.size() == 0) throw std::runtime_error("no samples");
      AudioClip clip = AudioClip(std::move(samples), opts.sample_rate).fitted(opts.clip_samples);
      items.push_back(DatasetItem{issue.id, std::move(clip), label, split});
    } catch (const std::exception& e) {
      issue.message = e.what();
      issues.push_back(std::move(issue));
    }
  }
  const auto describe = [&] {
    std::string msg = manifest.string() + ": " + std::to_string(issues.size()) + " of " + std::to_string(rows) +
                      " rows failed";
    for (const auto& i : issues) msg += "\n  row " + std::to_string(i.row) + " (" + i.id + "): " + i.message;
    return msg;
  };
  if (rows == 0) throw IngestError(manifest.string() + ": no data rows", issues);
  if (double(issues.size()) > opts.max_failure_fraction * double(rows)) throw IngestError(describe(), issues);
  try {
    return IngestResult{LabeledDataset(std::move(items), opts.num_classes), std::move(issues)};
  } catch (const std::invalid_argument& e) {
    throw IngestError(manifest.string() + ": " + e.what(), issues);
  }
}

std::size_t PoisonPlan::total() const {
  std::size_t n = 0;
  for (const auto& p : partition) n += p.size();
  return n;
}

PoisonPlan select_poison_set(const LabeledDataset& ds, const std::vector<int>& key_labels, double epsilon,
                             std::uint64_t seed) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("select_poison_set: epsilon must be in (0, 1)");
  if (key_labels.empty()) throw std::invalid_argument("select_poison_set: no keys");

  std::map<int, std::vector<std::size_t>> keys_by_label;
  for (std::size_t k = 0; k < key_labels.size(); ++k) keys_by_label[key_labels[k]].push_back(k);

  const std::vector<std::size_t> train = ds.indices(Split::train);
  std::vector<std::size_t> candidates;
  std::set<int> seen;
  for (std::size_t i : train) {
    if (keys_by_label.count(ds[i].label)) {
      candidates.push_back(i);
      seen.insert(ds[i].label);
    }
  }
  for (const auto& [label, _] : keys_by_label)
    if (!seen.count(label))
      throw UnsatisfiablePlan("no training item carries key label " + std::to_string(label));

  PoisonPlan plan;
  plan.epsilon = epsilon;
  plan.seed = seed;
  plan.partition.resize(key_labels.size());
  const auto budget = std::size_t(std::llround(epsilon * double(ds.size())));
  if (budget > candidates.size())
    throw UnsatisfiablePlan("poison budget " + std::to_string(budget) + " exceeds the " +
                            std::to_string(candidates.size()) + " training items matching key labels");
  if (budget < key_labels.size())
    plan.warnings.push_back("poison budget " + std::to_string(budget) + " is smaller than K = " +
                            std::to_string(key_labels.size()) + "; some keys receive no poisons");

  Rng rng(derive_seed(seed, "poison-selection"));
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::map<int, std::size_t> next;
  for (std::size_t n = 0; n < budget; ++n) {
    const auto& item = ds[candidates[n]];
    const auto& owners = keys_by_label.at(item.label);
    plan.partition[owners[next[item.label]++ % owners.size()]].push_back(item.id);
  }
  for (std::size_t k = 0; k < plan.partition.size(); ++k)
    if (plan.partition[k].empty()) plan.warnings.push_back("key " + std::to_string(k) + " has no poison samples");
  return plan;
}

PoisonPlan select_poison_set(const LabeledDataset& ds, const KeySet& keys, double epsilon, std::uint64_t seed) {
  return select_poison_set(ds, keys.labels(), epsilon, seed);
}

LabeledDataset apply_perturbations(const LabeledDataset& ds, const PerturbationSet& perts) {
  for (const auto& [id, delta] : perts.deltas) {
    if (!ds.contains(id)) throw std::invalid_argument("apply_perturbations: delta for unknown id '" + id + "'");
    if (delta.size() != ds[ds.index_of(id)].clip.size())
      throw std::invalid_argument("apply_perturbations: delta length mismatch for '" + id + "'");
  }
  std::vector<DatasetItem> items = ds.items();
  for (auto& item : items) {
    const auto it = perts.deltas.find(item.id);
    if (it == perts.deltas.end()) continue;
    item.clip = AudioClip::clamped(item.clip.as_double() + it->second, item.clip.sample_rate());
  }
  return LabeledDataset(std::move(items), ds.num_classes());
}

namespace {

std::string safe_name(std::size_t index, const std::string& id) {
  std::string s = id;
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  char prefix[16];
  std::snprintf(prefix, sizeof prefix, "%06zu_", index);
  return prefix + s;
}

}  // namespace

void write_manifest(const fs::path& path, const std::vector<std::string>& ids, const std::vector<std::string>& paths,
                    const std::vector<int>& labels, const std::vector<Split>& splits) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "id,path,label,split\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].find(',') != std::string::npos || paths[i].find(',') != std::string::npos)
      throw std::invalid_argument("manifest fields may not contain ','");
    out << ids[i] << ',' << paths[i] << ',' << labels[i] << ',' << to_string(splits[i]) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

fs::path export_protected(const LabeledDataset& ds, const fs::path& out_dir) {
  fs::create_directories(out_dir / "audio");
  std::vector<std::string> ids, paths;
  std::vector<int> labels;
  std::vector<Split> splits;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& item = ds[i];
    const std::string rel = "audio/" + safe_name(i, item.id) + ".wav";
    write_clip(out_dir / rel, item.clip);
    ids.push_back(item.id);
    paths.push_back(rel);
    labels.push_back(item.label);
    splits.push_back(item.split);
  }
  const fs::path manifest = out_dir / "manifest.csv";
  write_manifest(manifest, ids, paths, labels, splits);
  return manifest;
}

void save_perturbations(const PerturbationSet& perts, const PoisonPlan& plan, int sample_rate, const fs::path& dir) {
  fs::create_directories(dir);
  json files = json::object();
  std::size_t i = 0;
  for (const auto& [id, delta] : perts.deltas) {
    const std::string name = "delta_" + safe_name(i++, id) + ".wav";
    const Eigen::VectorXf f = delta.cast<float>();
    write_wav(dir / name, std::span<const float>(f.data(), std::size_t(f.size())), sample_rate, WavEncoding::float32);
    files[id] = name;
  }
  json meta{{"format", "taggant-perturbations"},
            {"version", 1},
            {"bound", perts.bound},
            {"epsilon", plan.epsilon},
            {"seed", plan.seed},
            {"partition", plan.partition},
            {"warnings", plan.warnings},
            {"files", files}};
  write_json(dir / "perturbations.json", meta);
}

std::pair<PerturbationSet, PoisonPlan> load_perturbations(const fs::path& dir) {
  const json meta = read_json(dir / "perturbations.json");
  if (meta.value("format", "") != "taggant-perturbations") throw std::runtime_error(dir.string() + ": not a perturbation set");
  PerturbationSet perts;
  perts.bound = meta.at("bound").get<double>();
  for (const auto& [id, name] : meta.at("files").items()) {
    const WavData w = read_wav(dir / name.get<std::string>());
    perts.deltas[id] = w.samples.cast<double>();
  }
  PoisonPlan plan;
  plan.epsilon = meta.at("epsilon").get<double>();
  plan.seed = meta.at("seed").get<std::uint64_t>();
  plan.partition = meta.at("partition").get<std::vector<std::vector<std::string>>>();
  plan.warnings = meta.at("warnings").get<std::vector<std::string>>();
  return {std::move(perts), std::move(plan)};
}

}  // namespace taggant
