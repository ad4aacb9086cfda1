#include "taggant/keygen.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "taggant/json_io.hpp"

namespace taggant {

std::string to_string(KeyDistribution d) { return d == KeyDistribution::bernoulli ? "bernoulli" : "uniform"; }

KeyDistribution key_distribution_from_string(const std::string& s) {
  if (s == "bernoulli") return KeyDistribution::bernoulli;
  if (s == "uniform") return KeyDistribution::uniform;
  throw std::invalid_argument("unknown key distribution '" + s + "'");
}

void KeyGenConfig::validate() const {
  if (d < 1) throw std::invalid_argument("KeyGenConfig: d must be >= 1");
  if (num_keys < 1) throw std::invalid_argument("KeyGenConfig: K must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("KeyGenConfig: C must be >= 2");
  if (gl_iterations < 1) throw std::invalid_argument("KeyGenConfig: gl_iterations must be >= 1");
  if (!(mel_peak >= 0.0)) throw std::invalid_argument("KeyGenConfig: mel_peak must be non-negative");
  spectro.validate();
  if (spectro.n_frames(clip_samples) < 1) throw std::invalid_argument("KeyGenConfig: clip shorter than one STFT window");
}

std::vector<int> KeySet::labels() const {
  std::vector<int> out;
  out.reserve(keys.size());
  for (const auto& k : keys) out.push_back(k.label);
  return out;
}

Eigen::MatrixXd sample_key_matrix(int d, KeyDistribution distribution, Rng& rng) {
  if (d < 1) throw std::invalid_argument("sample_key_matrix: d must be >= 1");
  Eigen::MatrixXd m(d, d);
  if (distribution == KeyDistribution::bernoulli) {
    std::bernoulli_distribution coin(0.5);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = coin(rng) ? 1.0 : 0.0;
  } else {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  }
  return m;
}

AudioClip synthesize_key(const Eigen::MatrixXd& m, const KeyGenConfig& cfg, std::uint64_t phase_seed) {
  cfg.validate();
  if (!m.allFinite() || (m.array() < 0.0).any())
    throw std::invalid_argument("synthesize_key: source matrix must be finite and non-negative");
  const auto [rows, cols] = cfg.target_shape();
  Eigen::MatrixXd mel = resize_matrix(m, rows, cols, cfg.interpolation);
  const double peak = mel.maxCoeff();
  if (peak > 0.0) mel *= cfg.mel_peak / peak;
  const Eigen::MatrixXd linear = mel_to_linear(MelMatrix{mel, cfg.spectro});
  const AudioClip raw = griffin_lim(linear, cfg.spectro, cfg.gl_iterations, phase_seed);
  Eigen::VectorXf samples = raw.fitted(cfg.clip_samples).samples();
  for (Eigen::Index i = 0; i < samples.size(); ++i) samples[i] = quantize_pcm16(samples[i]);
  return AudioClip(std::move(samples), cfg.spectro.sample_rate);
}

std::vector<int> assign_key_labels(int num_keys, int num_classes, Rng& rng) {
  if (num_keys < 1 || num_classes < 2) throw std::invalid_argument("assign_key_labels: need K >= 1 and C >= 2");
  std::uniform_int_distribution<int> pick(0, num_classes - 1);
  std::vector<int> labels(static_cast<std::size_t>(num_keys));
  for (auto& l : labels) l = pick(rng);
  return labels;
}

KeySet generate_keyset(const KeyGenConfig& cfg) {
  cfg.validate();
  KeySet out;
  out.config = cfg;
  Rng label_rng(derive_seed(cfg.seed, "key-labels"));
  const std::vector<int> labels = assign_key_labels(cfg.num_keys, cfg.num_classes, label_rng);
  for (int i = 0; i < cfg.num_keys; ++i) {
    Rng matrix_rng(derive_seed(cfg.seed, "key-matrix", std::uint64_t(i)));
    Key key;
    key.source = sample_key_matrix(cfg.d, cfg.distribution, matrix_rng);
    key.clip = synthesize_key(key.source, cfg, derive_seed(cfg.seed, "key-phase", std::uint64_t(i)));
    key.label = labels[std::size_t(i)];
    out.keys.push_back(std::move(key));
  }
  return out;
}

double reference_mel_level(const std::vector<AudioClip>& clips, const SpectroConfig& spectro, double percentile) {
  if (clips.empty()) throw std::invalid_argument("reference_mel_level: no clips");
  if (!(percentile >= 0.0 && percentile <= 100.0)) throw std::invalid_argument("reference_mel_level: bad percentile");
  std::vector<double> values;
  for (const auto& c : clips) {
    const MelMatrix mel = mel_spectrogram(c, spectro);
    values.insert(values.end(), mel.values.data(), mel.values.data() + mel.values.size());
  }
  const auto rank = std::size_t(std::llround(percentile / 100.0 * double(values.size() - 1)));
  std::nth_element(values.begin(), values.begin() + std::ptrdiff_t(rank), values.end());
  return values[rank];
}

std::string key_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "key_%03zu", i);
  return buf;
}

void save_keyset(const KeySet& keys, const std::filesystem::path& dir, bool overwrite) {
  namespace fs = std::filesystem;
  if (fs::exists(dir / "keys.json") && !overwrite)
    throw std::runtime_error("key set already exists at " + dir.string() + " (pass force to overwrite)");
  fs::create_directories(dir);
  json meta;
  meta["format"] = "taggant-keyset";
  meta["version"] = 1;
  meta["config"] = keys.config;
  json entries = json::array();
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const Key& k = keys.keys[i];
    const std::string file = key_id(i) + ".wav";
    write_clip(dir / file, k.clip);
    entries.push_back({{"file", file}, {"label", k.label}, {"source_hash", content_hash(k.source)},
                       {"clip_hash", content_hash(k.clip)}});
  }
  meta["keys"] = entries;
  write_json(dir / "keys.json", meta);
}

KeySet load_keyset(const std::filesystem::path& dir) {
  const json meta = read_json(dir / "keys.json");
  if (meta.value("format", "") != "taggant-keyset") throw std::runtime_error(dir.string() + ": not a key set");
  if (meta.value("version", 0) != 1) throw std::runtime_error(dir.string() + ": unsupported key set version");
  KeySet out;
  out.config = meta.at("config").get<KeyGenConfig>();
  out.config.validate();
  const auto& entries = meta.at("keys");
  if (entries.size() != std::size_t(out.config.num_keys))
    throw std::runtime_error(dir.string() + ": key count does not match config");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Key k;
    k.clip = read_clip(dir / entries[i].at("file").get<std::string>());
    k.label = entries[i].at("label").get<int>();
    if (k.label < 0 || k.label >= out.config.num_classes)
      throw std::runtime_error(dir.string() + ": key label out of range");
    Rng matrix_rng(derive_seed(out.config.seed, "key-matrix", i));
    k.source = sample_key_matrix(out.config.d, out.config.distribution, matrix_rng);
    if (content_hash(k.source) != entries[i].at("source_hash").get<std::string>())
      throw std::runtime_error(dir.string() + ": source matrix of key " + std::to_string(i) +
                               " does not regenerate from the recorded seed");
    out.keys.push_back(std::move(k));
  }
  return out;
}

}  // namespace taggant
