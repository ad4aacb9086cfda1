#pragma once

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "taggant/desk_data.hpp"
#include "taggant/keygen.hpp"
#include "taggant/oracle.hpp"
#include "taggant/train.hpp"

namespace fixtures {

using namespace taggant;

// Quarter-second clips keep models small enough for unit tests.
inline DeskDataConfig tiny_desk(int clips = 80, std::uint64_t seed = 3) {
  DeskDataConfig c;
  c.num_clips = clips;
  c.clip_samples = 4000;
  c.validation_fraction = 0.2;
  c.seed = seed;
  return c;
}

inline SpectroConfig tiny_spectro() {
  SpectroConfig s;
  s.n_mels = 24;
  return s;
}

inline TrainConfig tiny_train(int epochs = 2) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 16;
  t.spectro = tiny_spectro();
  t.channels = {4, 8};
  t.hidden = 16;
  t.time_mask = 2;
  t.freq_mask = 2;
  return t;
}

inline KeyGenConfig tiny_keygen(int num_keys = 4, std::uint64_t seed = 5) {
  KeyGenConfig k;
  k.d = 8;
  k.num_keys = num_keys;
  k.num_classes = DeskDataConfig::kNumClasses;
  k.seed = seed;
  k.spectro = tiny_spectro();
  k.gl_iterations = 8;
  k.clip_samples = 4000;
  k.mel_peak = 1.0;
  return k;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("taggant_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

/// k distinct classes uniformly at random per query.
class RandomOracle final : public TopKOracle {
 public:
  RandomOracle(int num_classes, std::uint64_t seed) : c_(num_classes), rng_(seed) {}
  int num_classes() const override { return c_; }
  std::vector<int> topk(const AudioClip&, int k) const override {
    std::vector<int> all(static_cast<std::size_t>(c_));
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng_);
    all.resize(std::size_t(k));
    return all;
  }

 private:
  int c_;
  mutable Rng rng_;
};

/// Answers from a fixed table indexed by query order.
class ScriptedOracle final : public TopKOracle {
 public:
  ScriptedOracle(int num_classes, std::vector<std::vector<int>> answers) : c_(num_classes), answers_(std::move(answers)) {}
  int num_classes() const override { return c_; }
  std::vector<int> topk(const AudioClip&, int k) const override {
    std::vector<int> a = answers_[next_++ % answers_.size()];
    if (int(a.size()) > k) a.resize(std::size_t(k));
    return a;
  }

 private:
  int c_;
  std::vector<std::vector<int>> answers_;
  mutable std::size_t next_ = 0;
};

/// A quarter-second desk clip of a random class, in double precision.
inline Eigen::VectorXd desk_clip_double(Rng& rng) {
  const int label = std::uniform_int_distribution<int>(0, DeskDataConfig::kNumClasses - 1)(rng);
  return desk_clip(label, tiny_desk(), rng).as_double();
}

inline KeySet labelled_keys(const std::vector<int>& labels, int num_classes) {
  KeySet ks;
  ks.config.num_keys = int(labels.size());
  ks.config.num_classes = num_classes;
  for (int l : labels) ks.keys.push_back({AudioClip(Eigen::VectorXf::Zero(400), 16000), l, Eigen::MatrixXd::Zero(1, 1)});
  return ks;
}

}  // namespace fixtures
