#include <doctest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "taggant/keygen.hpp"

using namespace taggant;

TEST_CASE("key matrices") {
  Rng a(1), b(1);
  const Eigen::MatrixXd bern = sample_key_matrix(16, KeyDistribution::bernoulli, a);
  CHECK(((bern.array() == 0.0) || (bern.array() == 1.0)).all());
  CHECK(sample_key_matrix(16, KeyDistribution::bernoulli, b) == bern);
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng r(s);
    const Eigen::MatrixXd u = sample_key_matrix(128, KeyDistribution::uniform, r);
    CHECK(u.minCoeff() >= 0.0);
    CHECK(u.maxCoeff() <= 1.0);
    CHECK(std::abs(u.mean() - 0.5) <= 0.02);
  }
  CHECK_THROWS_AS(sample_key_matrix(0, KeyDistribution::uniform, a), std::invalid_argument);
}

TEST_CASE("key labels") {
  Rng rng(2), again(2);
  const auto labels = assign_key_labels(10, 35, rng);
  for (int l : labels) CHECK((l >= 0 && l < 35));
  CHECK(assign_key_labels(10, 35, again) == labels);
  Rng big(3);
  const auto many = assign_key_labels(10000, 10, big);
  std::vector<int> count(10, 0);
  for (int l : many) ++count[std::size_t(l)];
  for (int c : count) CHECK(std::abs(c / 10000.0 - 0.1) <= 0.02);
  CHECK_THROWS_AS(assign_key_labels(0, 10, big), std::invalid_argument);
  CHECK_THROWS_AS(assign_key_labels(3, 1, big), std::invalid_argument);
}

TEST_CASE("key synthesis") {
  KeyGenConfig cfg = fixtures::tiny_keygen();
  cfg.spectro.n_mels = 64;
  cfg.clip_samples = 16000;
  cfg.gl_iterations = 30;
  cfg.mel_peak = 2.0;

  CHECK(synthesize_key(Eigen::MatrixXd::Zero(8, 8), cfg, 1).samples().cwiseAbs().maxCoeff() == 0.0f);
  CHECK_THROWS_AS(synthesize_key(-Eigen::MatrixXd::Ones(4, 4), cfg, 1), std::invalid_argument);

  SUBCASE("blockwise structure survives the round trip") {
    cfg.interpolation = Interpolation::nearest;
    Rng rng(4);
    const Eigen::MatrixXd m = sample_key_matrix(8, KeyDistribution::bernoulli, rng);
    const AudioClip clip = synthesize_key(m, cfg, 5);
    CHECK(clip.size() == 16000);
    const Eigen::MatrixXd mel = mel_spectrogram(clip, cfg.spectro).values;
    // Assign each mel cell to the source block it was resized from.
    const auto [rows, cols] = cfg.target_shape();
    const Eigen::MatrixXd block_of = resize_matrix(
        Eigen::Matrix<double, 8, 8>(Eigen::VectorXd::LinSpaced(64, 0, 63).reshaped(8, 8)), rows, cols, Interpolation::nearest);
    std::vector<double> sum(64, 0.0), sq(64, 0.0), n(64, 0.0);
    for (Eigen::Index r = 0; r < mel.rows(); ++r)
      for (Eigen::Index c = 0; c < mel.cols(); ++c) {
        const auto b = std::size_t(block_of(r, c));
        sum[b] += mel(r, c);
        sq[b] += mel(r, c) * mel(r, c);
        n[b] += 1.0;
      }
    double within = 0.0, grand = mel.mean(), between = 0.0;
    for (std::size_t b = 0; b < 64; ++b) {
      const double mu = sum[b] / n[b];
      within += sq[b] - n[b] * mu * mu;
      between += n[b] * (mu - grand) * (mu - grand);
    }
    CHECK(within <= 0.1 * between);
  }
}

TEST_CASE("key sets") {
  const KeyGenConfig cfg = fixtures::tiny_keygen(10);
  const KeySet ks = generate_keyset(cfg);
  REQUIRE(ks.size() == 10);
  for (const Key& k : ks.keys) {
    CHECK((k.label >= 0 && k.label < cfg.num_classes));
    CHECK(k.clip.size() == cfg.clip_samples);
    CHECK(k.clip.samples().cwiseAbs().maxCoeff() <= 1.0f);
  }
  const KeySet again = generate_keyset(cfg);
  for (std::size_t i = 0; i < ks.size(); ++i) {
    CHECK(content_hash(again.keys[i].clip) == content_hash(ks.keys[i].clip));
    CHECK(again.keys[i].source == ks.keys[i].source);
  }
  // Keys are mutually dissimilar in the mel domain.
  for (std::size_t i = 0; i < ks.size(); ++i)
    for (std::size_t j = i + 1; j < ks.size(); ++j) {
      const Eigen::MatrixXd a = mel_spectrogram(ks.keys[i].clip, cfg.spectro).values;
      const Eigen::MatrixXd b = mel_spectrogram(ks.keys[j].clip, cfg.spectro).values;
      CHECK(a.cwiseProduct(b).sum() / (a.norm() * b.norm()) < 0.9);
    }

  for (auto dist : {KeyDistribution::bernoulli, KeyDistribution::uniform})
    for (auto interp : {Interpolation::nearest, Interpolation::bilinear}) {
      KeyGenConfig c = cfg;
      c.num_keys = 3;
      c.distribution = dist;
      c.interpolation = interp;
      const KeySet s = generate_keyset(c);
      CHECK(s.size() == 3);
      CHECK(content_hash(s.keys[0].clip) != content_hash(s.keys[1].clip));
    }
}

TEST_CASE("key set persistence") {
  fixtures::TempDir dir("keys");
  const KeySet ks = generate_keyset(fixtures::tiny_keygen(3));
  save_keyset(ks, dir.path / "k");
  CHECK(std::filesystem::exists(dir.path / "k" / (key_id(2) + ".wav")));
  CHECK_THROWS(save_keyset(ks, dir.path / "k"));
  save_keyset(ks, dir.path / "k", true);
  const KeySet back = load_keyset(dir.path / "k");
  CHECK(back.labels() == ks.labels());
  CHECK(back.config == ks.config);
  for (std::size_t i = 0; i < ks.size(); ++i) {
    CHECK(back.keys[i].clip.samples() == ks.keys[i].clip.samples());
    CHECK(back.keys[i].source == ks.keys[i].source);
  }
}
