#include <doctest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "fixtures.hpp"
#include "taggant/model.hpp"
#include "taggant/pipeline.hpp"

using namespace taggant;

namespace {

ModelParams tiny_model(std::uint64_t seed) {
  const SpectroConfig s = fixtures::tiny_spectro();
  ArchSpec a = arch_for(s, 4000, 10);
  a.channels = {3, 5};
  a.hidden = 12;
  return init_params(a, s, FeatureNorm{-2.0, 1.5}, seed);
}

Eigen::VectorXd clip_for(std::uint64_t seed) {
  Rng rng(seed);
  return fixtures::desk_clip_double(rng);
}

bool close(double a, double b, double rel) { return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST_CASE("architecture layout") {
  const ArchSpec a;
  CHECK(a.parameter_count() == 131242);
  const auto layout = a.layout();
  CHECK(layout.front().name == "conv0.weight");
  CHECK(layout.back().name == "fc2.bias");
  CHECK(layout.back().offset + layout.back().size == a.parameter_count());
  ArchSpec bad = a;
  bad.channels.clear();
  CHECK_THROWS(bad.layout());
}

TEST_CASE("dual numbers carry exact derivatives") {
  const Dual x{0.7, 1.0};
  CHECK(exp(x).d == doctest::Approx(std::exp(0.7)));
  CHECK(log(x).d == doctest::Approx(1.0 / 0.7));
  CHECK(sqrt(x).d == doctest::Approx(0.5 / std::sqrt(0.7)));
  CHECK(nn::silu(x).d == doctest::Approx(nn::silu_grad(0.7)));
  CHECK((x * x / (x + Dual{1.0, 0.0})).d == doctest::Approx((2 * 0.7 * 1.7 - 0.49) / (1.7 * 1.7)));
}

TEST_CASE("soft cross-entropy gradient is softmax minus target") {
  Eigen::VectorXd z(4), t(4), dz;
  z << 1.0, -0.5, 2.0, 0.1;
  t << 0.2, 0.0, 0.8, 0.0;
  const double l = soft_cross_entropy<double>(z, t, dz);
  const Eigen::ArrayXd p = (z.array() - z.maxCoeff()).exp() / (z.array() - z.maxCoeff()).exp().sum();
  CHECK(l == doctest::Approx(-(t.array() * p.log()).sum()));
  CHECK((dz.array() - (p - t.array())).abs().maxCoeff() < 1e-12);
}

TEST_CASE("parameter gradients match central differences") {
  for (std::uint64_t m = 0; m < 3; ++m) {
    ModelParams p = tiny_model(m);
    const Eigen::VectorXd x = clip_for(10 + m);
    const int label = int(m % 10);
    const Eigen::VectorXd g = per_sample_gradient(p, x, label);
    Rng rng(m);
    std::uniform_int_distribution<Eigen::Index> pick(0, p.size() - 1);
    for (int n = 0; n < 20; ++n) {
      const Eigen::Index i = pick(rng);
      const double h = 1e-5, keep = p.values[i];
      p.values[i] = keep + h;
      const double up = loss(p, x, label);
      p.values[i] = keep - h;
      const double down = loss(p, x, label);
      p.values[i] = keep;
      CHECK(close(g[i], (up - down) / (2 * h), 1e-4));
    }
  }
}

TEST_CASE("waveform and mixed gradients match central differences") {
  const ModelParams p = tiny_model(4);
  const Eigen::VectorXd x = clip_for(20);
  const int label = 3;
  const Eigen::VectorXd w = waveform_gradient(p, x, label);
  Rng rng(5);
  std::normal_distribution<double> g;
  Eigen::VectorXd dir(p.size());
  for (auto& v : dir) v = g(rng);
  const Eigen::VectorXd mixed = mixed_waveform_gradient(p, x, label, dir);
  for (Eigen::Index i : {Eigen::Index(5), Eigen::Index(1200), Eigen::Index(2500), Eigen::Index(3999)}) {
    const double h = 1e-5;
    Eigen::VectorXd up = x, down = x;
    up[i] += h;
    down[i] -= h;
    CHECK(close(w[i], (loss(p, up, label) - loss(p, down, label)) / (2 * h), 1e-5));
    const double fd = dir.dot(per_sample_gradient(p, up, label) - per_sample_gradient(p, down, label)) / (2 * h);
    CHECK(close(mixed[i], fd, 1e-5));
  }
  const SampleGradients both = sample_gradients(p, x, one_hot(label, 10), true);
  CHECK((both.params - per_sample_gradient(p, x, label)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((both.waveform - w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("top-k ranking") {
  Eigen::VectorXd z(5);
  z << 0.5, 2.0, 0.5, -1.0, 2.0;
  CHECK(topk_indices(z, 3) == std::vector<int>{1, 4, 0});
  CHECK(topk_indices(z, 5) == std::vector<int>{1, 4, 0, 2, 3});
  CHECK_THROWS(topk_indices(z, 6));
  const ModelOracle oracle(tiny_model(1));
  const AudioClip clip = AudioClip::clamped(clip_for(3), 16000);
  CHECK(oracle.topk(clip, 4) == predict_topk(tiny_model(1), clip, 4));
  CHECK(oracle.num_classes() == 10);
}

TEST_CASE("checkpoints") {
  fixtures::TempDir dir("ckpt");
  const ModelParams p = tiny_model(6);
  save_checkpoint(dir.path / "m.ckpt", p, {{"epochs", 3}});
  const Checkpoint c = load_checkpoint(dir.path / "m.ckpt", p.arch);
  CHECK(c.params.values == p.values);
  CHECK(c.params.arch == p.arch);
  CHECK(c.params.spectro == p.spectro);
  CHECK(c.params.norm == p.norm);
  CHECK(c.train_config.at("epochs") == 3);
  ArchSpec other = p.arch;
  other.hidden = 13;
  CHECK_THROWS(load_checkpoint(dir.path / "m.ckpt", other));
  std::ofstream(dir.path / "bad.ckpt") << "not a checkpoint";
  CHECK_THROWS(load_checkpoint(dir.path / "bad.ckpt"));
}

TEST_CASE("verification code sees only the ranking facade") {
  const std::filesystem::path root = TAGGANT_SOURCE_DIR;
  for (const char* file : {"include/taggant/verifier.hpp", "src/verifier.cpp", "include/taggant/oracle.hpp"}) {
    std::ifstream in(root / file);
    REQUIRE(in);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("model.hpp") == std::string::npos);
    CHECK(text.find("network.hpp") == std::string::npos);
    CHECK(text.find("logits") == std::string::npos);
  }
}
