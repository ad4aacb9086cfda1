#include <doctest.h>

#include "fixtures.hpp"
#include "taggant/crafter.hpp"

using namespace taggant;

namespace {

Eigen::VectorXd random_vec(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  Eigen::VectorXd v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

struct Scene {
  LabeledDataset ds;
  ModelParams surrogate;
  KeySet keys;
  PoisonPlan plan;
};

const Scene& scene() {
  static const Scene s = [] {
    Scene sc;
    // Push one sample of every clip near full scale so projection onto [-1, 1] matters.
    std::vector<DatasetItem> items = make_desk_dataset(fixtures::tiny_desk(120)).items();
    for (auto& it : items) {
      Eigen::VectorXf x = it.clip.samples();
      x[2000] = 0.99f;
      x[2001] = -0.995f;
      it.clip = AudioClip(x, it.clip.sample_rate());
    }
    sc.ds = LabeledDataset(items, 10);
    sc.surrogate = train(sc.ds, fixtures::tiny_train(3)).params;
    sc.keys = generate_keyset(fixtures::tiny_keygen(3));
    sc.plan = select_poison_set(sc.ds, sc.keys, 0.1, 4);
    return sc;
  }();
  return s;
}

CraftConfig quick(int steps) {
  CraftConfig c;
  c.steps = steps;
  c.step_size = 5e-3;
  c.seed = 2;
  return c;
}

}  // namespace

TEST_CASE("alignment loss") {
  const std::vector<Eigen::VectorXd> g{random_vec(50, 1), random_vec(50, 2)};
  CHECK(alignment_loss(g, g) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(alignment_loss(g, {-g[0], -g[1]}) == doctest::Approx(2.0));
  std::vector<Eigen::VectorXd> orth = g;
  for (std::size_t i = 0; i < 2; ++i) {
    orth[i] = random_vec(50, 10 + i);
    orth[i] -= orth[i].dot(g[i]) / g[i].squaredNorm() * g[i];
  }
  CHECK(alignment_loss(g, orth) == doctest::Approx(1.0).epsilon(1e-12));

  const std::vector<Eigen::VectorXd> h{random_vec(50, 3), random_vec(50, 4)};
  const double base = alignment_loss(g, h);
  CHECK(base >= 0.0);
  CHECK(base <= 2.0);
  for (double c : {1e-6, 0.3, 7.0, 1e5}) {
    CHECK(alignment_loss(g, {c * h[0], h[1]}) == doctest::Approx(base).epsilon(1e-12));
    CHECK(alignment_loss({g[0], c * g[1]}, h) == doctest::Approx(base).epsilon(1e-12));
  }
  CHECK(alignment_loss(g, {Eigen::VectorXd::Zero(50), g[1]}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(alignment_loss({Eigen::VectorXd::Zero(50)}, {h[0]}), std::invalid_argument);
  CHECK_THROWS_AS(alignment_loss(g, {h[0]}), std::invalid_argument);
  CHECK_THROWS_AS(alignment_loss({g[0]}, {random_vec(49, 1)}), std::invalid_argument);
}

TEST_CASE("alignment direction is the gradient of the loss") {
  const std::vector<Eigen::VectorXd> g{random_vec(30, 5), random_vec(30, 6)};
  std::vector<Eigen::VectorXd> s{random_vec(30, 7), random_vec(30, 8)};
  const AlignmentTerms t = alignment_terms(g, s);
  for (std::size_t k = 0; k < 2; ++k)
    for (Eigen::Index i : {0, 11, 29}) {
      const double h = 1e-6, keep = s[k][i];
      s[k][i] = keep + h;
      const double up = alignment_loss(g, s);
      s[k][i] = keep - h;
      const double down = alignment_loss(g, s);
      s[k][i] = keep;
      CHECK(t.direction[k][i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("zero steps returns zero deltas") {
  const Scene& sc = scene();
  const CraftResult r = craft(sc.surrogate, sc.ds, sc.plan, sc.keys, quick(0));
  CHECK(r.trace.loss.size() == 1);
  CHECK(r.perturbations.deltas.size() == sc.plan.total());
  for (const auto& [id, d] : r.perturbations.deltas) CHECK(d.isZero());
}

TEST_CASE("crafting stays feasible and makes progress") {
  const Scene& sc = scene();
  for (int steps : {1, 3, 12}) {
    const CraftResult r = craft(sc.surrogate, sc.ds, sc.plan, sc.keys, quick(steps));
    CHECK(r.trace.loss.size() == std::size_t(steps + 1));
    CHECK(*std::min_element(r.trace.loss.begin(), r.trace.loss.end()) <= r.trace.loss.front());
    CHECK(r.trace.key_cosine.size() == sc.keys.size());
    for (const auto& [id, d] : r.perturbations.deltas) {
      const Eigen::VectorXd x = sc.ds[sc.ds.index_of(id)].clip.as_double();
      CHECK(d.cwiseAbs().maxCoeff() <= 0.05);
      CHECK((x + d).maxCoeff() <= 1.0);
      CHECK((x + d).minCoeff() >= -1.0);
    }
    if (steps == 12) CHECK(r.trace.loss.back() < r.trace.loss.front());
  }
}

TEST_CASE("crafting is deterministic and batch-invariant") {
  const Scene& sc = scene();
  CraftConfig a = quick(4);
  const CraftResult r1 = craft(sc.surrogate, sc.ds, sc.plan, sc.keys, a);
  const CraftResult r2 = craft(sc.surrogate, sc.ds, sc.plan, sc.keys, a);
  CHECK(r1.trace.loss == r2.trace.loss);
  for (const auto& [id, d] : r1.perturbations.deltas) CHECK(r2.perturbations.deltas.at(id) == d);

  a.batch_size = 1;
  const CraftResult r3 = craft(sc.surrogate, sc.ds, sc.plan, sc.keys, a);
  for (std::size_t i = 0; i < r1.trace.loss.size(); ++i)
    CHECK(r3.trace.loss[i] == doctest::Approx(r1.trace.loss[i]).epsilon(1e-6));
}

TEST_CASE("best restart is returned") {
  const Scene& sc = scene();
  CraftConfig c = quick(3);
  c.restarts = 3;
  const CraftResult r = craft(sc.surrogate, sc.ds, sc.plan, sc.keys, c);
  REQUIRE(r.trace.restart_loss.size() == 3);
  const double chosen = r.trace.restart_loss[std::size_t(r.trace.restart)];
  for (double l : r.trace.restart_loss) CHECK(chosen <= l);
  CHECK(*std::min_element(r.trace.loss.begin(), r.trace.loss.end()) == chosen);
}

TEST_CASE("crafting rejects inconsistent inputs") {
  const Scene& sc = scene();
  PoisonPlan wrong = sc.plan;
  wrong.partition.pop_back();
  CHECK_THROWS_AS(craft(sc.surrogate, sc.ds, wrong, sc.keys, quick(1)), std::invalid_argument);
  PoisonPlan swapped = sc.plan;
  if (sc.keys.keys[0].label != sc.keys.keys[1].label) {
    std::swap(swapped.partition[0], swapped.partition[1]);
    if (!swapped.partition[0].empty()) CHECK_THROWS_AS(craft(sc.surrogate, sc.ds, swapped, sc.keys, quick(1)), std::invalid_argument);
  }
  PoisonPlan dup = sc.plan;
  dup.partition[0].push_back(dup.partition[0].front());
  CHECK_THROWS_AS(craft(sc.surrogate, sc.ds, dup, sc.keys, quick(1)), std::invalid_argument);
  CraftConfig bad = quick(1);
  bad.clip_bound = 0.0;
  CHECK_THROWS_AS(craft(sc.surrogate, sc.ds, sc.plan, sc.keys, bad), std::invalid_argument);
}
