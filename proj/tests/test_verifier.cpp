#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "taggant/verifier.hpp"

using namespace taggant;
using fixtures::labelled_keys;
using fixtures::RandomOracle;
using fixtures::ScriptedOracle;

TEST_CASE("binomial tail agrees with term-by-term enumeration") {
  Rng rng(42);
  for (int n = 0; n < 300; ++n) {
    const int C = std::uniform_int_distribution<int>(2, 50)(rng);
    const int k = std::uniform_int_distribution<int>(1, C)(rng);
    const int K = std::uniform_int_distribution<int>(1, 20)(rng);
    const int t = std::uniform_int_distribution<int>(0, K)(rng);
    const double want = oracles::binomial_tail(t, K, k, C);
    const double got = binomial_pvalue(t, K, k, C);
    CHECK(std::abs(got - want) <= 1e-12 * std::max(want, 1e-300));
  }
}

TEST_CASE("binomial tail worked values") {
  CHECK(binomial_pvalue(0, 10, 1, 35) == 1.0);
  CHECK(binomial_pvalue(10, 10, 1, 35) == doctest::Approx(std::pow(1.0 / 35.0, 10)).epsilon(1e-12));
  CHECK(binomial_pvalue(3, 10, 1, 10) == doctest::Approx(0.0701908264).epsilon(1e-9));
  // k = C: every key is a hit, the tail is the whole distribution.
  CHECK(binomial_pvalue(10, 10, 10, 10) == 1.0);
  CHECK_THROWS_AS(binomial_pvalue(11, 10, 1, 10), std::invalid_argument);
  CHECK_THROWS_AS(binomial_pvalue(1, 10, 11, 10), std::invalid_argument);
}

TEST_CASE("p-value is non-increasing in T and in (0, 1]") {
  for (int k : {1, 3, 9}) {
    double prev = 2.0;
    for (int t = 0; t <= 15; ++t) {
      const double p = binomial_pvalue(t, 15, k, 10);
      CHECK(p > 0.0);
      CHECK(p <= 1.0);
      CHECK(p <= prev);
      prev = p;
    }
  }
}

TEST_CASE("Fisher combination") {
  CHECK(fisher_combine({1.0, 1.0, 1.0}) == 1.0);
  for (double p : {0.5, 0.01, 1e-30}) CHECK(fisher_combine({p}) == doctest::Approx(p).epsilon(1e-13));
  CHECK(fisher_combine(std::vector<double>(5, 0.1)) == doctest::Approx(0.010675).epsilon(1e-3));
  CHECK(fisher_combine({0.2, 0.03, 0.7}) == doctest::Approx(fisher_combine({0.7, 0.2, 0.03})).epsilon(1e-15));
  CHECK_THROWS_AS(fisher_combine({0.0, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(fisher_combine({}), std::invalid_argument);
  CHECK_THROWS_AS(fisher_combine({1.5}), std::invalid_argument);

  Rng rng(7);
  std::uniform_real_distribution<double> u(1e-6, 1.0);
  for (int n = 0; n < 20; ++n) {
    std::vector<double> ps(std::size_t(1 + n % 6));
    for (double& p : ps) p = u(rng);
    const double want = oracles::fisher_quadrature(ps);
    CHECK(std::abs(fisher_combine(ps) - want) <= 1e-9 * std::max(want, 1e-12));
  }
}

TEST_CASE("detection threshold") {
  CHECK(detection_threshold(10, 1, 35, 0.05) == 2);
  CHECK(detection_threshold(10, 10, 10, 0.05) == 11);  // unreachable
  int prev = 100;
  for (double a : {0.001, 0.01, 0.05, 0.1, 0.3}) {
    const int tau = detection_threshold(10, 2, 10, a);
    CHECK(tau <= prev);
    prev = tau;
  }
  CHECK(decide({1.0}, 0.5).verdict == Verdict::not_detected);
  CHECK(decide({0.0}, 0.05).combined_pvalue == doctest::Approx(kPValueFloor).epsilon(1e-12));
  CHECK_THROWS_AS(decide({0.5}, 1.0), std::invalid_argument);
}

TEST_CASE("top-k key accuracy") {
  const KeySet keys = labelled_keys({3, 4, 5}, 10);
  SUBCASE("oracle answering the low classes") {
    const ScriptedOracle o(10, {{0, 1, 2}});
    CHECK(topk_key_accuracy(o, keys, 3).hits == 0);
  }
  SUBCASE("label ranked first") {
    const ScriptedOracle o(10, {{3, 0, 1}, {4, 0, 1}, {5, 0, 1}});
    CHECK(topk_key_accuracy(o, keys, 1).hits == 3);
  }
  SUBCASE("k = C always hits") {
    const RandomOracle o(10, 1);
    CHECK(topk_key_accuracy(o, keys, 10).hits == 3);
  }
  SUBCASE("short, repeated or out-of-range answers abort") {
    CHECK_THROWS_AS(topk_key_accuracy(ScriptedOracle(10, {{1}}), keys, 2), OracleError);
    CHECK_THROWS_AS(topk_key_accuracy(ScriptedOracle(10, {{1, 1}}), keys, 2), OracleError);
    CHECK_THROWS_AS(topk_key_accuracy(ScriptedOracle(10, {{1, 12}}), keys, 2), OracleError);
  }
}

TEST_CASE("report is consistent and recomputable") {
  const KeySet keys = labelled_keys({1, 2, 3, 4}, 10);
  const RandomOracle o(10, 9);
  const VerificationReport r = verify(o, keys, 3, 0.05);
  REQUIRE(r.t_k.size() == 10);
  for (std::size_t k = 1; k < r.t_k.size(); ++k) CHECK(r.t_k[k] >= r.t_k[k - 1]);
  CHECK(r.t_k.back() == 4);
  for (std::size_t k = 0; k < r.t_k.size(); ++k) CHECK(r.p_k[k] == binomial_pvalue(r.t_k[k], 4, int(k) + 1, 10));
  CHECK(r.combined_pvalue == r.p_k[2]);
  const auto j = r.to_json();
  CHECK(j.at("K") == 4);
  CHECK(j.at("threshold_tau") == detection_threshold(4, 3, 10, 0.05));
  CHECK(j.at("keys").size() == 4);

  const VerificationReport with_prior = build_report(r.rankings, r.key_labels, 10, 3, 0.05, 10, {0.01, 0.2});
  CHECK(with_prior.combined_pvalue == doctest::Approx(fisher_combine({0.01, 0.2, r.p_k[2]})));
}

TEST_CASE("rates") {
  const KeySet keys = labelled_keys({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 35);
  const ScriptedOracle perfect(35, {{0}, {1}, {2}, {3}, {4}, {5}, {6}, {7}, {8}, {9}});
  SUBCASE("single detected protected run") {
    const RateReport r = evaluate_rates({{&perfect, true}}, keys, 1, 0.05);
    CHECK(r.fnr == 0.0);
    CHECK_FALSE(r.fpr.has_value());
  }
  SUBCASE("random benign oracles rarely fire") {
    std::vector<RandomOracle> pool;
    for (int i = 0; i < 100; ++i) pool.emplace_back(35, 1000 + i);
    std::vector<SuspectRun> runs;
    for (const auto& o : pool) runs.push_back({&o, false});
    const RateReport r = evaluate_rates(runs, keys, 1, 0.05);
    CHECK_FALSE(r.fnr.has_value());
    CHECK(*r.fpr <= 0.1);
  }
}

TEST_CASE("null calibration") {
  const KeySet keys = labelled_keys({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 10);
  for (int k : {1, 3}) {
    const RandomOracle o(10, 77 + k);
    int below[3] = {0, 0, 0};
    const double qs[3] = {0.01, 0.05, 0.1};
    for (int trial = 0; trial < 1000; ++trial) {
      const double p = binomial_pvalue(topk_key_accuracy(o, keys, k).hits, 10, k, 10);
      for (int i = 0; i < 3; ++i) below[i] += p <= qs[i];
    }
    for (int i = 0; i < 3; ++i) CHECK(below[i] / 1000.0 <= qs[i] + 2.0 * std::sqrt(qs[i] / 1000.0));
  }
}
