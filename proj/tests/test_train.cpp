#include <doctest.h>

#include "fixtures.hpp"
#include "taggant/train.hpp"

using namespace taggant;

TEST_CASE("mixup") {
  Batch b;
  for (int i = 0; i < 4; ++i) {
    b.inputs.push_back(Eigen::VectorXd::Constant(6, double(i)));
    b.targets.push_back(one_hot(i, 4));
  }
  Rng rng(1);
  const Batch same = mixup_batch(b, 0.2, rng, 1.0);
  for (int i = 0; i < 4; ++i) CHECK(same.inputs[std::size_t(i)] == b.inputs[std::size_t(i)]);
  const Batch mixed = mixup_batch(b, 0.2, rng);
  for (const auto& t : mixed.targets) {
    CHECK(t.sum() == doctest::Approx(1.0));
    CHECK(t.minCoeff() >= 0.0);
  }
  const Batch half = mixup_batch(b, 0.2, rng, 0.25);
  for (std::size_t i = 0; i < 4; ++i) {
    // Inputs and targets share one partner and one lambda.
    const double partner = (half.inputs[i][0] - 0.25 * double(i)) / 0.75;
    const int j = int(std::lround(partner));
    CHECK(half.targets[i][j] >= 0.75 - 1e-12);
  }
  CHECK_THROWS_AS(mixup_batch(b, 0.2, rng, 1.5), std::invalid_argument);
}

TEST_CASE("time and frequency masks") {
  Rng rng(2);
  Eigen::MatrixXd f = Eigen::MatrixXd::Ones(20, 30);
  spec_masks(f, 5, 3, rng);
  int zero_cols = 0, zero_rows = 0;
  for (Eigen::Index c = 0; c < f.cols(); ++c) zero_cols += f.col(c).isZero();
  for (Eigen::Index r = 0; r < f.rows(); ++r) zero_rows += f.row(r).isZero();
  CHECK(zero_cols == 5);
  CHECK(zero_rows == 3);
  CHECK_THROWS_AS(spec_masks(f, 31, 0, rng), std::invalid_argument);
}

TEST_CASE("training learns and is deterministic") {
  const LabeledDataset ds = make_desk_dataset(fixtures::tiny_desk(200));
  const TrainConfig cfg = fixtures::tiny_train(6);
  const TrainResult a = train(ds, cfg);
  const TrainResult b = train(ds, cfg);
  CHECK(a.params.values == b.params.values);
  CHECK(a.epoch_loss.size() == 6);
  CHECK(a.epoch_loss.back() < a.epoch_loss.front());
  CHECK(a.validation_accuracy > 0.5);
  CHECK(a.validation_accuracy == accuracy(a.params, ds, Split::validation));

  TrainConfig other = cfg;
  other.seed = 99;
  CHECK(train(ds, other).params.values != a.params.values);

  TrainConfig bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(train(ds, bad), std::invalid_argument);
  bad = cfg;
  bad.mixup_alpha = -1.0;
  CHECK_THROWS_AS(train(ds, bad), std::invalid_argument);
}
