#include "doctest.h"

#include <Eigen/Dense>

#include "cloq/calibration.hpp"
#include "cloq/errors.hpp"

#include "support.hpp"

using namespace cloq;
using cloq::testing::Rng;
using cloq::testing::rel_err;

TEST_CASE("accumulating the identity gives the identity") {
  GramAccumulator acc(4);
  accumulate(acc, Eigen::MatrixXd::Identity(4, 4));
  CHECK(acc.sum == Eigen::MatrixXd::Identity(4, 4));
  CHECK(acc.sample_rows == 4);
}

TEST_CASE("accumulate is additive over batch splits") {
  Rng rng(1);
  const Eigen::MatrixXd b1 = rng.gaussian(7, 5);
  const Eigen::MatrixXd b2 = rng.gaussian(9, 5);
  Eigen::MatrixXd stacked(16, 5);
  stacked << b1, b2;

  GramAccumulator split(5), whole(5);
  accumulate(split, b1);
  accumulate(split, b2);
  accumulate(whole, stacked);
  CHECK(rel_err(split.sum, whole.sum) <= 1e-9);
}

TEST_CASE("accumulate matches the dense X^T X oracle") {
  Rng rng(2);
  const Eigen::MatrixXd x = rng.gaussian(10, 4);
  GramAccumulator acc(4);
  accumulate(acc, x);

  Eigen::MatrixXd oracle = Eigen::MatrixXd::Zero(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 10; ++k) oracle(i, j) += x(k, i) * x(k, j);
  CHECK(rel_err(acc.sum, oracle) <= 1e-12);
}

TEST_CASE("accumulate keeps the sum exactly symmetric") {
  Rng rng(3);
  GramAccumulator acc(6);
  for (int batch = 0; batch < 4; ++batch) accumulate(acc, rng.gaussian(11, 6));
  CHECK(acc.sum == acc.sum.transpose().eval());
}

TEST_CASE("accumulate rejects bad batches") {
  GramAccumulator acc(3);
  CHECK_THROWS_AS(accumulate(acc, Eigen::MatrixXd::Zero(2, 4)), DataError);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 3);
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(accumulate(acc, bad), DataError);
}

TEST_CASE("damping rule lambda = ratio * Tr(H) / m") {
  GramAccumulator acc(2);
  acc.sum = Eigen::Vector2d(1, 3).asDiagonal();
  const DampedGram damped = damp(acc, 0.01);
  CHECK(damped.lambda == 0.02);
  CHECK(damped.matrix(0, 0) == 1.02);
  CHECK(damped.matrix(1, 1) == 3.02);
  CHECK(damped.matrix(0, 1) == 0.0);
  CHECK(damped.trace_pre == 4.0);
  CHECK(!damped.degenerate);
}

TEST_CASE("zero damping ratio returns H unchanged") {
  Rng rng(4);
  GramAccumulator acc(5);
  accumulate(acc, rng.gaussian(12, 5));
  const DampedGram damped = damp(acc, 0.0);
  CHECK(damped.matrix == acc.sum);
  CHECK(damped.lambda == 0.0);
}

TEST_CASE("zero-trace accumulator keeps lambda zero and flags degeneracy") {
  GramAccumulator acc(3);
  const DampedGram damped = damp(acc, 0.01);
  CHECK(damped.lambda == 0.0);
  CHECK(damped.degenerate);
}

TEST_CASE("negative ratio is rejected") {
  GramAccumulator acc(2);
  CHECK_THROWS_AS(damp(acc, -0.1), ConfigError);
}

TEST_CASE("damping shifts every eigenvalue by exactly lambda") {
  Rng rng(5);
  GramAccumulator acc(6);
  accumulate(acc, rng.gaussian(30, 6));
  const DampedGram damped = damp(acc, 0.01);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> before(acc.sum);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> after(damped.matrix);
  const double scale = after.eigenvalues().cwiseAbs().maxCoeff();
  for (int i = 0; i < 6; ++i)
    CHECK(std::abs(after.eigenvalues()(i) - before.eigenvalues()(i) - damped.lambda) <=
          1e-8 * scale);
  CHECK(after.eigenvalues().minCoeff() >= damped.lambda - 1e-10);
  CHECK(damped.matrix.trace() == doctest::Approx(acc.sum.trace() + 6 * damped.lambda));
}

TEST_CASE("gram is PSD: quadratic form non-negative for random probes") {
  Rng rng(6);
  GramAccumulator acc(8);
  accumulate(acc, rng.gaussian(20, 8));
  for (int probe = 0; probe < 100; ++probe) {
    const Eigen::VectorXd x = rng.gaussian_vector(8);
    CHECK(x.dot(acc.sum * x) >= -1e-10 * acc.sum.norm());
  }
}

TEST_CASE("batch order does not change the result") {
  Rng rng(7);
  const Eigen::MatrixXd b1 = rng.gaussian(6, 4), b2 = rng.gaussian(8, 4), b3 = rng.gaussian(5, 4);
  GramAccumulator fwd(4), rev(4);
  accumulate(fwd, b1);
  accumulate(fwd, b2);
  accumulate(fwd, b3);
  accumulate(rev, b3);
  accumulate(rev, b1);
  accumulate(rev, b2);
  CHECK(rel_err(fwd.sum, rev.sum) <= 1e-9);
}

TEST_CASE("gram_from_bundle") {
  const std::string id = "layer";
  LayerRecord record;
  record.layer_id = id;
  record.weight_name = id + "/W";
  record.input_dim = 4;
  record.output_dim = 2;

  SUBCASE("precomputed identity gram") {
    TensorBundle bundle;
    bundle.add(id + "/gram", make_f32_entry(Eigen::MatrixXd::Identity(4, 4)));
    record.gram_name = id + "/gram";
    const GramAccumulator acc = gram_from_bundle(bundle, record);
    CHECK(acc.sum == Eigen::MatrixXd::Identity(4, 4));
  }

  SUBCASE("activation path equals direct accumulation") {
    Rng rng(8);
    const Eigen::MatrixXd x = rng.gaussian(20, 4);
    // Store as f32 and accumulate the f32-rounded values for the oracle.
    TensorBundle bundle;
    bundle.add(id + "/acts", make_f32_entry(x));
    record.activation_name = id + "/acts";
    const GramAccumulator acc = gram_from_bundle(bundle, record);

    const Eigen::MatrixXd x32 = entry_to_matrix(bundle.at(id + "/acts"));
    GramAccumulator oracle(4);
    accumulate(oracle, x32);
    CHECK(rel_err(acc.sum, oracle.sum) <= 1e-12);
    CHECK(acc.sample_rows == 20);
  }

  SUBCASE("asymmetric gram is rejected") {
    Eigen::MatrixXd h = Eigen::MatrixXd::Identity(4, 4);
    h(0, 1) = 1.0;  // strongly asymmetric
    TensorBundle bundle;
    bundle.add(id + "/gram", make_f32_entry(h));
    record.gram_name = id + "/gram";
    CHECK_THROWS_WITH_AS(gram_from_bundle(bundle, record), doctest::Contains("asymmetry"),
                         DataError);
  }

  SUBCASE("indefinite gram is rejected") {
    Eigen::MatrixXd h = Eigen::MatrixXd::Identity(4, 4);
    h(0, 0) = -1.0;
    TensorBundle bundle;
    bundle.add(id + "/gram", make_f32_entry(h));
    record.gram_name = id + "/gram";
    CHECK_THROWS_WITH_AS(gram_from_bundle(bundle, record),
                         doctest::Contains("positive semi-definite"), DataError);
  }

  SUBCASE("missing calibration tensors") {
    TensorBundle bundle;
    CHECK_THROWS_AS(gram_from_bundle(bundle, record), DataError);
  }
}
