#include "doctest.h"

#include <cmath>
#include <set>

#include "cloq/errors.hpp"
#include "cloq/quant.hpp"

#include "oracles.hpp"
#include "support.hpp"

using namespace cloq;
using cloq::testing::Rng;
using cloq::testing::nearest_grid_distance;

namespace {

QuantConfig config(int bits, Granularity g = Granularity::PerTensor, int group = 64) {
  QuantConfig cfg;
  cfg.bits = bits;
  cfg.granularity = g;
  cfg.group_size = group;
  return cfg;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("fit_grid on an exact range") {
  const QuantGrid grid = fit_grid(vec({0, 3, 6, 9}), config(2));
  CHECK(grid.delta == 3.0);
  CHECK(grid.zero_point == 0);
}

TEST_CASE("fit_grid degenerate constant group") {
  SUBCASE("zero constant reconstructs exactly") {
    const QuantGrid grid = fit_grid(vec({0, 0, 0}), config(2));
    CHECK(grid.delta == 1.0);
    CHECK(grid.zero_point == 0);
    const QuantizedGroup q = quantize_rtn(vec({0, 0, 0}), grid);
    CHECK(q.dequantize() == Eigen::VectorXd::Zero(3));
  }
  SUBCASE("nonzero constant reconstructs to its nearest integer") {
    const QuantGrid grid = fit_grid(vec({2.4, 2.4}), config(2));
    CHECK(grid.delta == 1.0);
    const QuantizedGroup q = quantize_rtn(vec({2.4, 2.4}), grid);
    CHECK(q.dequantize()(0) == 2.0);
  }
  SUBCASE("negative constant") {
    const QuantGrid grid = fit_grid(vec({-1.3, -1.3}), config(2));
    const QuantizedGroup q = quantize_rtn(vec({-1.3, -1.3}), grid);
    CHECK(q.dequantize()(0) == -1.0);
  }
}

TEST_CASE("fit_grid matches an independent formula re-implementation") {
  Rng rng(2024);
  Eigen::VectorXd w(100);
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.uniform(-1.0, 2.0);
  const QuantGrid grid = fit_grid(w, config(4));

  const double lo = w.minCoeff(), hi = w.maxCoeff();
  const double delta_oracle = (hi - lo) / 15.0;
  const double z_oracle = -std::round(lo / delta_oracle);
  CHECK(grid.delta == doctest::Approx(delta_oracle).epsilon(1e-15));
  CHECK(static_cast<double>(grid.zero_point) == z_oracle);
}

TEST_CASE("fit_grid rejects bad input") {
  CHECK_THROWS_AS(fit_grid(Eigen::VectorXd(), config(4)), DataError);
  CHECK_THROWS_AS(fit_grid(vec({1.0, std::nan("")}), config(4)), DataError);
  CHECK_THROWS_AS(fit_grid(vec({1.0, INFINITY}), config(4)), DataError);
  QuantConfig bad = config(9);
  CHECK_THROWS_AS(fit_grid(vec({1.0}), bad), ConfigError);
}

TEST_CASE("quantize_rtn reproduces grid-aligned input") {
  QuantGrid grid;
  grid.delta = 1.0;
  grid.zero_point = 0;
  grid.bits = 2;
  const QuantizedGroup q = quantize_rtn(vec({0, 1, 2, 3}), grid);
  CHECK(q.codes == std::vector<std::uint8_t>{0, 1, 2, 3});
  CHECK(q.dequantize() == vec({0, 1, 2, 3}));
}

TEST_CASE("quantize_rtn output is a nearest grid point (exhaustive oracle)") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const int bits = static_cast<int>(rng.uniform_int(2, 8));
    const Eigen::Index n = rng.uniform_int(2, 24);
    Eigen::VectorXd w(n);
    const double scale = std::pow(10.0, rng.uniform(-2, 2));
    const double offset = rng.normal() * scale;  // arbitrary sign pattern
    for (Eigen::Index i = 0; i < n; ++i) w(i) = rng.normal() * scale + offset;
    const QuantGrid grid = fit_grid(w, config(bits));
    const QuantizedGroup q = quantize_rtn(w, grid);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double got = std::abs(grid.decode(q.codes[static_cast<std::size_t>(i)]) - w(i));
      const double best = nearest_grid_distance(w(i), grid);
      CHECK(got <= best * (1 + 1e-12) + 1e-12 * grid.delta);
    }
  }
}

TEST_CASE("rounding bound: in-range entries land within delta/2") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int bits = static_cast<int>(rng.uniform_int(2, 8));
    const Eigen::Index n = rng.uniform_int(2, 32);
    Eigen::VectorXd w(n);
    const double offset = rng.normal() * 3.0;
    for (Eigen::Index i = 0; i < n; ++i) w(i) = rng.normal() + offset;
    const QuantGrid grid = fit_grid(w, config(bits));
    const QuantizedGroup q = quantize_rtn(w, grid);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double err = std::abs(grid.decode(q.codes[static_cast<std::size_t>(i)]) - w(i));
      CHECK(err <= grid.delta / 2 * (1 + 1e-9));
    }
  }
}

TEST_CASE("tie rule: half-away-from-zero vs half-to-even") {
  QuantGrid grid;
  grid.delta = 1.0;
  grid.zero_point = 2;
  grid.bits = 3;
  grid.rounding = RoundingMode::HalfAwayFromZero;
  CHECK(grid.encode(0.5) == 3);   // round(0.5) = 1
  CHECK(grid.encode(-0.5) == 1);  // round(-0.5) = -1
  grid.rounding = RoundingMode::HalfToEven;
  CHECK(grid.encode(0.5) == 2);   // nearbyint(0.5) = 0
  CHECK(grid.encode(-0.5) == 2);
  CHECK(grid.encode(1.5) == 4);   // nearbyint(1.5) = 2
}

TEST_CASE("idempotence: re-quantizing dequantized values reproduces codes") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int bits = static_cast<int>(rng.uniform_int(2, 8));
    Eigen::VectorXd w = rng.gaussian_vector(rng.uniform_int(2, 20), 2.0);
    const QuantGrid grid = fit_grid(w, config(bits));
    const QuantizedGroup q1 = quantize_rtn(w, grid);
    const QuantizedGroup q2 = quantize_rtn(q1.dequantize(), grid);
    CHECK(q1.codes == q2.codes);
  }
}

TEST_CASE("monotonicity within a group") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd w = rng.gaussian_vector(16, 1.5);
    const QuantGrid grid = fit_grid(w, config(static_cast<int>(rng.uniform_int(2, 4))));
    const QuantizedGroup q = quantize_rtn(w, grid);
    for (Eigen::Index i = 0; i < w.size(); ++i)
      for (Eigen::Index j = 0; j < w.size(); ++j)
        if (w(i) <= w(j)) CHECK(q.codes[i] <= q.codes[j]);
  }
}

TEST_CASE("grid cardinality is at most 2^b") {
  Rng rng(8);
  Eigen::VectorXd w = rng.gaussian_vector(400);
  for (int bits : {2, 3, 4}) {
    const QuantGrid grid = fit_grid(w, config(bits));
    const QuantizedGroup q = quantize_rtn(w, grid);
    std::set<double> values;
    for (double v : q.dequantize()) values.insert(v);
    CHECK(values.size() <= static_cast<std::size_t>(1 << bits));
  }
}

TEST_CASE("partition_rows") {
  SUBCASE("even groups") {
    const auto ranges = partition_rows(128, config(4, Granularity::PerGroup, 64));
    REQUIRE(ranges.size() == 2);
    CHECK(ranges[0] == RowRange{0, 64});
    CHECK(ranges[1] == RowRange{64, 128});
  }
  SUBCASE("remainder group") {
    const auto ranges = partition_rows(100, config(4, Granularity::PerGroup, 64));
    REQUIRE(ranges.size() == 2);
    CHECK(ranges[1] == RowRange{64, 100});
  }
  SUBCASE("per-channel shares the whole input dimension") {
    const auto ranges = partition_rows(5, config(4, Granularity::PerChannel));
    REQUIRE(ranges.size() == 1);
    CHECK(ranges[0] == RowRange{0, 5});
  }
  SUBCASE("ranges cover and are disjoint") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      const std::int64_t m = rng.uniform_int(1, 300);
      const int g = static_cast<int>(rng.uniform_int(2, 70));
      const auto ranges = partition_rows(m, config(4, Granularity::PerGroup, g));
      std::int64_t expect_begin = 0;
      for (const RowRange& r : ranges) {
        CHECK(r.begin == expect_begin);
        CHECK(r.end > r.begin);
        expect_begin = r.end;
      }
      CHECK(expect_begin == m);
      CHECK(static_cast<std::int64_t>(ranges.size()) == (m + g - 1) / g);
    }
  }
}

TEST_CASE("fit_layer_grids granularities") {
  Rng rng(10);
  const Eigen::MatrixXd w = rng.gaussian(6, 3);

  const LayerGrids per_tensor = fit_layer_grids(w, config(4, Granularity::PerTensor));
  CHECK(per_tensor.grids.size() == 1);
  CHECK(per_tensor.scales().rows() == 1);
  CHECK(per_tensor.scales().cols() == 1);

  const LayerGrids per_channel = fit_layer_grids(w, config(4, Granularity::PerChannel));
  CHECK(per_channel.grids.size() == 3);
  CHECK(per_channel.scales().rows() == 1);
  CHECK(per_channel.scales().cols() == 3);
  // Column grids match direct fits.
  for (int j = 0; j < 3; ++j)
    CHECK(per_channel.at(0, j).delta == fit_grid(w.col(j), config(4)).delta);

  const LayerGrids per_group = fit_layer_grids(w, config(4, Granularity::PerGroup, 4));
  CHECK(per_group.ranges.size() == 2);
  CHECK(per_group.grids.size() == 6);
  CHECK(per_group.scales().rows() == 2);
  const auto row_group = per_group.row_to_group(6);
  CHECK(row_group == std::vector<std::int32_t>{0, 0, 0, 0, 1, 1});
}
