#include "cloq/quant.hpp"

#include <algorithm>
#include <cmath>

#include "cloq/errors.hpp"

namespace cloq {

namespace {

double round_with(double x, RoundingMode mode) {
  // Default FP environment rounds to nearest-even, which nearbyint honors.
  return mode == RoundingMode::HalfAwayFromZero ? std::round(x) : std::nearbyint(x);
}

int clamp_code(double k, int levels) {
  return static_cast<int>(std::min(std::max(k, 0.0), static_cast<double>(levels - 1)));
}

std::int64_t to_zero_point(double z) {
  // Guard the cast; grids this extreme only arise from pathological inputs.
  constexpr double kLimit = 9.0e18;
  return static_cast<std::int64_t>(std::min(std::max(z, -kLimit), kLimit));
}

}  // namespace

void QuantConfig::validate() const {
  if (bits < 2 || bits > 8) throw ConfigError("bits must be in [2,8]");
  if (granularity == Granularity::PerGroup && group_size < 2)
    throw ConfigError("group_size must be >= 2");
}

std::uint8_t QuantGrid::encode(double w) const {
  const double k = round_with(w / delta, rounding) + static_cast<double>(zero_point);
  return static_cast<std::uint8_t>(clamp_code(k, levels()));
}

Eigen::VectorXd QuantizedGroup::dequantize() const {
  Eigen::VectorXd q(static_cast<Eigen::Index>(codes.size()));
  for (Eigen::Index i = 0; i < q.size(); ++i) q[i] = grid.decode(codes[static_cast<std::size_t>(i)]);
  return q;
}

QuantGrid fit_grid(const Eigen::Ref<const Eigen::VectorXd>& w, const QuantConfig& cfg) {
  cfg.validate();
  if (w.size() == 0) throw DataError("fit_grid: empty input");
  if (!w.allFinite()) throw DataError("fit_grid: non-finite values in input");

  const double lo = w.minCoeff();
  const double hi = w.maxCoeff();

  QuantGrid grid;
  grid.bits = cfg.bits;
  grid.rounding = cfg.rounding;
  if (hi > lo) {
    grid.delta = (hi - lo) / static_cast<double>(cfg.levels() - 1);
    grid.zero_point = to_zero_point(-round_with(lo / grid.delta, cfg.rounding));
  } else {
    // Constant group: unit grid anchored near the constant.
    grid.delta = 1.0;
    grid.zero_point = to_zero_point(-round_with(lo, cfg.rounding));
  }
  return grid;
}

QuantizedGroup quantize_rtn(const Eigen::Ref<const Eigen::VectorXd>& w, const QuantGrid& grid) {
  QuantizedGroup out;
  out.grid = grid;
  out.codes.resize(static_cast<std::size_t>(w.size()));
  for (Eigen::Index i = 0; i < w.size(); ++i) out.codes[static_cast<std::size_t>(i)] = grid.encode(w[i]);
  return out;
}

std::vector<RowRange> partition_rows(std::int64_t m, const QuantConfig& cfg) {
  if (m < 1) throw DataError("partition_rows: m must be >= 1");
  std::vector<RowRange> ranges;
  if (cfg.granularity == Granularity::PerGroup) {
    const std::int64_t g = cfg.group_size;
    for (std::int64_t begin = 0; begin < m; begin += g)
      ranges.push_back({begin, std::min(begin + g, m)});
  } else {
    ranges.push_back({0, m});
  }
  return ranges;
}

const QuantGrid& LayerGrids::at(std::int64_t group, std::int64_t col) const {
  if (config.granularity == Granularity::PerTensor) return grids[0];
  return grids[static_cast<std::size_t>(group * cols + col)];
}

std::vector<std::int32_t> LayerGrids::row_to_group(std::int64_t m) const {
  std::vector<std::int32_t> map(static_cast<std::size_t>(m), 0);
  for (std::size_t g = 0; g < ranges.size(); ++g)
    for (std::int64_t i = ranges[g].begin; i < ranges[g].end; ++i)
      map[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(g);
  return map;
}

Eigen::MatrixXd LayerGrids::scales() const {
  if (config.granularity == Granularity::PerTensor) {
    Eigen::MatrixXd s(1, 1);
    s(0, 0) = grids[0].delta;
    return s;
  }
  Eigen::MatrixXd s(group_count(), cols);
  for (std::int64_t g = 0; g < group_count(); ++g)
    for (std::int64_t j = 0; j < cols; ++j) s(g, j) = at(g, j).delta;
  return s;
}

Eigen::MatrixXd LayerGrids::zero_points() const {
  if (config.granularity == Granularity::PerTensor) {
    Eigen::MatrixXd z(1, 1);
    z(0, 0) = static_cast<double>(grids[0].zero_point);
    return z;
  }
  Eigen::MatrixXd z(group_count(), cols);
  for (std::int64_t g = 0; g < group_count(); ++g)
    for (std::int64_t j = 0; j < cols; ++j) z(g, j) = static_cast<double>(at(g, j).zero_point);
  return z;
}

LayerGrids fit_layer_grids(const Eigen::Ref<const Eigen::MatrixXd>& W, const QuantConfig& cfg) {
  cfg.validate();
  LayerGrids out;
  out.config = cfg;
  out.cols = W.cols();
  out.ranges = partition_rows(W.rows(), cfg);
  if (cfg.granularity == Granularity::PerTensor) {
    const Eigen::VectorXd flat = W.reshaped();
    out.grids.push_back(fit_grid(flat, cfg));
    return out;
  }
  out.grids.reserve(out.ranges.size() * static_cast<std::size_t>(W.cols()));
  for (const RowRange& range : out.ranges)
    for (Eigen::Index j = 0; j < W.cols(); ++j)
      out.grids.push_back(fit_grid(W.col(j).segment(range.begin, range.size()), cfg));
  return out;
}

}  // namespace cloq
