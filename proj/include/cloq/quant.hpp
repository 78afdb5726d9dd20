#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace cloq {

enum class Granularity { PerTensor, PerChannel, PerGroup };
enum class RoundingMode { HalfAwayFromZero, HalfToEven };

struct QuantConfig {
  int bits = 4;  // 2..8
  Granularity granularity = Granularity::PerGroup;
  int group_size = 64;  // rows per group when granularity == PerGroup
  RoundingMode rounding = RoundingMode::HalfAwayFromZero;

  int levels() const { return 1 << bits; }
  void validate() const;  // throws ConfigError
};

/// The b-bit asymmetric uniform grid: points {(k - zero_point) * delta} for
/// integer codes k in [0, 2^b - 1]. The zero-point is an unrestricted integer
/// so the grid covers the fitted range even for single-signed groups.
struct QuantGrid {
  double delta = 1.0;
  std::int64_t zero_point = 0;
  int bits = 4;
  RoundingMode rounding = RoundingMode::HalfAwayFromZero;

  int levels() const { return 1 << bits; }
  double decode(std::int64_t code) const {
    return delta * static_cast<double>(code - zero_point);
  }
  std::uint8_t encode(double w) const;
};

struct QuantizedGroup {
  std::vector<std::uint8_t> codes;
  QuantGrid grid;

  Eigen::VectorXd dequantize() const;
};

/// Scale/zero-point from the value range: delta = (max-min)/(2^b-1),
/// z = clamp(-round(min/delta), 0, 2^b-1). A constant group degenerates to
/// delta = 1 with z placed so the constant reconstructs as closely as the
/// integer grid allows.
QuantGrid fit_grid(const Eigen::Ref<const Eigen::VectorXd>& w, const QuantConfig& cfg);

/// Round-to-nearest projection of w onto the grid.
QuantizedGroup quantize_rtn(const Eigen::Ref<const Eigen::VectorXd>& w, const QuantGrid& grid);

struct RowRange {
  std::int64_t begin = 0;
  std::int64_t end = 0;
  std::int64_t size() const { return end - begin; }
  bool operator==(const RowRange&) const = default;
};

/// Contiguous, disjoint, covering ranges over the input dimension.
/// PerTensor and PerChannel share one range; PerGroup yields ceil(m/g) ranges
/// with the last one possibly short.
std::vector<RowRange> partition_rows(std::int64_t m, const QuantConfig& cfg);

/// All grids for one m x n weight matrix. PerTensor stores a single grid;
/// PerChannel one grid per column; PerGroup one grid per (row-group, column).
struct LayerGrids {
  QuantConfig config;
  std::vector<RowRange> ranges;
  std::vector<QuantGrid> grids;
  std::int64_t cols = 0;

  std::int64_t group_count() const { return static_cast<std::int64_t>(ranges.size()); }
  const QuantGrid& at(std::int64_t group, std::int64_t col) const;
  std::vector<std::int32_t> row_to_group(std::int64_t m) const;

  /// Group-major matrices of per-grid parameters, shaped [1,1] (PerTensor),
  /// [1,n] (PerChannel) or [G,n] (PerGroup) for export.
  Eigen::MatrixXd scales() const;
  Eigen::MatrixXd zero_points() const;
};

LayerGrids fit_layer_grids(const Eigen::Ref<const Eigen::MatrixXd>& W, const QuantConfig& cfg);

}  // namespace cloq
