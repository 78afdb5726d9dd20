#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "cloq/tensor_store.hpp"

namespace cloq {

/// Running second moment H = X^T X of calibration activations, accumulated
/// in f64. `sum` is kept exactly symmetric.
struct GramAccumulator {
  Eigen::MatrixXd sum;
  std::int64_t sample_rows = 0;

  explicit GramAccumulator(Eigen::Index m) : sum(Eigen::MatrixXd::Zero(m, m)) {}
  Eigen::Index dim() const { return sum.rows(); }
};

/// sum += batch^T batch; batch is rows x m.
void accumulate(GramAccumulator& acc, const Eigen::Ref<const Eigen::MatrixXd>& batch);

struct DampedGram {
  Eigen::MatrixXd matrix;  // H + lambda * I
  double lambda = 0.0;
  double trace_pre = 0.0;
  bool degenerate = false;  // trace was zero, damping skipped

  Eigen::Index dim() const { return matrix.rows(); }
};

/// lambda = ratio * Tr(H) / m. A zero-trace H keeps lambda = 0 and sets the
/// degenerate flag; downstream takes the pseudo-inverse path.
DampedGram damp(const GramAccumulator& acc, double ratio);

/// Identity Gram for uncalibrated runs: metrics and the low-rank step then
/// reduce to their unweighted forms.
DampedGram identity_gram(Eigen::Index m);

/// Builds the accumulator for one layer from either a precomputed Gram
/// (symmetrized and PSD-checked) or an activation tensor streamed in row
/// blocks through accumulate().
GramAccumulator gram_from_bundle(const TensorBundle& bundle, const LayerRecord& record);

}  // namespace cloq
