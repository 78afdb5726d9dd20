#include "cloq/calibration.hpp"

#include <algorithm>

#include <Eigen/Dense>

#include "cloq/errors.hpp"

namespace cloq {

namespace {

constexpr std::int64_t kStreamBlockRows = 256;
constexpr double kAsymmetryTolerance = 1e-6;   // relative Frobenius
constexpr double kPsdTolerance = 1e-8;         // relative to ||H||_2

}  // namespace

void accumulate(GramAccumulator& acc, const Eigen::Ref<const Eigen::MatrixXd>& batch) {
  if (batch.cols() != acc.dim())
    throw DataError("accumulate: batch has " + std::to_string(batch.cols()) +
                    " columns, accumulator expects " + std::to_string(acc.dim()));
  if (!batch.allFinite()) throw DataError("accumulate: non-finite values in batch");
  // Rank update on the lower triangle, mirrored, keeps sum exactly symmetric.
  acc.sum.selfadjointView<Eigen::Lower>().rankUpdate(batch.transpose());
  acc.sum.triangularView<Eigen::StrictlyUpper>() = acc.sum.transpose();
  acc.sample_rows += batch.rows();
}

DampedGram damp(const GramAccumulator& acc, double ratio) {
  if (ratio < 0) throw ConfigError("damp ratio must be >= 0");
  if (acc.dim() < 1) throw DataError("damp: empty accumulator");
  DampedGram out;
  out.trace_pre = acc.sum.trace();
  if (out.trace_pre <= 0.0) {
    out.lambda = 0.0;
    out.degenerate = ratio > 0.0;
  } else {
    out.lambda = ratio * (out.trace_pre / static_cast<double>(acc.dim()));
  }
  out.matrix = acc.sum;
  out.matrix.diagonal().array() += out.lambda;
  return out;
}

DampedGram identity_gram(Eigen::Index m) {
  DampedGram out;
  out.matrix = Eigen::MatrixXd::Identity(m, m);
  out.lambda = 0.0;
  out.trace_pre = static_cast<double>(m);
  return out;
}

GramAccumulator gram_from_bundle(const TensorBundle& bundle, const LayerRecord& record) {
  if (record.gram_name && record.activation_name)
    throw DataError("layer '" + record.layer_id + "': both gram and activation tensors present");

  if (record.gram_name) {
    const Eigen::MatrixXd H = entry_to_matrix(bundle.at(*record.gram_name));
    if (H.rows() != H.cols() || H.rows() != record.input_dim)
      throw DataError("layer '" + record.layer_id + "': gram must be " +
                      std::to_string(record.input_dim) + "x" + std::to_string(record.input_dim));
    if (!H.allFinite())
      throw DataError("layer '" + record.layer_id + "': non-finite gram entries");
    const double norm = H.norm();
    const double asym = (H - H.transpose()).norm();
    if (asym > kAsymmetryTolerance * norm)
      throw DataError("layer '" + record.layer_id + "': gram asymmetry " + std::to_string(asym) +
                      " exceeds tolerance");
    GramAccumulator acc(H.rows());
    acc.sum = 0.5 * (H + H.transpose());
    if (norm > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(acc.sum, Eigen::EigenvaluesOnly);
      const double spectral = es.eigenvalues().cwiseAbs().maxCoeff();
      if (es.eigenvalues().minCoeff() < -kPsdTolerance * spectral)
        throw DataError("layer '" + record.layer_id + "': gram is not positive semi-definite");
    }
    return acc;
  }

  if (record.activation_name) {
    const TensorEntry& entry = bundle.at(*record.activation_name);
    if (entry.shape.size() != 2 || entry.shape[1] != record.input_dim)
      throw DataError("layer '" + record.layer_id + "': activations must be rows x " +
                      std::to_string(record.input_dim));
    const Eigen::MatrixXd X = entry_to_matrix(entry);
    GramAccumulator acc(record.input_dim);
    for (Eigen::Index begin = 0; begin < X.rows(); begin += kStreamBlockRows) {
      const Eigen::Index rows = std::min<Eigen::Index>(kStreamBlockRows, X.rows() - begin);
      accumulate(acc, X.middleRows(begin, rows));
    }
    return acc;
  }

  throw DataError("layer '" + record.layer_id + "': no gram or activation tensor present");
}

}  // namespace cloq
