#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "cloq/calibration.hpp"
#include "cloq/ptq.hpp"

namespace cloq {

/// Non-symmetric root of the damped Gram: R = S^{1/2} U^T from the symmetric
/// eigendecomposition H = U S U^T, with R^T R = H. Eigenvalues at or below
/// the floor are treated as exact zeros, and the stored inverse becomes the
/// Moore-Penrose pseudo-inverse on the deficient subspace.
struct RootTransform {
  Eigen::MatrixXd R;
  Eigen::MatrixXd R_pinv;  // inverse when full rank, pseudo-inverse otherwise
  Eigen::Index rank = 0;
  double eig_floor = 0.0;

  bool full_rank() const { return rank == R.rows(); }
};

RootTransform build_root(const DampedGram& gram, double eig_floor_ratio = 1e-12);

struct TruncatedSvd {
  Eigen::MatrixXd U;  // m x r, orthonormal columns
  Eigen::VectorXd S;  // r, non-increasing
  Eigen::MatrixXd V;  // n x r, orthonormal columns

  Eigen::MatrixXd reconstruct() const { return U * S.asDiagonal() * V.transpose(); }
};

/// Best rank-r approximation factors of M (thin SVD truncated to r).
/// Signs are canonicalized so the largest-magnitude entry of each V column is
/// non-negative; the product is invariant either way.
TruncatedSvd truncated_lr(const Eigen::Ref<const Eigen::MatrixXd>& M, Eigen::Index r);

enum class FactorVariant { ASigma, BSigma, SplitSqrt };

std::string_view variant_name(FactorVariant v);

struct InitConfig {
  Eigen::Index rank = 64;
  FactorVariant variant = FactorVariant::ASigma;
  int altmin_iters = 1;
  double eig_floor_ratio = 1e-12;

  void validate() const;
};

struct AdapterPair {
  Eigen::MatrixXd A;  // m x r
  Eigen::MatrixXd B;  // n x r
  FactorVariant variant = FactorVariant::ASigma;
  Eigen::Index rank = 0;

  Eigen::MatrixXd product() const { return A * B.transpose(); }
};

/// The closed-form optimum of min_{A,B} ||X(A B^T - DeltaW)||_F^2:
/// A B^T = R^+ LR_r(R DeltaW), factored per the configured variant.
AdapterPair cloq_init(const Eigen::Ref<const Eigen::MatrixXd>& delta_w,
                      const RootTransform& root, const InitConfig& cfg);

struct LayerInitResult {
  std::string layer_id;
  Eigen::MatrixXd Q;
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  LayerGrids grids;
  FactorVariant variant = FactorVariant::ASigma;
  Eigen::Index rank = 0;
  double lambda = 0.0;
  bool gram_degenerate = false;
  bool uncalibrated = false;
  bool magr_converged = true;
  double obj_weighted_q = 0.0;      // ||X(Q - W)||_F via H
  double obj_weighted_total = 0.0;  // ||X(Q + A B^T - W)||_F via H
  double obj_plain_q = 0.0;         // ||Q - W||_F
  double obj_plain_total = 0.0;     // ||Q + A B^T - W||_F
  /// Combined weighted objective recorded after every Q-step and every
  /// (A,B)-step, in order.
  std::vector<double> objective_trace;
};

/// Alternating minimization over Q and (A,B). Iteration 1 starts from
/// A B^T = 0, so a single iteration is exactly quantize-then-init.
LayerInitResult altmin_refine(const Eigen::Ref<const Eigen::MatrixXd>& W, const DampedGram& gram,
                              const PtqConfig& cfg_ptq, const InitConfig& cfg_init);

/// Damps the accumulated Gram and runs altmin_refine.
LayerInitResult layer_pipeline(const Eigen::Ref<const Eigen::MatrixXd>& W,
                               const GramAccumulator& gram, const PtqConfig& cfg_ptq,
                               const InitConfig& cfg_init);

}  // namespace cloq
