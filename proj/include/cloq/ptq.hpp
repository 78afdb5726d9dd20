#pragma once

#include <limits>
#include <optional>

#include <Eigen/Core>

#include "cloq/calibration.hpp"
#include "cloq/quant.hpp"

namespace cloq {

enum class PtqMethod { Rtn, Optq };

/// l-infinity-regularized magnitude reduction applied before quantization.
/// `alpha_scale` is relative to mean|W|; the effective penalty per layer is
/// alpha = alpha_scale * mean|W|.
struct MagrConfig {
  double alpha_scale = 1e-3;
  int iters = 50;
  double tol = 1e-6;
};

struct PtqConfig {
  PtqMethod method = PtqMethod::Optq;
  QuantConfig quant;
  std::optional<MagrConfig> magr;
  double damp_ratio = 0.01;

  void validate() const;
};

using CodeMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct PtqResult {
  Eigen::MatrixXd Q;        // on-grid, dequantized
  CodeMatrix codes;         // integer codes, one per weight
  LayerGrids grids;
  Eigen::MatrixXd W_pre;    // the matrix actually quantized (post-MagR)
  double obj_weighted = std::numeric_limits<double>::quiet_NaN();  // ||X(Q-W)||_F vs original W
  double obj_plain = std::numeric_limits<double>::quiet_NaN();     // ||Q-W||_F vs original W
  bool magr_converged = true;
};

/// sqrt(Tr(M^T H M)); equals ||X M||_F when H = X^T X.
double weighted_objective(const Eigen::Ref<const Eigen::MatrixXd>& M,
                          const Eigen::Ref<const Eigen::MatrixXd>& H);

/// Data-free round-to-nearest baseline. obj_weighted stays NaN (no H here);
/// callers with a Gram can fill it via weighted_objective.
PtqResult ptq_rtn(const Eigen::Ref<const Eigen::MatrixXd>& W, const PtqConfig& cfg);

/// Greedy error-compensating sweep over input-feature rows. Grids are fit on
/// the (post-MagR) weights before the sweep and stay fixed; after quantizing
/// row i, its residual is propagated to rows j > i through the Cholesky factor
/// of the inverse damped Gram.
PtqResult ptq_optq(const Eigen::Ref<const Eigen::MatrixXd>& W, const DampedGram& gram,
                   const PtqConfig& cfg);

struct MagrResult {
  Eigen::MatrixXd W;
  bool converged = true;
  int iters_used = 0;
};

/// Per output column j, approximately minimizes
///   (w - w_j)^T H (w - w_j) + alpha * ||w||_inf
/// by monotone proximal-gradient steps (prox of the l-inf term via projection
/// onto the l1 ball). The objective never increases across iterations and the
/// l-inf norm never exceeds the input's.
MagrResult magr_preprocess(const Eigen::Ref<const Eigen::MatrixXd>& W, const DampedGram& gram,
                           double alpha, int iters, double tol);

}  // namespace cloq
