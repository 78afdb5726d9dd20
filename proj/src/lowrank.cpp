#include "cloq/lowrank.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "cloq/errors.hpp"

namespace cloq {

namespace {

void canonicalize_signs(Eigen::MatrixXd& U, Eigen::MatrixXd& V) {
  for (Eigen::Index k = 0; k < V.cols(); ++k) {
    Eigen::Index pivot = 0;
    V.col(k).cwiseAbs().maxCoeff(&pivot);
    if (V(pivot, k) < 0) {
      V.col(k) = -V.col(k);
      U.col(k) = -U.col(k);
    }
  }
}

PtqResult run_ptq(const Eigen::MatrixXd& target, const DampedGram& gram, const PtqConfig& cfg) {
  if (cfg.method == PtqMethod::Rtn) {
    PtqResult result = ptq_rtn(target, cfg);
    result.obj_weighted = weighted_objective(result.Q - target, gram.matrix);
    return result;
  }
  return ptq_optq(target, gram, cfg);
}

}  // namespace

std::string_view variant_name(FactorVariant v) {
  switch (v) {
    case FactorVariant::ASigma: return "a-sigma";
    case FactorVariant::BSigma: return "b-sigma";
    case FactorVariant::SplitSqrt: return "split-sqrt";
  }
  throw ConfigError("unknown factor variant");
}

void InitConfig::validate() const {
  if (rank < 1) throw ConfigError("rank must be >= 1");
  if (altmin_iters < 1) throw ConfigError("altmin_iters must be >= 1");
  if (eig_floor_ratio < 0) throw ConfigError("eig_floor must be >= 0");
}

RootTransform build_root(const DampedGram& gram, double eig_floor_ratio) {
  const Eigen::Index m = gram.dim();
  if (m < 1) throw DataError("build_root: empty gram");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram.matrix);
  if (es.info() != Eigen::Success) throw NumericError("build_root: eigendecomposition failed");

  // Descending order; negative eigenvalues are numerical noise, clamp to 0.
  Eigen::VectorXd evals = es.eigenvalues().reverse().cwiseMax(0.0);
  Eigen::MatrixXd evecs = es.eigenvectors().rowwise().reverse();

  RootTransform root;
  root.eig_floor = eig_floor_ratio * (m > 0 ? evals(0) : 0.0);

  Eigen::VectorXd sqrt_fwd(m), sqrt_inv(m);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (evals(i) > root.eig_floor && evals(i) > 0.0) {
      sqrt_fwd(i) = std::sqrt(evals(i));
      sqrt_inv(i) = 1.0 / sqrt_fwd(i);
      ++rank;
    } else {
      sqrt_fwd(i) = 0.0;  // below-floor components are exact zeros in R too,
      sqrt_inv(i) = 0.0;  // which keeps R_pinv a true Moore-Penrose inverse
    }
  }
  root.rank = rank;
  root.R = sqrt_fwd.asDiagonal() * evecs.transpose();
  root.R_pinv = evecs * sqrt_inv.asDiagonal();
  return root;
}

TruncatedSvd truncated_lr(const Eigen::Ref<const Eigen::MatrixXd>& M, Eigen::Index r) {
  if (r < 1) throw ConfigError("truncated_lr: rank must be >= 1");
  if (r > std::min(M.rows(), M.cols()))
    throw DataError("truncated_lr: rank " + std::to_string(r) + " exceeds min(m,n) = " +
                    std::to_string(std::min(M.rows(), M.cols())));
  Eigen::BDCSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericError("truncated_lr: SVD failed");

  TruncatedSvd out;
  out.U = svd.matrixU().leftCols(r);
  out.S = svd.singularValues().head(r);
  out.V = svd.matrixV().leftCols(r);
  canonicalize_signs(out.U, out.V);
  return out;
}

AdapterPair cloq_init(const Eigen::Ref<const Eigen::MatrixXd>& delta_w,
                      const RootTransform& root, const InitConfig& cfg) {
  cfg.validate();
  if (root.R.cols() != delta_w.rows())
    throw DataError("cloq_init: root is " + std::to_string(root.R.rows()) + "x" +
                    std::to_string(root.R.cols()) + " but DeltaW has " +
                    std::to_string(delta_w.rows()) + " rows");
  if (cfg.rank > std::min(delta_w.rows(), delta_w.cols()))
    throw DataError("cloq_init: rank " + std::to_string(cfg.rank) + " exceeds min(m,n) = " +
                    std::to_string(std::min(delta_w.rows(), delta_w.cols())));

  const Eigen::MatrixXd transformed = root.R * delta_w;
  const TruncatedSvd svd = truncated_lr(transformed, cfg.rank);
  const Eigen::MatrixXd lifted_u = root.R_pinv * svd.U;  // R^+ U_{:r}

  AdapterPair pair;
  pair.variant = cfg.variant;
  pair.rank = cfg.rank;
  switch (cfg.variant) {
    case FactorVariant::ASigma:
      pair.A = lifted_u * svd.S.asDiagonal();
      pair.B = svd.V;
      break;
    case FactorVariant::BSigma:
      pair.A = lifted_u;
      pair.B = svd.V * svd.S.asDiagonal();
      break;
    case FactorVariant::SplitSqrt: {
      const Eigen::VectorXd sqrt_s = svd.S.cwiseMax(0.0).cwiseSqrt();
      pair.A = lifted_u * sqrt_s.asDiagonal();
      pair.B = svd.V * sqrt_s.asDiagonal();
      break;
    }
  }
  return pair;
}

LayerInitResult altmin_refine(const Eigen::Ref<const Eigen::MatrixXd>& W, const DampedGram& gram,
                              const PtqConfig& cfg_ptq, const InitConfig& cfg_init) {
  cfg_ptq.validate();
  cfg_init.validate();

  const RootTransform root = build_root(gram, cfg_init.eig_floor_ratio);

  LayerInitResult result;
  result.variant = cfg_init.variant;
  result.rank = cfg_init.rank;
  result.lambda = gram.lambda;
  result.gram_degenerate = gram.degenerate;

  Eigen::MatrixXd low_rank = Eigen::MatrixXd::Zero(W.rows(), W.cols());
  PtqResult ptq;
  AdapterPair pair;
  for (int t = 0; t < cfg_init.altmin_iters; ++t) {
    const Eigen::MatrixXd target = (t == 0) ? Eigen::MatrixXd(W) : Eigen::MatrixXd(W - low_rank);
    ptq = run_ptq(target, gram, cfg_ptq);
    result.objective_trace.push_back(
        weighted_objective(ptq.Q + low_rank - W, gram.matrix));

    pair = cloq_init(W - ptq.Q, root, cfg_init);
    low_rank = pair.product();
    result.objective_trace.push_back(weighted_objective(ptq.Q + low_rank - W, gram.matrix));
  }

  result.Q = std::move(ptq.Q);
  result.A = std::move(pair.A);
  result.B = std::move(pair.B);
  result.grids = std::move(ptq.grids);
  result.magr_converged = ptq.magr_converged;
  result.obj_weighted_q = weighted_objective(result.Q - W, gram.matrix);
  result.obj_weighted_total = result.objective_trace.back();
  result.obj_plain_q = (result.Q - W).norm();
  result.obj_plain_total = (result.Q + low_rank - W).norm();
  return result;
}

LayerInitResult layer_pipeline(const Eigen::Ref<const Eigen::MatrixXd>& W,
                               const GramAccumulator& gram, const PtqConfig& cfg_ptq,
                               const InitConfig& cfg_init) {
  return altmin_refine(W, damp(gram, cfg_ptq.damp_ratio), cfg_ptq, cfg_init);
}

}  // namespace cloq
