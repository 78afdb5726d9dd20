#include "cloq/ptq.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "cloq/errors.hpp"

namespace cloq {

namespace {

/// Quantizes every entry of W with fixed grids; fills Q and codes.
void project_rows(const Eigen::MatrixXd& W, const LayerGrids& grids,
                  const std::vector<std::int32_t>& row_group, Eigen::Index row,
                  Eigen::MatrixXd& Q, CodeMatrix& codes) {
  for (Eigen::Index j = 0; j < W.cols(); ++j) {
    const QuantGrid& grid = grids.at(row_group[static_cast<std::size_t>(row)], j);
    const std::uint8_t code = grid.encode(W(row, j));
    codes(row, j) = code;
    Q(row, j) = grid.decode(code);
  }
}

/// Euclidean projection of v onto the l1 ball of radius mu (Duchi et al.).
Eigen::VectorXd project_l1_ball(const Eigen::VectorXd& v, double mu) {
  if (v.lpNorm<1>() <= mu) return v;
  Eigen::VectorXd u = v.cwiseAbs();
  std::sort(u.data(), u.data() + u.size(), std::greater<double>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    cumsum += u[i];
    const double candidate = (cumsum - mu) / static_cast<double>(i + 1);
    if (u[i] - candidate > 0)
      theta = candidate;
    else
      break;
  }
  return v.unaryExpr([theta](double x) {
    const double mag = std::max(std::abs(x) - theta, 0.0);
    return x < 0 ? -mag : mag;
  });
}

/// prox_{mu * ||.||_inf}(v) = v - projection of v onto the l1 ball of radius mu.
Eigen::VectorXd prox_linf(const Eigen::VectorXd& v, double mu) {
  if (mu <= 0) return v;
  return v - project_l1_ball(v, mu);
}

}  // namespace

void PtqConfig::validate() const {
  quant.validate();
  if (damp_ratio < 0) throw ConfigError("damp_ratio must be >= 0");
  if (magr) {
    if (magr->alpha_scale < 0) throw ConfigError("magr alpha must be >= 0");
    if (magr->iters < 1) throw ConfigError("magr iters must be >= 1");
    if (magr->tol < 0) throw ConfigError("magr tol must be >= 0");
  }
}

double weighted_objective(const Eigen::Ref<const Eigen::MatrixXd>& M,
                          const Eigen::Ref<const Eigen::MatrixXd>& H) {
  if (H.rows() != H.cols() || H.rows() != M.rows())
    throw DataError("weighted_objective: H must be m x m with m = rows of M");
  const double t = (H.selfadjointView<Eigen::Lower>() * M).cwiseProduct(M).sum();
  return std::sqrt(std::max(t, 0.0));
}

PtqResult ptq_rtn(const Eigen::Ref<const Eigen::MatrixXd>& W, const PtqConfig& cfg) {
  cfg.validate();
  if (!W.allFinite()) throw DataError("ptq_rtn: non-finite weights");

  PtqResult out;
  out.W_pre = W;
  out.grids = fit_layer_grids(W, cfg.quant);
  out.Q.resize(W.rows(), W.cols());
  out.codes.resize(W.rows(), W.cols());
  const std::vector<std::int32_t> row_group = out.grids.row_to_group(W.rows());
  for (Eigen::Index i = 0; i < W.rows(); ++i)
    project_rows(out.W_pre, out.grids, row_group, i, out.Q, out.codes);
  out.obj_plain = (out.Q - W).norm();
  return out;
}

PtqResult ptq_optq(const Eigen::Ref<const Eigen::MatrixXd>& W, const DampedGram& gram,
                   const PtqConfig& cfg) {
  cfg.validate();
  if (!W.allFinite()) throw DataError("ptq_optq: non-finite weights");
  if (gram.dim() != W.rows())
    throw DataError("ptq_optq: gram is " + std::to_string(gram.dim()) + "x" +
                    std::to_string(gram.dim()) + " but W has " + std::to_string(W.rows()) +
                    " rows");

  PtqResult out;
  out.W_pre = W;
  if (cfg.magr && cfg.magr->alpha_scale > 0) {
    const double alpha = cfg.magr->alpha_scale * W.cwiseAbs().mean();
    MagrResult magr = magr_preprocess(W, gram, alpha, cfg.magr->iters, cfg.magr->tol);
    out.W_pre = std::move(magr.W);
    out.magr_converged = magr.converged;
  }

  out.grids = fit_layer_grids(out.W_pre, cfg.quant);

  const Eigen::Index m = W.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(gram.matrix);
  if (llt.info() != Eigen::Success)
    throw NumericError(
        "Cholesky of the damped Gram failed (matrix not positive definite); "
        "increase --damp-ratio");
  Eigen::MatrixXd h_inv = llt.solve(Eigen::MatrixXd::Identity(m, m));
  Eigen::LLT<Eigen::MatrixXd> llt_inv(h_inv);
  if (llt_inv.info() != Eigen::Success)
    throw NumericError(
        "Cholesky of the inverse damped Gram failed (matrix not positive definite); "
        "increase --damp-ratio");
  const Eigen::MatrixXd L = llt_inv.matrixL();

  out.Q.resize(m, W.cols());
  out.codes.resize(m, W.cols());
  Eigen::MatrixXd w_cur = out.W_pre;
  const std::vector<std::int32_t> row_group = out.grids.row_to_group(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    project_rows(w_cur, out.grids, row_group, i, out.Q, out.codes);
    if (i + 1 < m) {
      const Eigen::RowVectorXd err = (w_cur.row(i) - out.Q.row(i)) / L(i, i);
      w_cur.bottomRows(m - i - 1).noalias() -= L.col(i).tail(m - i - 1) * err;
    }
  }

  out.obj_plain = (out.Q - W).norm();
  out.obj_weighted = weighted_objective(out.Q - W, gram.matrix);
  return out;
}

MagrResult magr_preprocess(const Eigen::Ref<const Eigen::MatrixXd>& W, const DampedGram& gram,
                           double alpha, int iters, double tol) {
  if (alpha <= 0) throw ConfigError("magr_preprocess: alpha must be > 0");
  if (iters < 1) throw ConfigError("magr_preprocess: iters must be >= 1");
  if (gram.dim() != W.rows()) throw DataError("magr_preprocess: gram/W dimension mismatch");

  const Eigen::MatrixXd& H = gram.matrix;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("magr_preprocess: eigensolver failed");
  const double lipschitz = 2.0 * std::max(es.eigenvalues().maxCoeff(), 0.0);

  MagrResult out;
  out.W = W;
  out.converged = true;

  for (Eigen::Index j = 0; j < W.cols(); ++j) {
    const Eigen::VectorXd w0 = W.col(j);
    Eigen::VectorXd w = w0;
    auto eval = [&](const Eigen::VectorXd& x) {
      const Eigen::VectorXd d = x - w0;
      return d.dot(H.selfadjointView<Eigen::Lower>() * d) +
             alpha * x.lpNorm<Eigen::Infinity>();
    };
    double f_cur = eval(w);
    int used = 0;
    bool column_converged = false;
    for (int it = 0; it < iters; ++it) {
      const Eigen::VectorXd grad = 2.0 * (H.selfadjointView<Eigen::Lower>() * (w - w0));
      double step = lipschitz > 0 ? 1.0 / lipschitz : 1.0;
      Eigen::VectorXd w_next;
      double f_next = f_cur;
      bool improved = false;
      for (int bt = 0; bt < 60; ++bt) {
        w_next = prox_linf(w - step * grad, step * alpha);
        f_next = eval(w_next);
        if (f_next <= f_cur) {
          improved = true;
          break;
        }
        step *= 0.5;
      }
      ++used;
      if (!improved) {
        column_converged = true;  // numerical stationarity, no descent possible
        break;
      }
      const double drop = f_cur - f_next;
      w = std::move(w_next);
      f_cur = f_next;
      if (drop <= tol * std::max(f_cur, 1e-300)) {
        column_converged = true;
        break;
      }
    }
    out.W.col(j) = w;
    out.iters_used = std::max(out.iters_used, used);
    if (!column_converged) out.converged = false;
  }
  return out;
}

}  // namespace cloq
