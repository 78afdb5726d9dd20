#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "cloq/lowrank.hpp"

#include "json.hpp"

namespace cloq {

enum class NormKind { Frobenius, Spectral };

/// ||X(Q + A B^T - W)|| in the requested norm, computed through the damped
/// Gram: the Frobenius path is sqrt(Tr(M^T H M)), the spectral path the
/// largest singular value of R M (never forms X M, whose row count is the
/// calibration sample size).
double discrepancy(const Eigen::Ref<const Eigen::MatrixXd>& W,
                   const Eigen::Ref<const Eigen::MatrixXd>& Q,
                   const Eigen::Ref<const Eigen::MatrixXd>& A,
                   const Eigen::Ref<const Eigen::MatrixXd>& B, const DampedGram& gram,
                   NormKind norm);

/// Same, reusing a prebuilt root for the spectral path.
double discrepancy_with_root(const Eigen::Ref<const Eigen::MatrixXd>& W,
                             const Eigen::Ref<const Eigen::MatrixXd>& Q,
                             const Eigen::Ref<const Eigen::MatrixXd>& A,
                             const Eigen::Ref<const Eigen::MatrixXd>& B, const DampedGram& gram,
                             const RootTransform& root, NormKind norm);

struct LayerReport {
  std::string layer_id;
  double frob_disc = 0.0;            // ||X(Q + A B^T - W)||_F
  double spec_disc = 0.0;            // ||X(Q + A B^T - W)||_2
  double frob_q_only = 0.0;          // A B^T = 0
  double frob_baseline_loftq = 0.0;  // A B^T = LR_r(W - Q), the unweighted init
  int bits = 0;
  std::int64_t rank = 0;
  int group_size = 0;
  std::string variant;
  double lambda = 0.0;
  bool uncalibrated = false;
};

struct RunReport {
  static constexpr int kSchemaVersion = 1;
  std::vector<LayerReport> layers;
  nlohmann::json config_echo;
  std::string toolkit_version;
};

enum class ReportFormat { Json, Csv, Table };

/// Builds the per-layer row and checks the dominance/order invariants
/// (frob_disc <= min(frob_q_only, frob_baseline_loftq), spec_disc <=
/// frob_disc); a violation is a numerical bug and throws.
LayerReport build_layer_report(const std::string& layer_id,
                               const Eigen::Ref<const Eigen::MatrixXd>& W,
                               const LayerInitResult& result, const DampedGram& gram);

/// Deterministic serialization; identical inputs give identical bytes.
/// Throws DataError on an empty report.
std::string emit_report(const RunReport& report, ReportFormat format);

nlohmann::json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);

}  // namespace cloq
