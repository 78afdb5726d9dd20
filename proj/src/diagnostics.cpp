#include "cloq/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include <Eigen/Dense>

#include "cloq/errors.hpp"
#include "cloq/version.hpp"

namespace cloq {

namespace {

Eigen::MatrixXd residual(const Eigen::Ref<const Eigen::MatrixXd>& W,
                         const Eigen::Ref<const Eigen::MatrixXd>& Q,
                         const Eigen::Ref<const Eigen::MatrixXd>& A,
                         const Eigen::Ref<const Eigen::MatrixXd>& B) {
  if (Q.rows() != W.rows() || Q.cols() != W.cols())
    throw DataError("discrepancy: Q/W dimension mismatch");
  if (A.size() == 0 && B.size() == 0) return Q - W;
  if (A.rows() != W.rows() || B.rows() != W.cols() || A.cols() != B.cols())
    throw DataError("discrepancy: adapter dimension mismatch");
  return Q + A * B.transpose() - W;
}

double spectral_norm(const Eigen::MatrixXd& M) {
  if (M.size() == 0) return 0.0;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(M);
  return svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
}

// Shortest representation that round-trips a double, for deterministic text output.
std::string format_double(double v) {
  char buf[40];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

void check_dominance(const LayerReport& row) {
  const auto leq = [](double a, double b) { return a <= b + 1e-9 * (1.0 + b); };
  if (!leq(row.frob_disc, row.frob_q_only))
    throw NumericError("layer '" + row.layer_id +
                       "': adapter discrepancy exceeds quantize-only discrepancy");
  if (!leq(row.frob_disc, row.frob_baseline_loftq))
    throw NumericError("layer '" + row.layer_id +
                       "': adapter discrepancy exceeds the unweighted-SVD baseline");
  if (!leq(row.spec_disc, row.frob_disc))
    throw NumericError("layer '" + row.layer_id + "': spectral norm exceeds Frobenius norm");
}

}  // namespace

double discrepancy_with_root(const Eigen::Ref<const Eigen::MatrixXd>& W,
                             const Eigen::Ref<const Eigen::MatrixXd>& Q,
                             const Eigen::Ref<const Eigen::MatrixXd>& A,
                             const Eigen::Ref<const Eigen::MatrixXd>& B, const DampedGram& gram,
                             const RootTransform& root, NormKind norm) {
  const Eigen::MatrixXd M = residual(W, Q, A, B);
  if (norm == NormKind::Frobenius) return weighted_objective(M, gram.matrix);
  return spectral_norm(root.R * M);
}

double discrepancy(const Eigen::Ref<const Eigen::MatrixXd>& W,
                   const Eigen::Ref<const Eigen::MatrixXd>& Q,
                   const Eigen::Ref<const Eigen::MatrixXd>& A,
                   const Eigen::Ref<const Eigen::MatrixXd>& B, const DampedGram& gram,
                   NormKind norm) {
  if (norm == NormKind::Frobenius)
    return weighted_objective(residual(W, Q, A, B), gram.matrix);
  return discrepancy_with_root(W, Q, A, B, gram, build_root(gram), norm);
}

LayerReport build_layer_report(const std::string& layer_id,
                               const Eigen::Ref<const Eigen::MatrixXd>& W,
                               const LayerInitResult& result, const DampedGram& gram) {
  const RootTransform root = build_root(gram);
  const Eigen::MatrixXd empty(W.rows(), 0);
  const Eigen::MatrixXd empty_b(W.cols(), 0);

  LayerReport row;
  row.layer_id = layer_id;
  row.frob_disc =
      discrepancy_with_root(W, result.Q, result.A, result.B, gram, root, NormKind::Frobenius);
  row.spec_disc =
      discrepancy_with_root(W, result.Q, result.A, result.B, gram, root, NormKind::Spectral);
  row.frob_q_only =
      discrepancy_with_root(W, result.Q, empty, empty_b, gram, root, NormKind::Frobenius);

  if (result.rank >= 1) {
    const Eigen::MatrixXd delta = W - result.Q;
    const Eigen::Index r = std::min(result.rank, std::min(delta.rows(), delta.cols()));
    const TruncatedSvd plain = truncated_lr(delta, r);
    row.frob_baseline_loftq = weighted_objective(result.Q + plain.reconstruct() - W, gram.matrix);
  } else {
    row.frob_baseline_loftq = row.frob_q_only;
  }

  row.bits = result.grids.config.bits;
  row.rank = result.rank;
  row.group_size =
      result.grids.config.granularity == Granularity::PerGroup ? result.grids.config.group_size : 0;
  row.variant = std::string(variant_name(result.variant));
  row.lambda = result.lambda;
  row.uncalibrated = result.uncalibrated;
  check_dominance(row);
  return row;
}

nlohmann::json report_to_json(const RunReport& report) {
  nlohmann::json layers = nlohmann::json::array();
  double sum_frob = 0, max_frob = 0, sum_spec = 0, max_spec = 0;
  double sum_q = 0, max_q = 0, sum_base = 0, max_base = 0;
  for (const LayerReport& row : report.layers) {
    layers.push_back({{"layer_id", row.layer_id},
                      {"frob_disc", row.frob_disc},
                      {"spec_disc", row.spec_disc},
                      {"frob_q_only", row.frob_q_only},
                      {"frob_baseline_loftq", row.frob_baseline_loftq},
                      {"bits", row.bits},
                      {"rank", row.rank},
                      {"group_size", row.group_size},
                      {"variant", row.variant},
                      {"lambda", row.lambda},
                      {"uncalibrated", row.uncalibrated}});
    sum_frob += row.frob_disc;
    max_frob = std::max(max_frob, row.frob_disc);
    sum_spec += row.spec_disc;
    max_spec = std::max(max_spec, row.spec_disc);
    sum_q += row.frob_q_only;
    max_q = std::max(max_q, row.frob_q_only);
    sum_base += row.frob_baseline_loftq;
    max_base = std::max(max_base, row.frob_baseline_loftq);
  }
  const double count = static_cast<double>(report.layers.size());
  nlohmann::json aggregates = {
      {"frob_disc", {{"mean", sum_frob / count}, {"max", max_frob}}},
      {"spec_disc", {{"mean", sum_spec / count}, {"max", max_spec}}},
      {"frob_q_only", {{"mean", sum_q / count}, {"max", max_q}}},
      {"frob_baseline_loftq", {{"mean", sum_base / count}, {"max", max_base}}},
  };
  return {{"schema_version", RunReport::kSchemaVersion},
          {"toolkit_version", report.toolkit_version.empty() ? std::string(kVersion)
                                                             : report.toolkit_version},
          {"config", report.config_echo},
          {"layers", layers},
          {"aggregates", aggregates}};
}

RunReport report_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("layers"))
    throw DataError("run report: missing 'layers' array");
  const int version = j.value("schema_version", 0);
  if (version > RunReport::kSchemaVersion)
    throw DataError("run report schema version " + std::to_string(version) +
                    " is ahead of this reader");
  RunReport report;
  report.toolkit_version = j.value("toolkit_version", std::string(kVersion));
  if (j.contains("config")) report.config_echo = j.at("config");
  for (const nlohmann::json& row : j.at("layers")) {
    LayerReport layer;
    layer.layer_id = row.at("layer_id").get<std::string>();
    layer.frob_disc = row.at("frob_disc").get<double>();
    layer.spec_disc = row.at("spec_disc").get<double>();
    layer.frob_q_only = row.at("frob_q_only").get<double>();
    layer.frob_baseline_loftq = row.at("frob_baseline_loftq").get<double>();
    layer.bits = row.at("bits").get<int>();
    layer.rank = row.at("rank").get<std::int64_t>();
    layer.group_size = row.at("group_size").get<int>();
    layer.variant = row.at("variant").get<std::string>();
    layer.lambda = row.at("lambda").get<double>();
    layer.uncalibrated = row.value("uncalibrated", false);
    report.layers.push_back(std::move(layer));
  }
  return report;
}

std::string emit_report(const RunReport& report, ReportFormat format) {
  if (report.layers.empty()) throw DataError("emit_report: empty result list");

  if (format == ReportFormat::Json) return report_to_json(report).dump(2) + "\n";

  if (format == ReportFormat::Csv) {
    std::ostringstream out;
    out << "layer_id,frob_disc,spec_disc,frob_q_only,frob_baseline_loftq,bits,rank,group_size,"
           "variant,lambda\n";
    for (const LayerReport& row : report.layers) {
      out << row.layer_id << ',' << format_double(row.frob_disc) << ','
          << format_double(row.spec_disc) << ',' << format_double(row.frob_q_only) << ','
          << format_double(row.frob_baseline_loftq) << ',' << row.bits << ',' << row.rank << ','
          << row.group_size << ',' << row.variant << ',' << format_double(row.lambda) << '\n';
    }
    return out.str();
  }

  // Table: fixed-width human-readable summary.
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-24s %12s %12s %12s %12s %4s %5s %5s %-10s\n", "layer",
                "frob", "spectral", "q_only", "loftq_base", "bits", "rank", "group", "variant");
  out << line;
  for (const LayerReport& row : report.layers) {
    std::snprintf(line, sizeof(line), "%-24s %12.5e %12.5e %12.5e %12.5e %4d %5lld %5d %-10s\n",
                  row.layer_id.c_str(), row.frob_disc, row.spec_disc, row.frob_q_only,
                  row.frob_baseline_loftq, row.bits, static_cast<long long>(row.rank),
                  row.group_size, row.variant.c_str());
    out << line;
  }
  return out.str();
}

}  // namespace cloq
