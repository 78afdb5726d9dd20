#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cloq/errors.hpp"
#include "cloq/pipeline.hpp"
#include "cloq/version.hpp"

namespace {

using cloq::RunConfig;

struct CommonFlags {
  std::string config_path;
  std::string input, output, report_path;
  std::vector<std::string> layers;
  std::string method, granularity, rounding, variant;
  int bits = 0, group_size = 0, magr_iters = 0, altmin_iters = 0, workers = 0;
  double magr_alpha = 0, magr_tol = 0, damp_ratio = 0, eig_floor = 0;
  std::int64_t rank = 0;
  std::uint64_t seed = 0;
  bool keep_going = false, emit_codes = false;
};

void add_common_options(CLI::App* cmd, CommonFlags& f, bool with_init_flags) {
  cmd->add_option("--config", f.config_path, "JSON config file; flags override its values");
  cmd->add_option("-i,--input", f.input, "input bundle path");
  cmd->add_option("-o,--output", f.output, "output bundle path");
  cmd->add_option("--layers", f.layers, "layer-id globs (default: all layers)");
  cmd->add_option("--method", f.method, "PTQ method: rtn|optq")
      ->check(CLI::IsMember({"rtn", "optq"}));
  cmd->add_option("--bits", f.bits, "quantizer bit-width (2..8)");
  cmd->add_option("--group-size", f.group_size, "rows per quantization group");
  cmd->add_option("--granularity", f.granularity, "per_tensor|per_channel|per_group")
      ->check(CLI::IsMember({"per_tensor", "per_channel", "per_group"}));
  cmd->add_option("--rounding", f.rounding, "half_away_from_zero|half_to_even")
      ->check(CLI::IsMember({"half_away_from_zero", "half_to_even"}));
  cmd->add_option("--magr-alpha", f.magr_alpha,
                  "magnitude-reduction strength relative to mean|W| (0 disables)");
  cmd->add_option("--magr-iters", f.magr_iters, "magnitude-reduction iteration cap");
  cmd->add_option("--magr-tol", f.magr_tol, "magnitude-reduction relative objective tolerance");
  cmd->add_option("--damp-ratio", f.damp_ratio, "Gram damping: lambda = ratio * Tr(H)/m");
  cmd->add_option("--workers", f.workers, "parallel layer jobs (env CLOQ_WORKERS overrides)");
  cmd->add_option("--report", f.report_path, "report path (default <output>.report.json)");
  cmd->add_option("--seed", f.seed, "seed echoed into the config (pipeline is deterministic)");
  cmd->add_flag("--keep-going", f.keep_going, "continue past failing layers");
  cmd->add_flag("--emit-codes", f.emit_codes, "also write u8 integer codes per layer");
  if (with_init_flags) {
    cmd->add_option("--rank", f.rank, "adapter rank");
    cmd->add_option("--variant", f.variant, "factor variant: a-sigma|b-sigma|split-sqrt")
        ->check(CLI::IsMember({"a-sigma", "b-sigma", "split-sqrt"}));
    cmd->add_option("--altmin-iters", f.altmin_iters, "alternating-minimization iterations");
    cmd->add_option("--eig-floor", f.eig_floor, "relative eigenvalue floor for rank decisions");
  }
}

RunConfig build_config(const CLI::App* cmd, const CommonFlags& f, bool quantize_only) {
  nlohmann::json j = nlohmann::json::object();
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw cloq::ConfigError("cannot open config file '" + f.config_path + "'");
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw cloq::ConfigError(std::string("config parse error: ") + e.what());
    }
  }
  const auto passed = [&](const std::string& name) { return cmd->count(name) > 0; };
  if (passed("--input")) j["input_bundle"] = f.input;
  if (passed("--output")) j["output_bundle"] = f.output;
  if (passed("--layers")) j["layers"] = f.layers;
  if (passed("--method")) j["method"] = f.method;
  if (passed("--bits")) j["bits"] = f.bits;
  if (passed("--group-size")) j["group_size"] = f.group_size;
  if (passed("--granularity")) j["granularity"] = f.granularity;
  if (passed("--rounding")) j["rounding"] = f.rounding;
  if (passed("--magr-alpha")) j["magr_alpha"] = f.magr_alpha;
  if (passed("--magr-iters")) j["magr_iters"] = f.magr_iters;
  if (passed("--magr-tol")) j["magr_tol"] = f.magr_tol;
  if (passed("--damp-ratio")) j["damp_ratio"] = f.damp_ratio;
  if (passed("--workers")) j["workers"] = f.workers;
  if (passed("--report")) j["report_path"] = f.report_path;
  if (passed("--seed")) j["seed"] = f.seed;
  if (f.keep_going) j["keep_going"] = true;
  if (f.emit_codes) j["emit_codes"] = true;
  if (!quantize_only) {
    if (passed("--rank")) j["rank"] = f.rank;
    if (passed("--variant")) j["variant"] = f.variant;
    if (passed("--altmin-iters")) j["altmin_iters"] = f.altmin_iters;
    if (passed("--eig-floor")) j["eig_floor"] = f.eig_floor;
  }
  j["quantize_only"] = quantize_only;
  return RunConfig::from_json(j);
}

int run_pipeline(const RunConfig& config) {
  const cloq::RunOutcome outcome = cloq::run(config);
  for (const std::string& failed : outcome.failed_layers)
    std::cerr << "warning: layer '" << failed << "' failed and was skipped\n";
  std::cout << "wrote " << config.output_bundle << " ("
            << outcome.report.layers.size() << " layers)\n";
  return outcome.failed_layers.empty() ? 0 : 3;
}

int run_report(const std::string& from, const std::string& format, const std::string& output) {
  std::ifstream in(from);
  if (!in) throw cloq::DataError("cannot open run report '" + from + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw cloq::DataError(std::string("report parse error: ") + e.what());
  }
  const cloq::RunReport report = cloq::report_from_json(j);
  cloq::ReportFormat fmt = cloq::ReportFormat::Table;
  if (format == "json") fmt = cloq::ReportFormat::Json;
  else if (format == "csv") fmt = cloq::ReportFormat::Csv;
  const std::string rendered = cloq::emit_report(report, fmt);
  if (output.empty() || output == "-") {
    std::cout << rendered;
  } else {
    std::ofstream out(output, std::ios::binary | std::ios::trunc);
    if (!out) throw cloq::DataError("cannot open output '" + output + "'");
    out << rendered;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"calibrated post-training quantization with closed-form low-rank adapter "
               "initialization"};
  app.set_version_flag("--version", std::string(cloq::kVersion));
  app.require_subcommand(1);

  CommonFlags init_flags, quant_flags;
  CLI::App* cmd_init = app.add_subcommand(
      "init", "quantize selected layers and compute optimal rank-r adapters");
  add_common_options(cmd_init, init_flags, true);
  CLI::App* cmd_quant =
      app.add_subcommand("quantize", "post-training quantization only (no adapters)");
  add_common_options(cmd_quant, quant_flags, false);

  std::string gram_input, gram_output;
  std::vector<std::string> gram_layers;
  CLI::App* cmd_gram =
      app.add_subcommand("gram", "replace activation tensors with precomputed Gram matrices");
  cmd_gram->add_option("-i,--input", gram_input, "input bundle path")->required();
  cmd_gram->add_option("-o,--output", gram_output, "output bundle path")->required();
  cmd_gram->add_option("--layers", gram_layers, "layer-id globs (default: all layers)");

  std::string report_from, report_format = "table", report_output;
  CLI::App* cmd_report = app.add_subcommand("report", "render a run report");
  cmd_report->add_option("--from", report_from, "run-report JSON written by init/quantize")
      ->required();
  cmd_report->add_option("--format", report_format, "json|csv|table")
      ->check(CLI::IsMember({"json", "csv", "table"}));
  cmd_report->add_option("-o,--output", report_output, "output path (default stdout)");

  std::string validate_config;
  CLI::App* cmd_validate = app.add_subcommand("validate", "check a config file without running");
  cmd_validate->add_option("--config", validate_config, "JSON config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (cmd_init->parsed()) return run_pipeline(build_config(cmd_init, init_flags, false));
    if (cmd_quant->parsed()) return run_pipeline(build_config(cmd_quant, quant_flags, true));
    if (cmd_gram->parsed()) {
      cloq::precompute_grams(gram_input, gram_output, gram_layers);
      std::cout << "wrote " << gram_output << "\n";
      return 0;
    }
    if (cmd_report->parsed()) return run_report(report_from, report_format, report_output);
    if (cmd_validate->parsed()) {
      const std::vector<cloq::ConfigDiagnostic> diagnostics =
          cloq::validate_config_file(validate_config);
      for (const cloq::ConfigDiagnostic& d : diagnostics) {
        if (d.field.empty())
          std::cerr << "config: " << d.message << "\n";
        else
          std::cerr << "config." << d.field << ": " << d.message << "\n";
      }
      if (diagnostics.empty()) std::cout << "ok\n";
      return diagnostics.empty() ? 0 : 2;
    }
  } catch (const cloq::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const cloq::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const cloq::NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
