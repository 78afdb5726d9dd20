#include "cloq/pipeline.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <thread>

#include "cloq/errors.hpp"
#include "cloq/version.hpp"

namespace cloq {

namespace {

std::string method_name(PtqMethod m) { return m == PtqMethod::Rtn ? "rtn" : "optq"; }

PtqMethod method_from_name(const std::string& s) {
  if (s == "rtn") return PtqMethod::Rtn;
  if (s == "optq") return PtqMethod::Optq;
  throw ConfigError("method: expected 'rtn' or 'optq', got '" + s + "'");
}

std::string granularity_name(Granularity g) {
  switch (g) {
    case Granularity::PerTensor: return "per_tensor";
    case Granularity::PerChannel: return "per_channel";
    case Granularity::PerGroup: return "per_group";
  }
  throw ConfigError("unknown granularity");
}

Granularity granularity_from_name(const std::string& s) {
  if (s == "per_tensor") return Granularity::PerTensor;
  if (s == "per_channel") return Granularity::PerChannel;
  if (s == "per_group") return Granularity::PerGroup;
  throw ConfigError("granularity: expected per_tensor|per_channel|per_group, got '" + s + "'");
}

std::string rounding_name(RoundingMode r) {
  return r == RoundingMode::HalfAwayFromZero ? "half_away_from_zero" : "half_to_even";
}

RoundingMode rounding_from_name(const std::string& s) {
  if (s == "half_away_from_zero") return RoundingMode::HalfAwayFromZero;
  if (s == "half_to_even") return RoundingMode::HalfToEven;
  throw ConfigError("rounding: expected half_away_from_zero|half_to_even, got '" + s + "'");
}

FactorVariant variant_from_name(const std::string& s) {
  if (s == "a-sigma") return FactorVariant::ASigma;
  if (s == "b-sigma") return FactorVariant::BSigma;
  if (s == "split-sqrt") return FactorVariant::SplitSqrt;
  throw ConfigError("variant: expected a-sigma|b-sigma|split-sqrt, got '" + s + "'");
}

struct LayerOutput {
  std::string layer_id;
  LayerInitResult result;
  LayerReport report;
};

LayerOutput process_layer(const TensorBundle& bundle, const LayerRecord& record,
                          const RunConfig& config) {
  const Eigen::MatrixXd W = entry_to_matrix(bundle.at(record.weight_name));
  const bool has_calibration = record.gram_name || record.activation_name;

  if (!has_calibration && config.ptq.method == PtqMethod::Optq)
    throw DataError("layer '" + record.layer_id + "': method optq requires '" + record.layer_id +
                    "/gram' or '" + record.layer_id + "/acts'");

  DampedGram gram;
  if (has_calibration) {
    gram = damp(gram_from_bundle(bundle, record), config.ptq.damp_ratio);
  } else {
    gram = identity_gram(W.rows());
  }

  LayerOutput out;
  out.layer_id = record.layer_id;
  if (config.quantize_only) {
    PtqResult ptq = config.ptq.method == PtqMethod::Rtn ? ptq_rtn(W, config.ptq)
                                                        : ptq_optq(W, gram, config.ptq);
    LayerInitResult& r = out.result;
    r.layer_id = record.layer_id;
    r.Q = std::move(ptq.Q);
    r.A = Eigen::MatrixXd(W.rows(), 0);
    r.B = Eigen::MatrixXd(W.cols(), 0);
    r.grids = std::move(ptq.grids);
    r.rank = 0;
    r.variant = config.init.variant;
    r.lambda = gram.lambda;
    r.gram_degenerate = gram.degenerate;
    r.magr_converged = ptq.magr_converged;
    r.obj_plain_q = r.obj_plain_total = (r.Q - W).norm();
    r.obj_weighted_q = r.obj_weighted_total = weighted_objective(r.Q - W, gram.matrix);
  } else {
    if (config.init.rank > std::min(record.input_dim, record.output_dim))
      throw DataError("layer '" + record.layer_id + "': rank " +
                      std::to_string(config.init.rank) + " exceeds min(m,n) = " +
                      std::to_string(std::min(record.input_dim, record.output_dim)));
    out.result = altmin_refine(W, gram, config.ptq, config.init);
    out.result.layer_id = record.layer_id;
  }
  out.result.uncalibrated = !has_calibration;
  out.report = build_layer_report(record.layer_id, W, out.result, gram);
  return out;
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  static const char* known[] = {"input_bundle", "output_bundle", "layers",      "method",
                                "bits",         "group_size",    "granularity", "rounding",
                                "magr_alpha",   "magr_iters",    "magr_tol",    "damp_ratio",
                                "rank",         "variant",       "altmin_iters", "eig_floor",
                                "workers",      "seed",          "report_path", "keep_going",
                                "emit_codes",   "quantize_only"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown config field '" + key + "'");
  }
  try {
    c.input_bundle = j.value("input_bundle", std::string());
    c.output_bundle = j.value("output_bundle", std::string());
    if (j.contains("layers")) c.layers = j.at("layers").get<std::vector<std::string>>();
    c.ptq.method = method_from_name(j.value("method", std::string("optq")));
    c.ptq.quant.bits = j.value("bits", 4);
    c.ptq.quant.group_size = j.value("group_size", 64);
    c.ptq.quant.granularity =
        granularity_from_name(j.value("granularity", std::string("per_group")));
    c.ptq.quant.rounding =
        rounding_from_name(j.value("rounding", std::string("half_away_from_zero")));
    const double magr_alpha = j.value("magr_alpha", 0.0);
    if (magr_alpha > 0) {
      MagrConfig magr;
      magr.alpha_scale = magr_alpha;
      magr.iters = j.value("magr_iters", 50);
      magr.tol = j.value("magr_tol", 1e-6);
      c.ptq.magr = magr;
    }
    c.ptq.damp_ratio = j.value("damp_ratio", 0.01);
    c.init.rank = j.value("rank", 64);
    c.init.variant = variant_from_name(j.value("variant", std::string("a-sigma")));
    c.init.altmin_iters = j.value("altmin_iters", 1);
    c.init.eig_floor_ratio = j.value("eig_floor", 1e-12);
    c.workers = j.value("workers", 1);
    c.seed = j.value("seed", std::uint64_t{0});
    c.report_path = j.value("report_path", std::string());
    c.keep_going = j.value("keep_going", false);
    c.emit_codes = j.value("emit_codes", false);
    c.quantize_only = j.value("quantize_only", false);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j{{"input_bundle", input_bundle},
                   {"output_bundle", output_bundle},
                   {"layers", layers},
                   {"method", method_name(ptq.method)},
                   {"bits", ptq.quant.bits},
                   {"group_size", ptq.quant.group_size},
                   {"granularity", granularity_name(ptq.quant.granularity)},
                   {"rounding", rounding_name(ptq.quant.rounding)},
                   {"magr_alpha", ptq.magr ? ptq.magr->alpha_scale : 0.0},
                   {"magr_iters", ptq.magr ? ptq.magr->iters : 50},
                   {"magr_tol", ptq.magr ? ptq.magr->tol : 1e-6},
                   {"damp_ratio", ptq.damp_ratio},
                   {"rank", init.rank},
                   {"variant", std::string(variant_name(init.variant))},
                   {"altmin_iters", init.altmin_iters},
                   {"eig_floor", init.eig_floor_ratio},
                   {"workers", workers},
                   {"seed", seed},
                   {"report_path", report_path},
                   {"keep_going", keep_going},
                   {"emit_codes", emit_codes},
                   {"quantize_only", quantize_only}};
  return j;
}

void RunConfig::validate() const {
  if (input_bundle.empty()) throw ConfigError("input_bundle must be set");
  if (output_bundle.empty()) throw ConfigError("output_bundle must be set");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  ptq.validate();
  if (!quantize_only) init.validate();
}

std::vector<LayerRecord> scan_layers(const TensorBundle& bundle) {
  std::vector<LayerRecord> records;
  for (const auto& [name, entry] : bundle.entries) {
    if (name.size() < 3 || name.substr(name.size() - 2) != "/W") continue;
    if (entry.shape.size() != 2) continue;
    if (entry.dtype != Dtype::F32)
      throw DataError("entry '" + name + "': weights must be f32");
    LayerRecord record;
    record.layer_id = name.substr(0, name.size() - 2);
    record.weight_name = name;
    record.input_dim = entry.shape[0];
    record.output_dim = entry.shape[1];
    const std::string gram_name = record.layer_id + "/gram";
    const std::string acts_name = record.layer_id + "/acts";
    if (bundle.contains(gram_name)) record.gram_name = gram_name;
    if (bundle.contains(acts_name)) record.activation_name = acts_name;
    if (record.gram_name && record.activation_name)
      throw DataError("layer '" + record.layer_id + "': both gram and activation tensors present");
    records.push_back(std::move(record));
  }
  return records;  // bundle map iteration is sorted, so records are too
}

bool glob_match(std::string_view pattern, std::string_view name) {
  std::size_t p = 0, n = 0;
  std::size_t star = std::string_view::npos, star_n = 0;
  while (n < name.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == name[n])) {
      ++p;
      ++n;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      star_n = n;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      n = ++star_n;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

std::vector<LayerRecord> select_layers(const std::vector<LayerRecord>& records,
                                       const std::vector<std::string>& patterns) {
  if (patterns.empty()) return records;
  std::vector<LayerRecord> selected;
  for (const LayerRecord& record : records) {
    for (const std::string& pattern : patterns) {
      if (glob_match(pattern, record.layer_id)) {
        selected.push_back(record);
        break;
      }
    }
  }
  return selected;
}

int effective_workers(const RunConfig& config) {
  if (const char* env = std::getenv("CLOQ_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw ConfigError("CLOQ_WORKERS must be a positive integer");
    return static_cast<int>(v);
  }
  return config.workers;
}

RunOutcome run(const RunConfig& config) {
  config.validate();
  const TensorBundle input = load_bundle(config.input_bundle);
  const std::vector<LayerRecord> all = scan_layers(input);
  const std::vector<LayerRecord> selected = select_layers(all, config.layers);
  if (selected.empty()) throw DataError("no layers selected from '" + config.input_bundle + "'");

  const int workers = std::min<int>(effective_workers(config),
                                    static_cast<int>(selected.size()));

  std::vector<std::optional<LayerOutput>> outputs(selected.size());
  std::vector<std::exception_ptr> failures(selected.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};

  auto worker = [&]() {
    while (true) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= selected.size()) return;
      if (abort.load()) return;
      try {
        outputs[idx] = process_layer(input, selected[idx], config);
      } catch (...) {
        failures[idx] = std::current_exception();
        if (!config.keep_going) abort.store(true);
      }
    }
  };

  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  RunOutcome outcome;
  // Fail fast: surface the first failing layer in layer order, deterministically.
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (failures[i]) {
      if (!config.keep_going) std::rethrow_exception(failures[i]);
      outcome.failed_layers.push_back(selected[i].layer_id);
    }
  }
  if (!config.keep_going) {
    for (std::size_t i = 0; i < selected.size(); ++i)
      if (!outputs[i])
        throw DataError("layer '" + selected[i].layer_id + "' was not processed (aborted run)");
  }

  TensorBundle out_bundle;
  outcome.report.toolkit_version = std::string(kVersion);
  outcome.report.config_echo = config.to_json();
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (!outputs[i]) continue;
    const LayerOutput& out = *outputs[i];
    const std::string& id = out.layer_id;
    out_bundle.add(id + "/Q", make_f32_entry(out.result.Q));
    if (!config.quantize_only) {
      out_bundle.add(id + "/A", make_f16_entry(out.result.A));
      out_bundle.add(id + "/B", make_f16_entry(out.result.B));
    }
    out_bundle.add(id + "/scales", make_f32_entry(out.result.grids.scales()));
    out_bundle.add(id + "/zeros", make_f32_entry(out.result.grids.zero_points()));
    if (config.emit_codes) {
      CodeMatrix codes(out.result.Q.rows(), out.result.Q.cols());
      // recompute codes from the on-grid Q (kept out of LayerInitResult to keep it lean)
      const std::vector<std::int32_t> row_group =
          out.result.grids.row_to_group(out.result.Q.rows());
      for (Eigen::Index r = 0; r < out.result.Q.rows(); ++r)
        for (Eigen::Index c = 0; c < out.result.Q.cols(); ++c)
          codes(r, c) = out.result.grids.at(row_group[static_cast<std::size_t>(r)], c)
                            .encode(out.result.Q(r, c));
      out_bundle.add(id + "/codes", make_u8_entry(codes));
    }
    outcome.report.layers.push_back(out.report);
  }
  if (outcome.report.layers.empty())
    throw DataError("all selected layers failed; nothing to write");

  save_bundle(out_bundle, config.output_bundle);

  const std::string report_path =
      config.report_path.empty() ? config.output_bundle + ".report.json" : config.report_path;
  const std::string rendered = emit_report(outcome.report, ReportFormat::Json);
  {
    const std::string tmp = report_path + ".tmp";
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open report path '" + report_path + "'");
    out << rendered;
    out.flush();
    if (!out) throw DataError("report write failed");
    std::filesystem::rename(tmp, report_path);
  }
  return outcome;
}

std::vector<ConfigDiagnostic> validate_config_file(const std::filesystem::path& path) {
  std::vector<ConfigDiagnostic> diagnostics;
  std::ifstream in(path);
  if (!in) {
    diagnostics.push_back({"", "cannot open config file '" + path.string() + "'"});
    return diagnostics;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    diagnostics.push_back({"", std::string("parse error: ") + e.what()});
    return diagnostics;
  }

  RunConfig config;
  try {
    config = RunConfig::from_json(j);
  } catch (const ConfigError& e) {
    diagnostics.push_back({"", e.what()});
    return diagnostics;
  }

  const auto field_check = [&](const char* field, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      diagnostics.push_back({field, e.what()});
    }
  };
  field_check("bits", [&] { config.ptq.quant.validate(); });
  field_check("damp_ratio", [&] {
    if (config.ptq.damp_ratio < 0) throw ConfigError("damp_ratio must be >= 0");
  });
  if (!config.quantize_only) field_check("rank", [&] { config.init.validate(); });
  field_check("workers", [&] {
    if (config.workers < 1) throw ConfigError("workers must be >= 1");
  });
  if (config.input_bundle.empty())
    diagnostics.push_back({"input_bundle", "input_bundle must be set"});
  if (config.output_bundle.empty())
    diagnostics.push_back({"output_bundle", "output_bundle must be set"});

  // Cross-checks against the bundle, when it is reachable.
  if (!config.input_bundle.empty() && std::filesystem::exists(config.input_bundle)) {
    try {
      const TensorBundle bundle = load_bundle(config.input_bundle);
      const std::vector<LayerRecord> selected =
          select_layers(scan_layers(bundle), config.layers);
      if (selected.empty())
        diagnostics.push_back({"layers", "selection matches no layers in the input bundle"});
      for (const LayerRecord& record : selected) {
        const std::int64_t cap = std::min(record.input_dim, record.output_dim);
        if (!config.quantize_only && config.init.rank > cap)
          diagnostics.push_back(
              {"rank", "rank " + std::to_string(config.init.rank) + " exceeds min(m,n) = " +
                           std::to_string(cap) + " for layer '" + record.layer_id + "'"});
        if (config.ptq.method == PtqMethod::Optq && !record.gram_name &&
            !record.activation_name)
          diagnostics.push_back({"method", "layer '" + record.layer_id +
                                               "' has no gram/activations but method is optq"});
      }
    } catch (const Error& e) {
      diagnostics.push_back({"input_bundle", e.what()});
    }
  }
  return diagnostics;
}

void precompute_grams(const std::filesystem::path& input, const std::filesystem::path& output,
                      const std::vector<std::string>& layer_patterns) {
  const TensorBundle in_bundle = load_bundle(input);
  const std::vector<LayerRecord> selected =
      select_layers(scan_layers(in_bundle), layer_patterns);

  std::vector<std::string> replaced;
  TensorBundle out_bundle;
  out_bundle.creator = in_bundle.creator;
  for (const LayerRecord& record : selected) {
    if (!record.activation_name) continue;
    GramAccumulator acc = gram_from_bundle(in_bundle, record);
    out_bundle.add(record.layer_id + "/gram", make_f32_entry(acc.sum));
    replaced.push_back(*record.activation_name);
  }
  for (const auto& [name, entry] : in_bundle.entries) {
    if (std::find(replaced.begin(), replaced.end(), name) != replaced.end()) continue;
    out_bundle.add(name, entry);
  }
  save_bundle(out_bundle, output);
}

}  // namespace cloq
