#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "cloq/calibration.hpp"
#include "cloq/diagnostics.hpp"
#include "cloq/errors.hpp"
#include "cloq/lowrank.hpp"
#include "cloq/ptq.hpp"
#include "cloq/quant.hpp"
#include "cloq/tensor_store.hpp"
#include "cloq/version.hpp"

namespace py = pybind11;

namespace {

using cloq::DampedGram;
using cloq::Dtype;
using cloq::TensorBundle;
using cloq::TensorEntry;

cloq::Granularity parse_granularity(const std::string& s) {
  if (s == "per_tensor") return cloq::Granularity::PerTensor;
  if (s == "per_channel") return cloq::Granularity::PerChannel;
  if (s == "per_group") return cloq::Granularity::PerGroup;
  throw cloq::ConfigError("granularity: expected per_tensor|per_channel|per_group");
}

cloq::RoundingMode parse_rounding(const std::string& s) {
  if (s == "half_away_from_zero") return cloq::RoundingMode::HalfAwayFromZero;
  if (s == "half_to_even") return cloq::RoundingMode::HalfToEven;
  throw cloq::ConfigError("rounding: expected half_away_from_zero|half_to_even");
}

cloq::FactorVariant parse_variant(const std::string& s) {
  if (s == "a-sigma") return cloq::FactorVariant::ASigma;
  if (s == "b-sigma") return cloq::FactorVariant::BSigma;
  if (s == "split-sqrt") return cloq::FactorVariant::SplitSqrt;
  throw cloq::ConfigError("variant: expected a-sigma|b-sigma|split-sqrt");
}

cloq::QuantConfig make_quant_config(int bits, int group_size, const std::string& granularity,
                                    const std::string& rounding) {
  cloq::QuantConfig cfg;
  cfg.bits = bits;
  cfg.group_size = group_size;
  cfg.granularity = parse_granularity(granularity);
  cfg.rounding = parse_rounding(rounding);
  return cfg;
}

DampedGram as_damped(const Eigen::MatrixXd& h, double lambda) {
  DampedGram gram;
  gram.matrix = h;
  gram.lambda = lambda;
  gram.trace_pre = h.trace() - lambda * static_cast<double>(h.rows());
  return gram;
}

py::array entry_to_array(const TensorEntry& entry) {
  std::vector<py::ssize_t> shape(entry.shape.begin(), entry.shape.end());
  py::dtype dt = entry.dtype == Dtype::F32   ? py::dtype("float32")
                 : entry.dtype == Dtype::F16 ? py::dtype("float16")
                                             : py::dtype("uint8");
  py::array arr(dt, shape);
  std::memcpy(arr.mutable_data(), entry.data.data(), entry.data.size());
  return arr;
}

TensorEntry array_to_entry(const py::array& input) {
  py::array arr = py::array::ensure(input, py::array::c_style);
  TensorEntry entry;
  const py::dtype dt = arr.dtype();
  if (dt.equal(py::dtype("float32"))) entry.dtype = Dtype::F32;
  else if (dt.equal(py::dtype("float16"))) entry.dtype = Dtype::F16;
  else if (dt.equal(py::dtype("uint8"))) entry.dtype = Dtype::U8;
  else throw cloq::DataError("bundle arrays must be float32, float16 or uint8");
  for (py::ssize_t d = 0; d < arr.ndim(); ++d) entry.shape.push_back(arr.shape(d));
  entry.data.resize(static_cast<std::size_t>(arr.nbytes()));
  std::memcpy(entry.data.data(), arr.data(), entry.data.size());
  return entry;
}

py::dict quant_result_dict(cloq::PtqResult&& result) {
  py::dict out;
  out["Q"] = std::move(result.Q);
  py::array_t<std::uint8_t> codes({result.codes.rows(), result.codes.cols()});
  for (Eigen::Index i = 0; i < result.codes.rows(); ++i)
    for (Eigen::Index j = 0; j < result.codes.cols(); ++j)
      codes.mutable_at(i, j) = result.codes(i, j);
  out["codes"] = std::move(codes);
  out["scales"] = result.grids.scales();
  out["zeros"] = result.grids.zero_points();
  out["obj_plain"] = result.obj_plain;
  out["obj_weighted"] = result.obj_weighted;
  out["W_pre"] = std::move(result.W_pre);
  out["magr_converged"] = result.magr_converged;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "calibrated quantization and closed-form low-rank adapter initialization";
  m.attr("__version__") = std::string(cloq::kVersion);

  py::register_exception<cloq::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<cloq::DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<cloq::NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "fit_grid",
      [](const Eigen::VectorXd& w, int bits, const std::string& rounding) {
        cloq::QuantConfig cfg;
        cfg.bits = bits;
        cfg.rounding = parse_rounding(rounding);
        const cloq::QuantGrid grid = cloq::fit_grid(w, cfg);
        py::dict out;
        out["delta"] = grid.delta;
        out["zero_point"] = grid.zero_point;
        out["bits"] = grid.bits;
        return out;
      },
      py::arg("w"), py::arg("bits") = 4, py::arg("rounding") = "half_away_from_zero",
      "Scale and zero-point for one group of weights");

  m.def(
      "quantize_rtn",
      [](const Eigen::VectorXd& w, double delta, std::int64_t zero_point, int bits,
         const std::string& rounding) {
        cloq::QuantGrid grid;
        grid.delta = delta;
        grid.zero_point = zero_point;
        grid.bits = bits;
        grid.rounding = parse_rounding(rounding);
        const cloq::QuantizedGroup group = cloq::quantize_rtn(w, grid);
        py::array_t<std::uint8_t> codes(static_cast<py::ssize_t>(group.codes.size()));
        std::memcpy(codes.mutable_data(), group.codes.data(), group.codes.size());
        return py::make_tuple(codes, group.dequantize());
      },
      py::arg("w"), py::arg("delta"), py::arg("zero_point"), py::arg("bits") = 4,
      py::arg("rounding") = "half_away_from_zero",
      "Round-to-nearest projection onto a grid; returns (codes, dequantized)");

  m.def(
      "gram",
      [](const Eigen::MatrixXd& x) {
        cloq::GramAccumulator acc(x.cols());
        cloq::accumulate(acc, x);
        return acc.sum;
      },
      py::arg("x"), "X^T X accumulated in f64");

  m.def(
      "damp",
      [](const Eigen::MatrixXd& h, double ratio) {
        cloq::GramAccumulator acc(h.rows());
        acc.sum = h;
        const DampedGram damped = cloq::damp(acc, ratio);
        return py::make_tuple(damped.matrix, damped.lambda);
      },
      py::arg("h"), py::arg("ratio") = 0.01,
      "Adds lambda = ratio*Tr(H)/m to the diagonal; returns (H_damped, lambda)");

  m.def(
      "weighted_objective",
      [](const Eigen::MatrixXd& m_, const Eigen::MatrixXd& h) {
        return cloq::weighted_objective(m_, h);
      },
      py::arg("m"), py::arg("h"), "sqrt(Tr(M^T H M))");

  m.def(
      "ptq_rtn",
      [](const Eigen::MatrixXd& w, int bits, int group_size, const std::string& granularity,
         const std::string& rounding) {
        cloq::PtqConfig cfg;
        cfg.method = cloq::PtqMethod::Rtn;
        cfg.quant = make_quant_config(bits, group_size, granularity, rounding);
        return quant_result_dict(cloq::ptq_rtn(w, cfg));
      },
      py::arg("w"), py::arg("bits") = 4, py::arg("group_size") = 64,
      py::arg("granularity") = "per_group", py::arg("rounding") = "half_away_from_zero");

  m.def(
      "ptq_optq",
      [](const Eigen::MatrixXd& w, const Eigen::MatrixXd& h_damped, int bits, int group_size,
         const std::string& granularity, const std::string& rounding, double magr_alpha,
         int magr_iters, double magr_tol) {
        cloq::PtqConfig cfg;
        cfg.method = cloq::PtqMethod::Optq;
        cfg.quant = make_quant_config(bits, group_size, granularity, rounding);
        if (magr_alpha > 0) cfg.magr = cloq::MagrConfig{magr_alpha, magr_iters, magr_tol};
        return quant_result_dict(cloq::ptq_optq(w, as_damped(h_damped, 0.0), cfg));
      },
      py::arg("w"), py::arg("h_damped"), py::arg("bits") = 4, py::arg("group_size") = 64,
      py::arg("granularity") = "per_group", py::arg("rounding") = "half_away_from_zero",
      py::arg("magr_alpha") = 0.0, py::arg("magr_iters") = 50, py::arg("magr_tol") = 1e-6,
      "Greedy error-compensating quantization against a damped Gram");

  m.def(
      "magr",
      [](const Eigen::MatrixXd& w, const Eigen::MatrixXd& h_damped, double alpha, int iters,
         double tol) {
        const cloq::MagrResult result =
            cloq::magr_preprocess(w, as_damped(h_damped, 0.0), alpha, iters, tol);
        return py::make_tuple(result.W, result.converged);
      },
      py::arg("w"), py::arg("h_damped"), py::arg("alpha"), py::arg("iters") = 50,
      py::arg("tol") = 1e-6, "l-inf-regularized magnitude reduction; returns (W_pre, converged)");

  m.def(
      "truncated_lr",
      [](const Eigen::MatrixXd& m_, Eigen::Index r) {
        const cloq::TruncatedSvd svd = cloq::truncated_lr(m_, r);
        return py::make_tuple(svd.U, svd.S, svd.V);
      },
      py::arg("m"), py::arg("r"), "Best rank-r factors (U, S, V) of m");

  m.def(
      "lowrank_init",
      [](const Eigen::MatrixXd& delta_w, const Eigen::MatrixXd& h_damped, Eigen::Index rank,
         const std::string& variant, double eig_floor) {
        cloq::InitConfig cfg;
        cfg.rank = rank;
        cfg.variant = parse_variant(variant);
        cfg.eig_floor_ratio = eig_floor;
        const cloq::RootTransform root = cloq::build_root(as_damped(h_damped, 0.0), eig_floor);
        const cloq::AdapterPair pair = cloq::cloq_init(delta_w, root, cfg);
        return py::make_tuple(pair.A, pair.B);
      },
      py::arg("delta_w"), py::arg("h_damped"), py::arg("rank"), py::arg("variant") = "a-sigma",
      py::arg("eig_floor") = 1e-12,
      "Closed-form optimal (A, B) for min ||X(A B^T - delta_w)||_F^2");

  m.def(
      "layer_init",
      [](const Eigen::MatrixXd& w, const Eigen::MatrixXd& h, const std::string& method, int bits,
         int group_size, const std::string& granularity, const std::string& rounding,
         double magr_alpha, int magr_iters, double magr_tol, double damp_ratio, Eigen::Index rank,
         const std::string& variant, int altmin_iters, double eig_floor) {
        cloq::PtqConfig cfg_ptq;
        cfg_ptq.method = method == "rtn" ? cloq::PtqMethod::Rtn : cloq::PtqMethod::Optq;
        if (method != "rtn" && method != "optq")
          throw cloq::ConfigError("method: expected rtn|optq");
        cfg_ptq.quant = make_quant_config(bits, group_size, granularity, rounding);
        if (magr_alpha > 0) cfg_ptq.magr = cloq::MagrConfig{magr_alpha, magr_iters, magr_tol};
        cfg_ptq.damp_ratio = damp_ratio;
        cloq::InitConfig cfg_init;
        cfg_init.rank = rank;
        cfg_init.variant = parse_variant(variant);
        cfg_init.altmin_iters = altmin_iters;
        cfg_init.eig_floor_ratio = eig_floor;
        cloq::GramAccumulator acc(h.rows());
        acc.sum = h;
        cloq::LayerInitResult result = cloq::layer_pipeline(w, acc, cfg_ptq, cfg_init);
        py::dict out;
        out["Q"] = std::move(result.Q);
        out["A"] = std::move(result.A);
        out["B"] = std::move(result.B);
        out["scales"] = result.grids.scales();
        out["zeros"] = result.grids.zero_points();
        out["lambda"] = result.lambda;
        out["obj_weighted_q"] = result.obj_weighted_q;
        out["obj_weighted_total"] = result.obj_weighted_total;
        out["obj_plain_q"] = result.obj_plain_q;
        out["obj_plain_total"] = result.obj_plain_total;
        out["objective_trace"] = result.objective_trace;
        return out;
      },
      py::arg("w"), py::arg("h"), py::arg("method") = "optq", py::arg("bits") = 4,
      py::arg("group_size") = 64, py::arg("granularity") = "per_group",
      py::arg("rounding") = "half_away_from_zero", py::arg("magr_alpha") = 0.0,
      py::arg("magr_iters") = 50, py::arg("magr_tol") = 1e-6, py::arg("damp_ratio") = 0.01,
      py::arg("rank") = 64, py::arg("variant") = "a-sigma", py::arg("altmin_iters") = 1,
      py::arg("eig_floor") = 1e-12,
      "Full per-layer pipeline: damping, PTQ, closed-form adapter init");

  m.def(
      "discrepancy",
      [](const Eigen::MatrixXd& w, const Eigen::MatrixXd& q, const Eigen::MatrixXd& a,
         const Eigen::MatrixXd& b, const Eigen::MatrixXd& h_damped, const std::string& norm) {
        cloq::NormKind kind;
        if (norm == "frobenius") kind = cloq::NormKind::Frobenius;
        else if (norm == "spectral") kind = cloq::NormKind::Spectral;
        else throw cloq::ConfigError("norm: expected frobenius|spectral");
        return cloq::discrepancy(w, q, a, b, as_damped(h_damped, 0.0), kind);
      },
      py::arg("w"), py::arg("q"), py::arg("a"), py::arg("b"), py::arg("h_damped"),
      py::arg("norm") = "frobenius", "||X(Q + A B^T - W)|| through the damped Gram");

  m.def(
      "write_bundle",
      [](const std::string& path, const py::dict& tensors) {
        TensorBundle bundle;
        for (const auto& item : tensors)
          bundle.add(item.first.cast<std::string>(), array_to_entry(item.second.cast<py::array>()));
        return cloq::save_bundle(bundle, path);
      },
      py::arg("path"), py::arg("tensors"),
      "Writes a dict of float32/float16/uint8 arrays as a tensor bundle");

  m.def(
      "read_bundle",
      [](const std::string& path) {
        const TensorBundle bundle = cloq::load_bundle(path);
        py::dict out;
        for (const auto& [name, entry] : bundle.entries) out[name.c_str()] = entry_to_array(entry);
        return out;
      },
      py::arg("path"), "Reads a tensor bundle into a dict of numpy arrays");
}
