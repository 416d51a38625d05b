#pragma once

// JSON forms of kernels, probability vectors and reversed plans. Doubles are
// written in shortest round-trip form, so reading back gives identical bits.

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "rldp/error.hpp"
#include "rldp/lowerbound.hpp"
#include "rldp/measures.hpp"

namespace rldp {

using Json = nlohmann::json;

inline Json to_json(const ProbVec& p) { return Json{{"weights", p.vec()}}; }

inline Json to_json(const Kernel& a) { return Json{{"d", a.dim()}, {"rows", a.rows()}}; }

namespace detail {

inline std::vector<double> number_array(const Json& j, const char* what) {
  if (!j.is_array()) throw PreconditionError(std::string(what) + ": expected an array of numbers");
  std::vector<double> v;
  for (const auto& x : j) {
    if (!x.is_number()) throw PreconditionError(std::string(what) + ": expected an array of numbers");
    v.push_back(x.get<double>());
  }
  return v;
}

inline std::vector<std::vector<double>> number_matrix(const Json& j, const char* what) {
  if (!j.is_array()) throw PreconditionError(std::string(what) + ": expected an array of rows");
  std::vector<std::vector<double>> rows;
  for (const auto& r : j) rows.push_back(number_array(r, what));
  return rows;
}

}  // namespace detail

/// {"weights": [...]} or a bare array.
inline ProbVec probvec_from_json(const Json& j) {
  if (j.is_object()) {
    if (!j.contains("weights")) throw PreconditionError("probability vector: missing \"weights\"");
    return ProbVec(detail::number_array(j.at("weights"), "weights"));
  }
  return ProbVec(detail::number_array(j, "probability vector"));
}

/// {"d": d, "rows": [[...], ...]}; "d" is optional but must match when given.
inline Kernel kernel_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("rows")) throw PreconditionError("kernel: missing \"rows\"");
  auto rows = detail::number_matrix(j.at("rows"), "kernel rows");
  if (j.contains("d") && (!j.at("d").is_number_integer() || j.at("d").get<std::size_t>() != rows.size()))
    throw PreconditionError("kernel: \"d\" does not match the number of rows");
  return Kernel(rows);
}

/// Exactly one of {"rows": ...}, {"qsd": {"p": [...]}} or
/// {"mixture": {"alpha": a, "p": [...], "B": [[...]]}}.
inline Kernel kernel_from_spec(const Json& j) {
  if (!j.is_object()) throw PreconditionError("kernel: expected an object");
  const int specs = static_cast<int>(j.contains("rows")) + static_cast<int>(j.contains("qsd")) +
                    static_cast<int>(j.contains("mixture"));
  if (specs != 1) throw PreconditionError("kernel: give exactly one of \"rows\", \"qsd\", \"mixture\"");
  if (j.contains("rows")) return kernel_from_json(j);
  if (j.contains("qsd")) {
    const Json& q = j.at("qsd");
    if (!q.is_object() || !q.contains("p")) throw PreconditionError("kernel.qsd: missing \"p\"");
    return build_kernel_qsd(ProbVec(detail::number_array(q.at("p"), "kernel.qsd.p")));
  }
  const Json& mx = j.at("mixture");
  if (!mx.is_object() || !mx.contains("alpha") || !mx.contains("p") || !mx.contains("B"))
    throw PreconditionError("kernel.mixture: needs \"alpha\", \"p\" and \"B\"");
  if (!mx.at("alpha").is_number()) throw PreconditionError("kernel.mixture.alpha: expected a number");
  return build_kernel_mixture(mx.at("alpha").get<double>(), ProbVec(detail::number_array(mx.at("p"), "kernel.mixture.p")),
                              detail::number_matrix(mx.at("B"), "kernel.mixture.B"));
}

/// Plan summary plus the control and trajectory grids. Grids longer than
/// max_rows are thinned to every stride-th interval (stride recorded).
inline Json plan_to_json(const ReversedPlan& plan, std::size_t max_rows = 20000) {
  const std::size_t blocks = plan.intervals();
  const std::size_t stride = std::max<std::size_t>(1, (blocks + max_rows - 1) / std::max<std::size_t>(1, max_rows));
  Json eta = Json::array();
  Json M = Json::array();
  for (std::size_t j = 0; j < blocks; j += stride) {
    const auto r = plan.eta_hat.row(j);
    eta.push_back(std::vector<double>(r.begin(), r.end()));
  }
  for (std::size_t j = 0; j <= blocks; j += stride) {
    const auto r = plan.M_hat.node(j);
    M.push_back(std::vector<double>(r.begin(), r.end()));
  }
  if (blocks % stride != 0) {
    const auto r = plan.M_hat.node(blocks);
    M.push_back(std::vector<double>(r.begin(), r.end()));
  }
  Json j;
  j["T"] = plan.horizon;
  j["q"] = plan.q.vec();
  j["target"] = plan.target.vec();
  j["target_mixed"] = plan.target_mixed.vec();
  j["delta"] = plan.delta;
  j["delta_guaranteed"] = plan.delta_guaranteed;
  j["kappas"] = {{"kappa1", plan.kappa1}, {"kappa2", plan.kappa2}, {"kappa3", plan.kappa3}};
  j["lipschitz_C1"] = plan.lipschitz;
  j["bounds"] = {{"step1_shift", plan.step1_shift},
                 {"step2_bound", plan.step2_bound},
                 {"step2_measured", plan.step2_measured},
                 {"step3_bound", plan.step3_bound},
                 {"step3_measured", plan.step3_measured},
                 {"target_error", plan.target_error},
                 {"target_error_bound", plan.target_error_bound}};
  j["costs"] = {{"solver", plan.solver_cost},  {"original", plan.original_cost}, {"step1", plan.step1_cost},
                {"step2", plan.step2_cost},    {"step3", plan.step3_cost},       {"step2_eps", plan.step2_eps},
                {"step3_eps", plan.step3_eps}};
  j["intervals"] = blocks;
  j["grid_stride"] = stride;
  j["eta_end"] = plan.eta_end;
  j["eta"] = std::move(eta);
  j["M"] = std::move(M);
  return j;
}

}  // namespace rldp
