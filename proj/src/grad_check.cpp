#include "cvsa/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace cvsa {

namespace {

struct Eval {
  double value;
  std::uint64_t signature;
};

Eval evaluate(const ForwardFn& f, const std::vector<Tensor>& params, StopGradLog* log) {
  GradientTape tape(log);
  std::vector<NodeId> ids;
  ids.reserve(params.size());
  for (const Tensor& p : params) ids.push_back(tape.param(p));
  const NodeId root = f(tape, ids);
  const Tensor& v = tape.value(root);
  if (v.size() != 1) {
    throw std::invalid_argument("grad_check: f must produce a scalar, got shape " +
                                shape_str(v.shape()));
  }
  if (!std::isfinite(v[0])) throw std::runtime_error("grad_check: f evaluated to a non-finite value");
  return Eval{v[0], tape.selection_signature()};
}

}  // namespace

GradCheckResult grad_check(const ForwardFn& f, const std::vector<Tensor>& params,
                           const std::vector<std::string>& names, const GradCheckConfig& cfg) {
  if (cfg.h < 1e-6 || cfg.h > 1e-2) {
    throw std::invalid_argument("grad_check: h must lie in [1e-6, 1e-2]");
  }
  if (names.size() != params.size()) {
    throw std::invalid_argument("grad_check: names/params length mismatch");
  }

  // Reference pass: tape gradients, selection signature, stop-grad recording.
  StopGradLog log;
  log.mode = StopGradLog::Mode::record;
  GradientTape ref_tape(&log);
  std::vector<NodeId> ids;
  ids.reserve(params.size());
  for (const Tensor& p : params) ids.push_back(ref_tape.param(p));
  const NodeId root = f(ref_tape, ids);
  const Tensor& root_v = ref_tape.value(root);
  if (root_v.size() != 1) {
    throw std::invalid_argument("grad_check: f must produce a scalar, got shape " +
                                shape_str(root_v.shape()));
  }
  if (!std::isfinite(root_v[0])) {
    throw std::runtime_error("grad_check: f evaluated to a non-finite value");
  }
  ref_tape.backward(root);
  const std::uint64_t ref_sig = ref_tape.selection_signature();

  GradCheckResult result;
  result.exact_max_tie = ref_tape.saw_exact_max_tie();

  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads.push_back(ref_tape.has_grad(ids[i]) ? ref_tape.grad(ids[i]) : Tensor(params[i].shape()));
  }

  log.mode = StopGradLog::Mode::replay;
  std::vector<Tensor> work = params;

  double grad_scale = cfg.denom_floor;
  for (const Tensor& g : grads) {
    for (std::size_t i = 0; i < g.size(); ++i) grad_scale = std::max(grad_scale, std::fabs(g[i]));
  }

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    GradCheckResult::ParamReport report;
    report.name = names[pi];
    Tensor& p = work[pi];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double orig = p[j];
      p[j] = orig + cfg.h;
      log.rewind();
      const Eval plus = evaluate(f, work, &log);
      p[j] = orig - cfg.h;
      log.rewind();
      const Eval minus = evaluate(f, work, &log);
      p[j] = orig;

      if (plus.signature != ref_sig || minus.signature != ref_sig) {
        report.excluded++;
        result.flagged.push_back({names[pi], j});
        continue;
      }
      const double fd = (plus.value - minus.value) / (2.0 * cfg.h);
      const double g = grads[pi][j];
      const double denom = std::max({std::fabs(g), std::fabs(fd), grad_scale});
      const double rel = std::fabs(g - fd) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_index = j;
      }
    }
    if (report.max_rel_err > result.max_rel_err) {
      result.max_rel_err = report.max_rel_err;
      result.worst_param = report.name;
    }
    result.params.push_back(std::move(report));
  }
  result.pass = result.max_rel_err <= cfg.tol;
  return result;
}

}  // namespace cvsa
