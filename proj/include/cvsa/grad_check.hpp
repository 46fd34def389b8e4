#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cvsa/tape.hpp"

namespace cvsa {

struct GradCheckConfig {
  double h = 1e-3;
  double tol = 1e-4;
  // Coordinate deviations are measured relative to the gradient's own scale:
  //   rel_i = |g_i - fd_i| / max(|g_i|, |fd_i|, ||g||_inf, denom_floor)
  // (the infinity-norm relative error between the two vectors). Central
  // differences carry O(h^2 f''') truncation regardless of how small an
  // individual coordinate is, so a per-coordinate ratio would report
  // truncation noise as error; against the vector scale, any real defect
  // (sign flip, wrong routing, missing factor) still lands orders of
  // magnitude above tol. denom_floor guards functions whose entire gradient
  // is near zero.
  double denom_floor = 0.1;
};

struct GradCheckResult {
  struct ParamReport {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    std::size_t excluded = 0;
  };
  struct Flagged {
    std::string param;
    std::size_t index;
  };

  std::vector<ParamReport> params;
  std::vector<Flagged> flagged;  // coords excluded at nondifferentiable selection points
  double max_rel_err = 0.0;
  std::string worst_param;
  bool exact_max_tie = false;
  bool pass = false;
};

// Builds the computation under `f` on a fresh tape and returns the scalar
// root. Parameters are registered on the tape in the given order.
using ForwardFn = std::function<NodeId(GradientTape&, const std::vector<NodeId>&)>;

// Compares tape gradients of f against central differences
// (f(x+h) - f(x-h)) / 2h, coordinate by coordinate. Stop-gradient branches
// are held at their reference values during the difference evaluations.
// Coordinates whose perturbation changes a max/ReLU selection are excluded
// from the error and reported in `flagged` (subgradient points).
GradCheckResult grad_check(const ForwardFn& f, const std::vector<Tensor>& params,
                           const std::vector<std::string>& names,
                           const GradCheckConfig& cfg = {});

}  // namespace cvsa
