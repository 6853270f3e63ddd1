#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot::ad {

struct GradCheckEntry {
  std::string param;
  double max_rel_error = 0.0;
  size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  double worst_error = 0.0;
  std::string worst_param;

  bool passed() const { return worst_error <= tolerance; }
  std::string summary() const;
};

// Central finite differences against the analytic backward pass.
// `f` rebuilds the forward expression on a fresh tape each call (it must
// register parameters via Tape::param so backward can find them). Parameters
// are perturbed in place and restored. Relative error per element is
// |analytic - numeric| / max(|numeric|, 1e-8).
GradCheckReport grad_check(const std::function<Tensor(Tape&)>& f, ParameterStore& params,
                           double step, double tol);

}  // namespace fewshot::ad
