#include "fewshot/grad_check.hpp"

#include <cmath>
#include <sstream>

namespace fewshot::ad {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed() ? "PASS" : "FAIL") << " (worst " << worst_error << " in '" << worst_param
     << "', tol " << tolerance << ")";
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor(Tape&)>& f, ParameterStore& params,
                           double step, double tol) {
  GradCheckReport report;
  report.tolerance = tol;

  Gradients analytic;
  {
    Tape tape;
    Tensor root = f(tape);
    analytic = tape.backward(root);
  }

  // numeric replays only need values; skip node recording entirely
  auto eval = [&]() {
    Tape tape;
    tape.set_recording(false);
    return f(tape).value();
  };

  for (Parameter* p : params.all()) {
    if (!p->trainable) continue;
    GradCheckEntry entry;
    entry.param = p->name;
    const std::vector<double>* a = analytic.has(p->name) ? &analytic.of(p->name) : nullptr;
    for (size_t i = 0; i < p->size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const double up = eval();
      p->value[i] = saved - step;
      const double down = eval();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic_i = a ? (*a)[i] : 0.0;
      const double rel = std::fabs(analytic_i - numeric) / std::max(std::fabs(numeric), 1e-8);
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
        entry.analytic = analytic_i;
        entry.numeric = numeric;
      }
    }
    if (entry.max_rel_error > report.worst_error) {
      report.worst_error = entry.max_rel_error;
      report.worst_param = entry.param;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace fewshot::ad
