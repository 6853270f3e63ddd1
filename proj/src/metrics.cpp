#include "fewshot/metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fewshot {

MetricKind MetricKind::minkowski(double order) {
  if (order <= 0.0) throw std::invalid_argument("minkowski order p must be > 0");
  MetricKind m{Metric::Minkowski};
  m.p = order;
  return m;
}

MetricKind MetricKind::poincare(double eps) {
  if (!(eps > 0.0 && eps < 1e-2))
    throw std::invalid_argument("poincare epsilon_ball must be in (0, 1e-2)");
  MetricKind m{Metric::Poincare};
  m.epsilon_ball = eps;
  return m;
}

std::string MetricKind::name() const {
  switch (kind) {
    case Metric::Cosine: return "cosine";
    case Metric::Euclidean: return "euclidean";
    case Metric::Poincare: return "poincare";
    case Metric::Minkowski: {
      std::ostringstream os;
      os << "minkowski:p=" << p;
      return os.str();
    }
  }
  return "?";
}

MetricKind MetricKind::parse(const std::string& s) {
  if (s == "cosine") return cosine();
  if (s == "euclidean") return euclidean();
  if (s == "poincare") return poincare();
  if (s.rfind("minkowski:p=", 0) == 0) {
    const std::string num = s.substr(12);
    size_t used = 0;
    double p = 0.0;
    try {
      p = std::stod(num, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != num.size() || p <= 0.0)
      throw std::invalid_argument("invalid minkowski order in metric '" + s + "'");
    return minkowski(p);
  }
  throw std::invalid_argument("unknown metric '" + s +
                              "'; valid: cosine, euclidean, minkowski:p=<real>, poincare");
}

namespace metrics {

namespace {

void check_same_length(const Tensor& u, const Tensor& v, const char* op) {
  if (u.rank() != 1 || v.rank() != 1 || u.size() != v.size())
    throw std::invalid_argument(std::string(op) + ": vectors of equal length required, got " +
                                ad::shape_str(u.shape()) + " and " + ad::shape_str(v.shape()));
}

double sq_norm_value(const Tensor& u) {
  double s = 0.0;
  for (double x : u.data()) s += x * x;
  return s;
}

Tensor sq_norm(const Tensor& u) { return ad::sum_all(ad::mul(u, u)); }

}  // namespace

Tensor cosine(const Tensor& u, const Tensor& v) {
  check_same_length(u, v, "cosine");
  const double nu = std::sqrt(sq_norm_value(u));
  const double nv = std::sqrt(sq_norm_value(v));
  if (nu < 1e-12 || nv < 1e-12) return Tensor::scalar(0.0);
  Tensor norm_u = ad::sqrt(sq_norm(u));
  Tensor norm_v = ad::sqrt(sq_norm(v));
  return ad::mul(ad::dot(u, v), ad::pow(ad::mul(norm_u, norm_v), -1.0));
}

Tensor minkowski(const Tensor& u, const Tensor& v, double p) {
  check_same_length(u, v, "minkowski");
  if (p <= 0.0) throw std::invalid_argument("minkowski: p must be > 0");
  Tensor diffs = ad::abs(ad::sub(u, v));
  Tensor s = ad::sum_all(ad::pow(diffs, p));
  return ad::pow(s, 1.0 / p);
}

Tensor euclidean(const Tensor& u, const Tensor& v) {
  check_same_length(u, v, "euclidean");
  Tensor d = ad::sub(u, v);
  return ad::sqrt(ad::sum_all(ad::mul(d, d)));
}

Tensor poincare(const Tensor& u, const Tensor& v) {
  check_same_length(u, v, "poincare");
  const double su = sq_norm_value(u);
  const double sv = sq_norm_value(v);
  if (su >= 1.0 || sv >= 1.0)
    throw std::domain_error("poincare: operand on or outside the unit ball (|u|^2 = " +
                            std::to_string(std::max(su, sv)) + ")");
  Tensor diff = ad::sub(u, v);
  Tensor num = ad::sum_all(ad::mul(diff, diff));
  Tensor one = Tensor::scalar(1.0);
  Tensor den = ad::mul(ad::sub(one, sq_norm(u)), ad::sub(one, sq_norm(v)));
  Tensor x = ad::add(one, ad::mul(Tensor::scalar(2.0), ad::mul(num, ad::pow(den, -1.0))));
  // arcosh(x) = ln(x + sqrt(x^2 - 1)), argument clamped to >= 1; at the clamp
  // the distance is exactly 0
  if (x.value() <= 1.0) return Tensor::scalar(0.0);
  Tensor inner = ad::sub(ad::mul(x, x), one);
  return ad::log(ad::add(x, ad::sqrt(inner)));
}

Tensor project_to_ball(const Tensor& u, double epsilon_ball) {
  if (!(epsilon_ball > 0.0 && epsilon_ball < 1e-2))
    throw std::invalid_argument("project_to_ball: epsilon_ball must be in (0, 1e-2)");
  if (u.rank() != 1) throw std::invalid_argument("project_to_ball: vector required");
  const double norm = std::sqrt(sq_norm_value(u));
  const double limit = 1.0 - epsilon_ball;
  if (norm < limit) return u;
  // rescale through the graph so gradients see the projection
  Tensor norm_t = ad::sqrt(sq_norm(u));
  Tensor factor = ad::mul(Tensor::scalar(limit), ad::pow(norm_t, -1.0));
  return ad::scale(u, factor);
}

Tensor similarity(const MetricKind& metric, const Tensor& u, const Tensor& v) {
  switch (metric.kind) {
    case Metric::Cosine: return cosine(u, v);
    case Metric::Euclidean: return ad::neg(euclidean(u, v));
    case Metric::Minkowski: return ad::neg(minkowski(u, v, metric.p));
    case Metric::Poincare: {
      Tensor pu = project_to_ball(u, metric.epsilon_ball);
      Tensor pv = project_to_ball(v, metric.epsilon_ball);
      return ad::neg(poincare(pu, pv));
    }
  }
  throw std::logic_error("similarity: unhandled metric kind");
}

Tensor pairwise_scores(const MetricKind& metric, const Tensor& queries, const Tensor& supports) {
  if (queries.rank() != 2 || supports.rank() != 2 || queries.shape()[1] != supports.shape()[1])
    throw std::invalid_argument("pairwise_scores: feature dims differ, " +
                                ad::shape_str(queries.shape()) + " vs " +
                                ad::shape_str(supports.shape()));
  const size_t q = queries.shape()[0];
  const size_t s = supports.shape()[0];
  std::vector<Tensor> support_rows;
  support_rows.reserve(s);
  for (size_t j = 0; j < s; ++j) support_rows.push_back(ad::select_row(supports, j));
  std::vector<Tensor> rows;
  rows.reserve(q);
  for (size_t i = 0; i < q; ++i) {
    Tensor qi = ad::select_row(queries, i);
    std::vector<Tensor> cells;
    cells.reserve(s);
    for (size_t j = 0; j < s; ++j)
      cells.push_back(ad::reshape(similarity(metric, qi, support_rows[j]), {1}));
    rows.push_back(ad::concat(cells, 0));
  }
  return ad::stack_rows(rows);
}

}  // namespace metrics
}  // namespace fewshot
