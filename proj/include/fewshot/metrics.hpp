#pragma once

#include <string>

#include "fewshot/tensor.hpp"

namespace fewshot {

// The four similarity/distance families the attention kernels and
// classifiers are parameterized over.
enum class Metric { Cosine, Euclidean, Minkowski, Poincare };

struct MetricKind {
  Metric kind = Metric::Cosine;
  double p = 2.0;               // Minkowski order
  double epsilon_ball = 1e-5;   // Poincaré boundary margin

  static MetricKind cosine() { return {Metric::Cosine}; }
  static MetricKind euclidean() { return {Metric::Euclidean}; }
  static MetricKind minkowski(double order);
  static MetricKind poincare(double eps = 1e-5);

  // config names: cosine | euclidean | minkowski:p=<real> | poincare
  std::string name() const;
  static MetricKind parse(const std::string& s);

  bool operator==(const MetricKind& o) const = default;
};

namespace metrics {

using ad::Tensor;

// u.v / (|u||v|); 0 when either norm is below 1e-12 (neutral similarity,
// max-pooled embeddings can be zero early in training)
Tensor cosine(const Tensor& u, const Tensor& v);

// (sum |u_i - v_i|^p)^(1/p), p > 0
Tensor minkowski(const Tensor& u, const Tensor& v, double p);

// direct sqrt(sum (u_i - v_i)^2) implementation, kept separate from
// minkowski(2) so the two routes can check each other
Tensor euclidean(const Tensor& u, const Tensor& v);

// arcosh(1 + 2|u-v|^2 / ((1-|u|^2)(1-|v|^2))); operands must be strictly
// inside the unit ball
Tensor poincare(const Tensor& u, const Tensor& v);

// rescale to norm 1 - epsilon_ball when on/outside that shell, else identity
Tensor project_to_ball(const Tensor& u, double epsilon_ball);

// uniform score contract: higher = more similar. Cosine passes through,
// distances are negated. Poincaré inputs are projected internally.
Tensor similarity(const MetricKind& metric, const Tensor& u, const Tensor& v);

// entry (i,j) = similarity(metric, queries[i], supports[j])
Tensor pairwise_scores(const MetricKind& metric, const Tensor& queries, const Tensor& supports);

}  // namespace metrics
}  // namespace fewshot
