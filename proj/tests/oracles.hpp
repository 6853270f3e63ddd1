#pragma once

// Straight-line reference implementations used as independent oracles.
// Everything here works on plain doubles with no tape, no shared code path
// with the library ops under test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double cosine(const Vec& u, const Vec& v) {
  const double nu = norm(u), nv = norm(v);
  if (nu < 1e-12 || nv < 1e-12) return 0.0;
  return dot(u, v) / (nu * nv);
}

inline double minkowski(const Vec& u, const Vec& v, double p) {
  double s = 0.0;
  for (size_t i = 0; i < u.size(); ++i) s += std::pow(std::fabs(u[i] - v[i]), p);
  return std::pow(s, 1.0 / p);
}

inline double euclidean(const Vec& u, const Vec& v) {
  double s = 0.0;
  for (size_t i = 0; i < u.size(); ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
  return std::sqrt(s);
}

inline double poincare(const Vec& u, const Vec& v) {
  double du = 0.0, su = 0.0, sv = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    du += (u[i] - v[i]) * (u[i] - v[i]);
    su += u[i] * u[i];
    sv += v[i] * v[i];
  }
  const double x = 1.0 + 2.0 * du / ((1.0 - su) * (1.0 - sv));
  return std::acosh(std::max(1.0, x));
}

inline Vec project_to_ball(Vec u, double eps = 1e-5) {
  const double n = norm(u);
  if (n >= 1.0 - eps)
    for (double& x : u) x *= (1.0 - eps) / n;
  return u;
}

inline double similarity(const std::string& metric, double p, const Vec& u, const Vec& v) {
  if (metric == "cosine") return cosine(u, v);
  if (metric == "euclidean") return -euclidean(u, v);
  if (metric == "minkowski") return -minkowski(u, v, p);
  if (metric == "poincare") return -poincare(project_to_ball(u), project_to_ball(v));
  throw std::invalid_argument("oracle: unknown metric " + metric);
}

inline Vec softmax(Vec z) {
  double mx = z[0];
  for (double x : z) mx = std::max(mx, x);
  double sum = 0.0;
  for (double& x : z) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : z) x /= sum;
  return z;
}

// matching head: softmax over support scores, then sum attention into classes
inline Vec matching_probs(const Vec& scores, const std::vector<size_t>& support_classes,
                          size_t n_way) {
  const Vec attn = softmax(scores);
  Vec probs(n_way, 0.0);
  for (size_t i = 0; i < attn.size(); ++i) probs[support_classes[i]] += attn[i];
  return probs;
}

// prototypical head: class means, then softmax of similarities
inline Mat prototypes(const Mat& support_emb, const std::vector<size_t>& support_classes,
                      size_t n_way) {
  Mat protos(n_way);
  std::vector<size_t> counts(n_way, 0);
  for (size_t i = 0; i < support_emb.size(); ++i) {
    const size_t c = support_classes[i];
    if (protos[c].empty()) protos[c] = support_emb[i];
    else
      for (size_t d = 0; d < support_emb[i].size(); ++d) protos[c][d] += support_emb[i][d];
    counts[c]++;
  }
  for (size_t c = 0; c < n_way; ++c)
    for (double& x : protos[c]) x /= static_cast<double>(counts[c]);
  return protos;
}

// relation module: tanh MLP hidden layers, sigmoid output
inline double relation_score(const Vec& input, const std::vector<Mat>& weights,
                             const std::vector<Vec>& biases, const Vec& w_out, double b_out) {
  Vec x = input;
  for (size_t l = 0; l < weights.size(); ++l) {
    Vec next(biases[l].size(), 0.0);
    for (size_t j = 0; j < next.size(); ++j) {
      double s = biases[l][j];
      for (size_t i = 0; i < x.size(); ++i) s += x[i] * weights[l][i][j];
      next[j] = std::tanh(s);
    }
    x = std::move(next);
  }
  double s = b_out;
  for (size_t i = 0; i < x.size(); ++i) s += x[i] * w_out[i];
  return 1.0 / (1.0 + std::exp(-s));
}

inline double siamese_prob(const Vec& ea, const Vec& eb, const Vec& w, double bias) {
  double s = bias;
  for (size_t i = 0; i < ea.size(); ++i) s += w[i] * std::fabs(ea[i] - eb[i]);
  return 1.0 / (1.0 + std::exp(-s));
}

// brute-force 1-nearest-neighbour: argmin distance (argmax similarity),
// lowest index on ties
inline size_t one_nn(const std::string& metric, double p, const Vec& query, const Mat& supports,
                     const std::vector<size_t>& support_classes) {
  size_t best = 0;
  double best_sim = similarity(metric, p, query, supports[0]);
  for (size_t i = 1; i < supports.size(); ++i) {
    const double s = similarity(metric, p, query, supports[i]);
    if (s > best_sim) {
      best_sim = s;
      best = i;
    }
  }
  return support_classes[best];
}

inline double nll(const Mat& probs, const std::vector<size_t>& targets) {
  double s = 0.0;
  for (size_t b = 0; b < probs.size(); ++b)
    s += -std::log(std::max(probs[b][targets[b]], 1e-12));
  return s / static_cast<double>(probs.size());
}

}  // namespace oracle
