#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fewshot/embeddings.hpp"
#include "fewshot/episodes.hpp"
#include "fewshot/metrics.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

enum class ModelHead { Matching, Prototypical, Relation, Siamese };

std::string head_name(ModelHead head);
ModelHead parse_head(const std::string& s);

struct ModelConfig {
  ModelHead head = ModelHead::Matching;
  MetricKind metric = MetricKind::cosine();
  FceConfig fce;                 // consulted by the matching head only
  size_t d_word = kEmbedDim;
  size_t relation_hidden = 64;
  size_t relation_layers = 2;
  size_t vocab_size = 0;         // filled from the corpus
  uint64_t init_seed = 1;

  void validate() const;
};

// Model outputs for one episode. `probs` rows are distributions over the
// episode's N classes; the relation head reports raw scores instead (its
// scores are not normalized across classes).
struct ModelOutput {
  ad::Tensor probs;       // [B, N] (empty for relation)
  ad::Tensor scores;      // [B, N] relation scores, or the raw similarity matrix
  ad::Tensor attention;   // [B, N*k] matching attention (empty otherwise)
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }
  const Embedder& embedder() const { return *embedder_; }

  ModelOutput forward(ad::Tape& tape, const Episode& episode) const;

  // per-head training loss for one episode (NLL / MSE)
  ad::Tensor episode_loss(ad::Tape& tape, const ModelOutput& out, const Episode& episode) const;

  // p(same class) for a sentence pair (the Siamese verification head)
  ad::Tensor siamese_pair_probability(ad::Tape& tape, const std::vector<int32_t>& a,
                                      const std::vector<int32_t>& b) const;

  // argmax class per query row, ties to the lowest index
  static std::vector<size_t> predict(const ModelOutput& out);

  double episode_accuracy(const ModelOutput& out, const Episode& episode) const;

 private:
  ModelOutput matching_forward(ad::Tape& tape, const Episode& ep) const;
  ModelOutput prototypical_forward(ad::Tape& tape, const Episode& ep) const;
  ModelOutput relation_forward(ad::Tape& tape, const Episode& ep) const;
  ModelOutput siamese_oneshot(ad::Tape& tape, const Episode& ep) const;

  ModelConfig config_;
  ad::ParameterStore params_;
  std::unique_ptr<Embedder> embedder_;
};

// ---- losses -----------------------------------------------------------------

// -(1/B) sum log probs[b, target_b], probabilities floored at 1e-12
ad::Tensor nll_loss(const ad::Tensor& probs, const std::vector<size_t>& targets);

// mean over B*N of (score - indicator(match))^2
ad::Tensor mse_relation_loss(const ad::Tensor& scores, const std::vector<size_t>& targets);

// binary cross entropy with p floored into [1e-12, 1 - 1e-12]
ad::Tensor bce_loss(const ad::Tensor& p, int label);

std::vector<size_t> episode_targets(const Episode& episode);

}  // namespace fewshot
