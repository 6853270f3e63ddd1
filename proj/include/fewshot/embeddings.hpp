#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fewshot/episodes.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

// output dimension of the pre-embedding; the FCE layers are sized to match
inline constexpr size_t kEmbedDim = 64;

struct FceConfig {
  bool enabled = true;
  size_t steps = 5;   // attLSTM processing steps K
  size_t hidden = kEmbedDim;

  void validate() const;
};

// Parameter names and dims for one LSTM cell; the tensors live in a
// ParameterStore and are re-bound onto each forward tape.
struct LstmCell {
  std::string prefix;
  size_t input_dim = 0;
  size_t recur_dim = 0;
  size_t hidden_dim = 0;

  static LstmCell create(ad::ParameterStore& store, const std::string& prefix, size_t input_dim,
                         size_t recur_dim, size_t hidden_dim, Rng& rng);

  struct Bound {
    ad::Tensor wx_i, wh_i, b_i;  // input gate
    ad::Tensor wx_f, wh_f, b_f;  // forget gate (bias initialized to 1)
    ad::Tensor wx_o, wh_o, b_o;  // output gate
    ad::Tensor wx_g, wh_g, b_g;  // candidate
    size_t input_dim, recur_dim, hidden_dim;
  };
  Bound bind(ad::Tape& tape, const ad::ParameterStore& store) const;
};

// one step of the standard gate equations; `recur` is h for a plain cell or
// [h, r] for the attLSTM
std::pair<ad::Tensor, ad::Tensor> lstm_step(const LstmCell::Bound& cell, const ad::Tensor& x,
                                            const ad::Tensor& recur, const ad::Tensor& c_prev);

// Two-level sentence encoder: trainable word table -> max-pool -> linear to
// 64, optionally refined by the Full Context Embedding (bi-LSTM g over the
// support set, attLSTM f over each query).
class Embedder {
 public:
  Embedder(ad::ParameterStore& store, size_t vocab_size, size_t d_word, FceConfig fce, Rng& rng);

  struct Bound {
    ad::Tensor table;   // [vocab, d_word]
    ad::Tensor proj_w;  // [d_word, 64]
    ad::Tensor proj_b;  // [64]
    LstmCell::Bound g_fwd, g_bwd, f_cell;
    bool fce_enabled = false;
    size_t fce_steps = 0;
    size_t vocab_size = 0;
  };
  Bound bind(ad::Tape& tape) const;

  // linear(max over non-PAD tokens of word vectors); unknown ids fall back
  // to the UNK row
  static ad::Tensor pre_embed(const Bound& b, const std::vector<int32_t>& tokens);

  // row i = forward hidden + backward hidden + input row
  static ad::Tensor fce_g(const Bound& b, const ad::Tensor& support_pre);

  // K attention-readout steps over g_S; returns h_K. Per-step attention rows
  // are appended to *attention_steps when provided.
  static ad::Tensor fce_f(const Bound& b, const ad::Tensor& query_pre, const ad::Tensor& g_s,
                          std::vector<ad::Tensor>* attention_steps = nullptr);

  // (support embeddings [N*k, 64], query embeddings [B, 64])
  std::pair<ad::Tensor, ad::Tensor> embed_episode(const Bound& b, const Episode& episode) const;

  const FceConfig& fce() const { return fce_; }
  size_t vocab_size() const { return vocab_size_; }
  size_t d_word() const { return d_word_; }

 private:
  ad::ParameterStore* store_;
  size_t vocab_size_;
  size_t d_word_;
  FceConfig fce_;
  LstmCell g_fwd_, g_bwd_, f_cell_;
};

// x[vec] * W + b, on whatever tape x lives on
ad::Tensor linear_vec(const ad::Tensor& x, const ad::Tensor& w, const ad::Tensor& b);

// uniform +-1/sqrt(fan_in) init used across the model
std::vector<double> uniform_init(size_t count, size_t fan_in, Rng& rng);

}  // namespace fewshot
