#include "fewshot/models.hpp"

#include <cmath>
#include <stdexcept>

namespace fewshot {

using ad::Tensor;

std::string head_name(ModelHead head) {
  switch (head) {
    case ModelHead::Matching: return "matching";
    case ModelHead::Prototypical: return "prototypical";
    case ModelHead::Relation: return "relation";
    case ModelHead::Siamese: return "siamese";
  }
  return "?";
}

ModelHead parse_head(const std::string& s) {
  if (s == "matching") return ModelHead::Matching;
  if (s == "prototypical") return ModelHead::Prototypical;
  if (s == "relation") return ModelHead::Relation;
  if (s == "siamese") return ModelHead::Siamese;
  throw std::invalid_argument("unknown model head '" + s +
                              "'; valid: matching, prototypical, relation, siamese");
}

void ModelConfig::validate() const {
  if (vocab_size < static_cast<size_t>(SpecialIds::kFirstWord))
    throw std::invalid_argument("model config: vocab_size not set");
  if (relation_layers < 1)
    throw std::invalid_argument("model config: relation needs >= 1 hidden layer");
  if (head == ModelHead::Matching) fce.validate();
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(mix_seed(config_.init_seed, /*stream=*/0xfe11));
  FceConfig fce = config_.head == ModelHead::Matching ? config_.fce : FceConfig{false, 5, kEmbedDim};
  embedder_ = std::make_unique<Embedder>(params_, config_.vocab_size, config_.d_word, fce, rng);
  if (config_.head == ModelHead::Relation) {
    size_t in_dim = 2 * kEmbedDim;
    for (size_t l = 0; l < config_.relation_layers; ++l) {
      const std::string idx = std::to_string(l + 1);
      params_.create("relation.w" + idx, {in_dim, config_.relation_hidden},
                     uniform_init(in_dim * config_.relation_hidden, in_dim, rng));
      params_.create("relation.b" + idx, {config_.relation_hidden},
                     std::vector<double>(config_.relation_hidden, 0.0));
      in_dim = config_.relation_hidden;
    }
    params_.create("relation.w_out", {in_dim, 1}, uniform_init(in_dim, in_dim, rng));
    params_.create("relation.b_out", {1}, {0.0});
  } else if (config_.head == ModelHead::Siamese) {
    params_.create("siamese.w", {kEmbedDim, 1}, uniform_init(kEmbedDim, kEmbedDim, rng));
    params_.create("siamese.b", {1}, {0.0});
  }
}

namespace {

void check_episode(const Episode& ep) {
  if (ep.n_way < 2 || ep.support.size() != ep.n_way * ep.k_shot || ep.query.empty())
    throw std::invalid_argument("invalid episode (N=" + std::to_string(ep.n_way) +
                                ", supports=" + std::to_string(ep.support.size()) + ")");
  for (const auto& [tokens, cls] : ep.query)
    if (cls >= ep.n_way) throw std::invalid_argument("query class index out of range");
  for (const auto& [tokens, cls] : ep.support)
    if (cls >= ep.n_way) throw std::invalid_argument("support class index out of range");
}

// one-hot label matrix in support emission order, [N*k, N]
Tensor support_onehot(const Episode& ep) {
  std::vector<double> y(ep.support.size() * ep.n_way, 0.0);
  for (size_t i = 0; i < ep.support.size(); ++i) y[i * ep.n_way + ep.support[i].second] = 1.0;
  return Tensor::constant({ep.support.size(), ep.n_way}, std::move(y));
}

}  // namespace

std::vector<size_t> episode_targets(const Episode& episode) {
  std::vector<size_t> t;
  t.reserve(episode.query.size());
  for (const auto& [tokens, cls] : episode.query) t.push_back(cls);
  return t;
}

ModelOutput Model::forward(ad::Tape& tape, const Episode& episode) const {
  check_episode(episode);
  switch (config_.head) {
    case ModelHead::Matching: return matching_forward(tape, episode);
    case ModelHead::Prototypical: return prototypical_forward(tape, episode);
    case ModelHead::Relation: return relation_forward(tape, episode);
    case ModelHead::Siamese: return siamese_oneshot(tape, episode);
  }
  throw std::logic_error("unhandled model head");
}

ModelOutput Model::matching_forward(ad::Tape& tape, const Episode& ep) const {
  auto bound = embedder_->bind(tape);
  auto [support_emb, query_emb] = embedder_->embed_episode(bound, ep);
  Tensor scores = metrics::pairwise_scores(config_.metric, query_emb, support_emb);
  Tensor attention = ad::softmax_rows(scores);
  Tensor probs = ad::matmul(attention, support_onehot(ep));
  return ModelOutput{probs, scores, attention};
}

ModelOutput Model::prototypical_forward(ad::Tape& tape, const Episode& ep) const {
  auto bound = embedder_->bind(tape);
  auto [support_emb, query_emb] = embedder_->embed_episode(bound, ep);
  // class prototypes: mean of each class's embedded supports
  std::vector<Tensor> protos(ep.n_way);
  std::vector<size_t> counts(ep.n_way, 0);
  for (size_t i = 0; i < ep.support.size(); ++i) {
    const size_t cls = ep.support[i].second;
    Tensor row = ad::select_row(support_emb, i);
    protos[cls] = counts[cls] == 0 ? row : ad::add(protos[cls], row);
    counts[cls]++;
  }
  for (size_t c = 0; c < ep.n_way; ++c) {
    if (counts[c] == 0) throw std::invalid_argument("episode missing supports for a class");
    if (counts[c] > 1)
      protos[c] = ad::scale(protos[c], Tensor::scalar(1.0 / static_cast<double>(counts[c])));
  }
  Tensor prototypes = ad::stack_rows(protos);
  // softmax over classes of -d; similarity already carries the negation
  Tensor scores = metrics::pairwise_scores(config_.metric, query_emb, prototypes);
  Tensor probs = ad::softmax_rows(scores);
  return ModelOutput{probs, scores, {}};
}

ModelOutput Model::relation_forward(ad::Tape& tape, const Episode& ep) const {
  auto bound = embedder_->bind(tape);
  auto [support_emb, query_emb] = embedder_->embed_episode(bound, ep);
  // for k > 1 a class's support embeddings are summed into one class feature
  std::vector<Tensor> class_features(ep.n_way);
  std::vector<bool> seen(ep.n_way, false);
  for (size_t i = 0; i < ep.support.size(); ++i) {
    const size_t cls = ep.support[i].second;
    Tensor row = ad::select_row(support_emb, i);
    class_features[cls] = seen[cls] ? ad::add(class_features[cls], row) : row;
    seen[cls] = true;
  }

  std::vector<Tensor> layer_w, layer_b;
  for (size_t l = 0; l < config_.relation_layers; ++l) {
    const std::string idx = std::to_string(l + 1);
    layer_w.push_back(tape.param(params_.get("relation.w" + idx)));
    layer_b.push_back(tape.param(params_.get("relation.b" + idx)));
  }
  Tensor w_out = tape.param(params_.get("relation.w_out"));
  Tensor b_out = tape.param(params_.get("relation.b_out"));

  std::vector<Tensor> rows;
  rows.reserve(ep.query.size());
  for (size_t q = 0; q < ep.query.size(); ++q) {
    Tensor query = ad::select_row(query_emb, q);
    std::vector<Tensor> cells;
    cells.reserve(ep.n_way);
    for (size_t c = 0; c < ep.n_way; ++c) {
      Tensor x = ad::concat({query, class_features[c]}, 0);
      for (size_t l = 0; l < layer_w.size(); ++l)
        x = ad::tanh(linear_vec(x, layer_w[l], layer_b[l]));
      Tensor score = ad::sigmoid(linear_vec(x, w_out, b_out));
      cells.push_back(score);
    }
    rows.push_back(ad::concat(cells, 0));
  }
  Tensor scores = ad::stack_rows(rows);
  return ModelOutput{{}, scores, {}};
}

Tensor Model::siamese_pair_probability(ad::Tape& tape, const std::vector<int32_t>& a,
                                       const std::vector<int32_t>& b) const {
  if (config_.head != ModelHead::Siamese)
    throw std::invalid_argument("siamese_pair_probability: not a siamese model");
  auto bound = embedder_->bind(tape);
  Tensor w = tape.param(params_.get("siamese.w"));
  Tensor bias = tape.param(params_.get("siamese.b"));
  Tensor ea = Embedder::pre_embed(bound, a);
  Tensor eb = Embedder::pre_embed(bound, b);
  Tensor l1 = ad::abs(ad::sub(ea, eb));
  return ad::reshape(ad::sigmoid(linear_vec(l1, w, bias)), {});
}

ModelOutput Model::siamese_oneshot(ad::Tape& tape, const Episode& ep) const {
  auto bound = embedder_->bind(tape);
  Tensor w = tape.param(params_.get("siamese.w"));
  Tensor bias = tape.param(params_.get("siamese.b"));
  std::vector<Tensor> support_emb;
  support_emb.reserve(ep.support.size());
  for (const auto& [tokens, cls] : ep.support)
    support_emb.push_back(Embedder::pre_embed(bound, tokens));

  std::vector<Tensor> rows;
  rows.reserve(ep.query.size());
  for (const auto& [tokens, cls] : ep.query) {
    Tensor qe = Embedder::pre_embed(bound, tokens);
    // per class: max pair probability over its k supports
    std::vector<std::vector<Tensor>> per_class(ep.n_way);
    for (size_t i = 0; i < ep.support.size(); ++i) {
      Tensor l1 = ad::abs(ad::sub(qe, support_emb[i]));
      Tensor p = ad::reshape(ad::sigmoid(linear_vec(l1, w, bias)), {1});
      per_class[ep.support[i].second].push_back(p);
    }
    std::vector<Tensor> class_scores;
    class_scores.reserve(ep.n_way);
    for (size_t c = 0; c < ep.n_way; ++c) {
      Tensor stacked = ad::concat(per_class[c], 0);
      class_scores.push_back(ad::reshape(ad::max_axis(stacked, 0), {1}));
    }
    Tensor score_vec = ad::concat(class_scores, 0);
    // scores are already probabilities; normalize linearly to a distribution
    Tensor total = ad::sum_all(score_vec);
    rows.push_back(ad::scale(score_vec, ad::pow(total, -1.0)));
  }
  Tensor probs = ad::stack_rows(rows);
  return ModelOutput{probs, {}, {}};
}

std::vector<size_t> Model::predict(const ModelOutput& out) {
  const Tensor& m = out.probs.size() > 0 ? out.probs : out.scores;
  if (m.rank() != 2) throw std::invalid_argument("predict: no [B, N] output available");
  std::vector<size_t> pred(m.shape()[0]);
  for (size_t r = 0; r < m.shape()[0]; ++r) {
    size_t best = 0;
    for (size_t c = 1; c < m.shape()[1]; ++c)
      if (m.at(r, c) > m.at(r, best)) best = c;
    pred[r] = best;
  }
  return pred;
}

double Model::episode_accuracy(const ModelOutput& out, const Episode& episode) const {
  const auto pred = predict(out);
  const auto targets = episode_targets(episode);
  if (pred.size() != targets.size()) throw std::logic_error("prediction/target count mismatch");
  size_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i) hits += pred[i] == targets[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

ad::Tensor Model::episode_loss(ad::Tape&, const ModelOutput& out, const Episode& episode) const {
  const auto targets = episode_targets(episode);
  switch (config_.head) {
    case ModelHead::Matching:
    case ModelHead::Prototypical:
    case ModelHead::Siamese:
      return nll_loss(out.probs, targets);
    case ModelHead::Relation:
      return mse_relation_loss(out.scores, targets);
  }
  throw std::logic_error("unhandled model head");
}

// ---- losses -------------------------------------------------------------------

Tensor nll_loss(const Tensor& probs, const std::vector<size_t>& targets) {
  if (probs.rank() != 2 || probs.shape()[0] != targets.size())
    throw std::invalid_argument("nll_loss: probs [B, N] with one target per row required");
  const size_t n = probs.shape()[1];
  for (size_t t : targets)
    if (t >= n) throw std::invalid_argument("nll_loss: target index out of range");
  std::vector<Tensor> picked;
  picked.reserve(targets.size());
  for (size_t b = 0; b < targets.size(); ++b) {
    Tensor row = ad::select_row(probs, b);
    Tensor onehot = Tensor::constant({n}, [&] {
      std::vector<double> v(n, 0.0);
      v[targets[b]] = 1.0;
      return v;
    }());
    picked.push_back(ad::reshape(ad::sum_all(ad::mul(row, onehot)), {1}));
  }
  Tensor p = ad::clamp_min(ad::concat(picked, 0), 1e-12);
  return ad::neg(ad::mean_all(ad::log(p)));
}

Tensor mse_relation_loss(const Tensor& scores, const std::vector<size_t>& targets) {
  if (scores.rank() != 2 || scores.shape()[0] != targets.size())
    throw std::invalid_argument("mse_relation_loss: scores [B, N] with one target per row required");
  const size_t n = scores.shape()[1];
  std::vector<double> indicator(scores.size(), 0.0);
  for (size_t b = 0; b < targets.size(); ++b) {
    if (targets[b] >= n) throw std::invalid_argument("mse_relation_loss: target out of range");
    indicator[b * n + targets[b]] = 1.0;
  }
  Tensor diff = ad::sub(scores, Tensor::constant(scores.shape(), std::move(indicator)));
  return ad::mean_all(ad::mul(diff, diff));
}

Tensor bce_loss(const Tensor& p, int label) {
  if (p.size() != 1) throw std::invalid_argument("bce_loss: scalar probability required");
  if (label != 0 && label != 1) throw std::invalid_argument("bce_loss: label must be 0 or 1");
  Tensor clamped = ad::clamp_max(ad::clamp_min(p, 1e-12), 1.0 - 1e-12);
  Tensor one = Tensor::scalar(1.0);
  if (label == 1) return ad::neg(ad::reshape(ad::log(clamped), {}));
  return ad::neg(ad::reshape(ad::log(ad::sub(one, ad::reshape(clamped, {}))), {}));
}

}  // namespace fewshot
