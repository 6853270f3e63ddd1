#include "fewshot/embeddings.hpp"

#include <cmath>
#include <stdexcept>

namespace fewshot {

using ad::Tensor;

void FceConfig::validate() const {
  if (enabled && steps < 1) throw std::invalid_argument("FCE: K must be >= 1 when enabled");
  if (hidden != kEmbedDim) throw std::invalid_argument("FCE: hidden dim must equal embed dim");
}

std::vector<double> uniform_init(size_t count, size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(count);
  for (auto& x : v) x = rng.next_uniform(-bound, bound);
  return v;
}

Tensor linear_vec(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor row = ad::reshape(x, {1, x.size()});
  Tensor out = ad::reshape(ad::matmul(row, w), {w.shape()[1]});
  return ad::add(out, b);
}

// ---- LstmCell ---------------------------------------------------------------

LstmCell LstmCell::create(ad::ParameterStore& store, const std::string& prefix, size_t input_dim,
                          size_t recur_dim, size_t hidden_dim, Rng& rng) {
  LstmCell cell;
  cell.prefix = prefix;
  cell.input_dim = input_dim;
  cell.recur_dim = recur_dim;
  cell.hidden_dim = hidden_dim;
  const char* gates[4] = {"i", "f", "o", "g"};
  for (const char* gate : gates) {
    store.create(prefix + ".wx_" + gate, {input_dim, hidden_dim},
                 uniform_init(input_dim * hidden_dim, input_dim, rng));
    store.create(prefix + ".wh_" + gate, {recur_dim, hidden_dim},
                 uniform_init(recur_dim * hidden_dim, recur_dim, rng));
    const double bias = std::string(gate) == "f" ? 1.0 : 0.0;  // forget-gate bias 1
    store.create(prefix + ".b_" + gate, {hidden_dim}, std::vector<double>(hidden_dim, bias));
  }
  return cell;
}

LstmCell::Bound LstmCell::bind(ad::Tape& tape, const ad::ParameterStore& store) const {
  auto p = [&](const std::string& suffix) { return tape.param(store.get(prefix + suffix)); };
  Bound b{p(".wx_i"), p(".wh_i"), p(".b_i"), p(".wx_f"), p(".wh_f"), p(".b_f"),
          p(".wx_o"), p(".wh_o"), p(".b_o"), p(".wx_g"), p(".wh_g"), p(".b_g"),
          input_dim,  recur_dim,  hidden_dim};
  return b;
}

std::pair<Tensor, Tensor> lstm_step(const LstmCell::Bound& cell, const Tensor& x,
                                    const Tensor& recur, const Tensor& c_prev) {
  if (x.size() != cell.input_dim || recur.size() != cell.recur_dim ||
      c_prev.size() != cell.hidden_dim)
    throw std::invalid_argument("lstm_step: dim mismatch (x " + ad::shape_str(x.shape()) +
                                ", recur " + ad::shape_str(recur.shape()) + ", c " +
                                ad::shape_str(c_prev.shape()) + ")");
  auto gate = [&](const Tensor& wx, const Tensor& wh, const Tensor& b) {
    return ad::affine_vec(x, wx, recur, wh, b);
  };
  Tensor i = ad::sigmoid(gate(cell.wx_i, cell.wh_i, cell.b_i));
  Tensor f = ad::sigmoid(gate(cell.wx_f, cell.wh_f, cell.b_f));
  Tensor o = ad::sigmoid(gate(cell.wx_o, cell.wh_o, cell.b_o));
  Tensor g = ad::tanh(gate(cell.wx_g, cell.wh_g, cell.b_g));
  Tensor c = ad::add(ad::mul(f, c_prev), ad::mul(i, g));
  Tensor h = ad::mul(o, ad::tanh(c));
  return {h, c};
}

// ---- Embedder ---------------------------------------------------------------

Embedder::Embedder(ad::ParameterStore& store, size_t vocab_size, size_t d_word, FceConfig fce,
                   Rng& rng)
    : store_(&store), vocab_size_(vocab_size), d_word_(d_word), fce_(fce) {
  fce_.validate();
  if (vocab_size < static_cast<size_t>(SpecialIds::kFirstWord))
    throw std::invalid_argument("embedder: vocab must include the special rows");
  store.create("embed.table", {vocab_size, d_word}, uniform_init(vocab_size * d_word, d_word, rng));
  store.create("embed.proj_w", {d_word, kEmbedDim},
               uniform_init(d_word * kEmbedDim, d_word, rng));
  store.create("embed.proj_b", {kEmbedDim}, std::vector<double>(kEmbedDim, 0.0));
  if (fce_.enabled) {
    g_fwd_ = LstmCell::create(store, "fce.g_fwd", kEmbedDim, kEmbedDim, kEmbedDim, rng);
    g_bwd_ = LstmCell::create(store, "fce.g_bwd", kEmbedDim, kEmbedDim, kEmbedDim, rng);
    // the attLSTM recurs over the concatenated [h, r], twice the hidden width
    f_cell_ = LstmCell::create(store, "fce.f", kEmbedDim, 2 * kEmbedDim, kEmbedDim, rng);
  }
}

Embedder::Bound Embedder::bind(ad::Tape& tape) const {
  Bound b;
  b.table = tape.param(store_->get("embed.table"));
  b.proj_w = tape.param(store_->get("embed.proj_w"));
  b.proj_b = tape.param(store_->get("embed.proj_b"));
  b.fce_enabled = fce_.enabled;
  b.fce_steps = fce_.steps;
  b.vocab_size = vocab_size_;
  if (fce_.enabled) {
    b.g_fwd = g_fwd_.bind(tape, *store_);
    b.g_bwd = g_bwd_.bind(tape, *store_);
    b.f_cell = f_cell_.bind(tape, *store_);
  }
  return b;
}

Tensor Embedder::pre_embed(const Bound& b, const std::vector<int32_t>& tokens) {
  std::vector<int32_t> ids;
  ids.reserve(tokens.size());
  for (int32_t t : tokens) {
    if (t == SpecialIds::kPad) continue;
    ids.push_back(t >= 0 && static_cast<size_t>(t) < b.vocab_size ? t : SpecialIds::kUnk);
  }
  if (ids.empty()) throw std::invalid_argument("pre_embed: empty sentence after PAD removal");
  Tensor vectors = ad::embed_rows(b.table, ids);   // [T, d_word]
  Tensor pooled = ad::max_axis(vectors, 0);        // [d_word]
  return linear_vec(pooled, b.proj_w, b.proj_b);   // [64]
}

Tensor Embedder::fce_g(const Bound& b, const Tensor& support_pre) {
  if (support_pre.rank() != 2 || support_pre.shape()[1] != kEmbedDim)
    throw std::invalid_argument("fce_g: [Nk, 64] input required, got " +
                                ad::shape_str(support_pre.shape()));
  const size_t n = support_pre.shape()[0];
  std::vector<Tensor> rows;
  rows.reserve(n);
  for (size_t i = 0; i < n; ++i) rows.push_back(ad::select_row(support_pre, i));

  std::vector<Tensor> h_fwd(n), h_bwd(n);
  Tensor h = Tensor::zeros({kEmbedDim});
  Tensor c = Tensor::zeros({kEmbedDim});
  for (size_t i = 0; i < n; ++i) {
    std::tie(h, c) = lstm_step(b.g_fwd, rows[i], h, c);
    h_fwd[i] = h;
  }
  h = Tensor::zeros({kEmbedDim});
  c = Tensor::zeros({kEmbedDim});
  for (size_t i = n; i-- > 0;) {
    std::tie(h, c) = lstm_step(b.g_bwd, rows[i], h, c);
    h_bwd[i] = h;
  }
  std::vector<Tensor> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) out.push_back(ad::add(ad::add(h_fwd[i], h_bwd[i]), rows[i]));
  return ad::stack_rows(out);
}

Tensor Embedder::fce_f(const Bound& b, const Tensor& query_pre, const Tensor& g_s,
                       std::vector<Tensor>* attention_steps) {
  if (query_pre.size() != kEmbedDim)
    throw std::invalid_argument("fce_f: query must be a 64-vector");
  if (g_s.rank() != 2 || g_s.shape()[1] != kEmbedDim)
    throw std::invalid_argument("fce_f: g(S) must be [Nk, 64]");
  if (b.fce_steps < 1) throw std::invalid_argument("fce_f: K must be >= 1");

  Tensor h = Tensor::zeros({kEmbedDim});
  Tensor c = Tensor::zeros({kEmbedDim});
  for (size_t k = 0; k < b.fce_steps; ++k) {
    // content attention over the encoded supports, read out r from h_{k-1}
    Tensor scores = ad::reshape(ad::matmul(g_s, ad::reshape(h, {kEmbedDim, 1})), {g_s.shape()[0]});
    Tensor attn = ad::softmax_rows(scores);
    if (attention_steps) attention_steps->push_back(attn);
    Tensor readout = ad::reshape(ad::matmul(ad::reshape(attn, {1, g_s.shape()[0]}), g_s),
                                 {kEmbedDim});
    Tensor recur = ad::concat({h, readout}, 0);  // [h_{k-1}, r_{k-1}]
    auto [h_hat, c_next] = lstm_step(b.f_cell, query_pre, recur, c);
    c = c_next;
    h = ad::add(h_hat, query_pre);  // residual h_k = ĥ_k + f'(x̂)
  }
  return h;
}

std::pair<Tensor, Tensor> Embedder::embed_episode(const Bound& b, const Episode& episode) const {
  if (episode.support.empty() || episode.query.empty())
    throw std::invalid_argument("embed_episode: episode has empty support or query");
  std::vector<Tensor> support_rows;
  support_rows.reserve(episode.support.size());
  for (const auto& [tokens, cls] : episode.support) support_rows.push_back(pre_embed(b, tokens));
  Tensor support_pre = ad::stack_rows(support_rows);

  std::vector<Tensor> query_rows;
  query_rows.reserve(episode.query.size());
  for (const auto& [tokens, cls] : episode.query) query_rows.push_back(pre_embed(b, tokens));

  if (!b.fce_enabled) return {support_pre, ad::stack_rows(query_rows)};

  Tensor g_s = fce_g(b, support_pre);
  std::vector<Tensor> refined;
  refined.reserve(query_rows.size());
  for (const auto& q : query_rows) refined.push_back(fce_f(b, q, g_s));
  return {g_s, ad::stack_rows(refined)};
}

}  // namespace fewshot
