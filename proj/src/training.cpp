#include "fewshot/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fewshot {

using nlohmann::json;

// stream labels for seed derivation; distinct consumers never share a sequence
namespace {
constexpr uint64_t kTrainStream = 1;
constexpr uint64_t kValStream = 2;
}  // namespace

OptimizerConfig::Kind OptimizerConfig::parse_kind(const std::string& s) {
  if (s == "sgd") return Kind::Sgd;
  if (s == "adam") return Kind::Adam;
  throw std::invalid_argument("unknown optimizer '" + s + "'; valid: sgd, adam");
}

void TrainConfig::validate() const {
  spec.validate();
  if (optimizer.lr <= 0.0) throw std::invalid_argument("train config: lr must be > 0");
  if (clip_norm <= 0.0) throw std::invalid_argument("train config: clip_norm must be > 0");
  if (eval_every < 1) throw std::invalid_argument("train config: eval_every must be >= 1");
}

// ---- optimizer -----------------------------------------------------------------

Optimizer::Optimizer(OptimizerConfig config, ad::ParameterStore& params)
    : config_(config), params_(&params) {
  for (const auto& name : params.names()) {
    const auto& p = params.get(name);
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

double Optimizer::step(const ad::Gradients& grads, double clip_norm) {
  double sq_sum = 0.0;
  for (const auto& name : params_->names()) {
    if (!grads.has(name)) continue;
    for (double g : grads.of(name)) sq_sum += g * g;
  }
  const double norm = std::sqrt(sq_sum);
  const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;

  ++t_;
  const auto& names = params_->names();
  for (size_t pi = 0; pi < names.size(); ++pi) {
    auto& p = params_->get(names[pi]);
    if (!p.trainable || !grads.has(names[pi])) continue;
    const auto& g = grads.of(names[pi]);
    if (config_.kind == OptimizerConfig::Kind::Sgd) {
      for (size_t i = 0; i < p.size(); ++i) p.value[i] -= config_.lr * scale * g[i];
    } else {
      const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
      for (size_t i = 0; i < p.size(); ++i) {
        const double gi = scale * g[i];
        m_[pi][i] = config_.beta1 * m_[pi][i] + (1.0 - config_.beta1) * gi;
        v_[pi][i] = config_.beta2 * v_[pi][i] + (1.0 - config_.beta2) * gi * gi;
        const double mhat = m_[pi][i] / bc1;
        const double vhat = v_[pi][i] / bc2;
        p.value[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
      }
    }
  }
  return norm;
}

void Optimizer::serialize(ByteWriter& out) const {
  out.str(config_.name());
  out.f64(config_.lr);
  out.f64(config_.beta1);
  out.f64(config_.beta2);
  out.f64(config_.eps);
  out.u64(t_);
  out.u64(m_.size());
  for (size_t i = 0; i < m_.size(); ++i) {
    out.f64_vec(m_[i]);
    out.f64_vec(v_[i]);
  }
}

void Optimizer::deserialize(ByteReader& in) {
  const std::string kind = in.str();
  config_.kind = OptimizerConfig::parse_kind(kind);
  config_.lr = in.f64();
  config_.beta1 = in.f64();
  config_.beta2 = in.f64();
  config_.eps = in.f64();
  t_ = in.u64();
  const uint64_t n = in.u64();
  if (n != m_.size()) throw std::runtime_error("optimizer state does not match the model");
  for (size_t i = 0; i < n; ++i) {
    m_[i] = in.f64_vec();
    v_[i] = in.f64_vec();
    const auto& p = params_->get(params_->names()[i]);
    if (m_[i].size() != p.size() || v_[i].size() != p.size())
      throw std::runtime_error("optimizer moment size mismatch for " + p.name);
  }
}

// ---- eval report ----------------------------------------------------------------

std::string EvalReport::to_json() const {
  json j;
  j["episodes"] = episodes;
  j["mean_accuracy"] = mean_accuracy;
  j["stderr_accuracy"] = stderr_accuracy;
  j["per_episode"] = per_episode;
  j["n_way"] = n_way;
  j["k_shot"] = k_shot;
  j["metric"] = metric;
  j["model"] = model;
  return j.dump();
}

EvalReport EvalReport::from_json(const std::string& text) {
  const json j = json::parse(text);
  EvalReport r;
  r.episodes = j.at("episodes").get<size_t>();
  r.mean_accuracy = j.at("mean_accuracy").get<double>();
  r.stderr_accuracy = j.at("stderr_accuracy").get<double>();
  r.per_episode = j.at("per_episode").get<std::vector<double>>();
  r.n_way = j.at("n_way").get<size_t>();
  r.k_shot = j.at("k_shot").get<size_t>();
  r.metric = j.at("metric").get<std::string>();
  r.model = j.at("model").get<std::string>();
  return r;
}

std::string EvalReport::accuracy_string() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << mean_accuracy * 100.0 << " ± " << stderr_accuracy * 100.0 << "%";
  return os.str();
}

// ---- steps ------------------------------------------------------------------------

namespace {

StepResult apply_loss(TrainState& state, ad::Tape& tape, const ad::Tensor& loss,
                      double clip_norm, uint64_t episode_seed) {
  const double loss_value = loss.value();
  if (!std::isfinite(loss_value))
    throw std::runtime_error("non-finite loss at step " + std::to_string(state.step + 1) +
                             " (episode seed " + std::to_string(episode_seed) + ")");
  ad::Gradients grads = tape.backward(loss);
  const double norm = state.optimizer->step(grads, clip_norm);
  return StepResult{loss_value, norm};
}

}  // namespace

StepResult train_step(TrainState& state, const Episode& episode, double clip_norm) {
  ad::Tape tape;
  ModelOutput out = state.model->forward(tape, episode);
  ad::Tensor loss = state.model->episode_loss(tape, out, episode);
  return apply_loss(state, tape, loss, clip_norm, episode.seed);
}

StepResult train_step_pairs(TrainState& state, const PairBatch& batch, double clip_norm) {
  if (batch.pairs.empty()) throw std::invalid_argument("train_step_pairs: empty batch");
  ad::Tape tape;
  std::vector<ad::Tensor> losses;
  losses.reserve(batch.pairs.size());
  for (const auto& [a, b, same] : batch.pairs) {
    ad::Tensor p = state.model->siamese_pair_probability(tape, a, b);
    losses.push_back(ad::reshape(bce_loss(p, same), {1}));
  }
  ad::Tensor loss = ad::mean_all(ad::concat(losses, 0));
  return apply_loss(state, tape, loss, clip_norm, 0);
}

PairBatch sample_pair_batch(const std::vector<int32_t>& word_pool, const TaskSet& tasks,
                            size_t batch_size, Rng& rng) {
  std::vector<const TaskGroup*> eligible;
  for (int32_t w : word_pool) {
    const TaskGroup* g = tasks.find_group(w);
    if (g && g->distinct_sentences >= 2) eligible.push_back(g);
  }
  if (eligible.size() < 2)
    throw std::runtime_error("pair sampler: need at least two eligible words");

  auto draw_instance = [&](const TaskGroup* g, const TaskInstance* avoid) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const auto& inst = g->occurrences[rng.next_below(g->occurrences.size())];
      if (!avoid || inst.sentence_index != avoid->sentence_index) return inst;
    }
    throw std::runtime_error("pair sampler: could not draw a distinct sentence for '" +
                             tasks.corpus.token_of(g->word) + "'");
  };

  PairBatch batch;
  const size_t same_count = batch_size / 2;  // 50% same-class
  for (size_t i = 0; i < batch_size; ++i) {
    const bool same = i < same_count;
    if (same) {
      const TaskGroup* g = eligible[rng.next_below(eligible.size())];
      const TaskInstance a = draw_instance(g, nullptr);
      const TaskInstance b = draw_instance(g, &a);
      batch.pairs.emplace_back(materialize_task(tasks.corpus, g->word, a).tokens,
                               materialize_task(tasks.corpus, g->word, b).tokens, 1);
    } else {
      const size_t i1 = rng.next_below(eligible.size());
      size_t i2 = rng.next_below(eligible.size() - 1);
      if (i2 >= i1) ++i2;
      const TaskGroup* g1 = eligible[i1];
      const TaskGroup* g2 = eligible[i2];
      batch.pairs.emplace_back(
          materialize_task(tasks.corpus, g1->word, draw_instance(g1, nullptr)).tokens,
          materialize_task(tasks.corpus, g2->word, draw_instance(g2, nullptr)).tokens, 0);
    }
  }
  return batch;
}

// ---- evaluation ---------------------------------------------------------------------

EvalReport evaluate(const Model& model, const std::vector<int32_t>& word_pool,
                    size_t episode_count, const EpisodeSpec& spec, const TaskSet& tasks,
                    uint64_t eval_seed) {
  EvalReport report;
  report.episodes = episode_count;
  report.n_way = spec.n_way;
  report.k_shot = spec.k_shot;
  report.metric = model.config().metric.name();
  report.model = head_name(model.config().head);
  report.per_episode.reserve(episode_count);
  double sum = 0.0;
  for (size_t i = 0; i < episode_count; ++i) {
    const uint64_t ep_seed = mix_seed(eval_seed, kValStream, i);
    Rng rng(ep_seed);
    Episode ep = sample_episode(word_pool, spec, tasks, rng, ep_seed);
    ad::Tape tape;
    ModelOutput out = model.forward(tape, ep);
    const double acc = model.episode_accuracy(out, ep);
    report.per_episode.push_back(acc);
    sum += acc;
  }
  report.mean_accuracy = sum / static_cast<double>(episode_count);
  if (episode_count > 1) {
    double sq = 0.0;
    for (double a : report.per_episode) {
      const double d = a - report.mean_accuracy;
      sq += d * d;
    }
    const double sample_std = std::sqrt(sq / static_cast<double>(episode_count - 1));
    report.stderr_accuracy = sample_std / std::sqrt(static_cast<double>(episode_count));
  }
  return report;
}

// ---- checkpoint -----------------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[8] = {'F', 'S', 'C', 'K', 'P', 'T', '0', '1'};
constexpr uint32_t kCheckpointVersion = 1;
}  // namespace

std::vector<uint8_t> checkpoint_bytes(const TrainState& state) {
  ByteWriter payload;
  payload.str(state.run_config_json);
  payload.u64(state.step);
  payload.f64(state.loss_ema);
  payload.u8(state.ema_initialized ? 1 : 0);
  payload.f64(state.best_val_accuracy);
  payload.u64(state.best_step);

  const auto& params = state.model->params();
  payload.u64(params.names().size());
  for (const auto& name : params.names()) {
    const auto& p = params.get(name);
    payload.str(name);
    payload.u32(static_cast<uint32_t>(p.shape.size()));
    for (size_t e : p.shape) payload.u64(e);
    payload.f64_vec(p.value);
  }
  state.optimizer->serialize(payload);

  ByteWriter out;
  out.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.u32(kCheckpointVersion);
  out.u32(crc32(payload.data().data(), payload.data().size()));
  out.bytes(payload.data().data(), payload.data().size());
  return out.data();
}

void save_checkpoint(const TrainState& state, const std::string& path) {
  write_file(path, checkpoint_bytes(state));
}

TrainState load_checkpoint(
    const std::string& path,
    const std::function<std::unique_ptr<Model>(const std::string&)>& make_model) {
  const auto bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  ByteReader header(bytes.data() + 8, bytes.size() - 8);
  const uint32_t version = header.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint version mismatch: got " + std::to_string(version) +
                             ", expected " + std::to_string(kCheckpointVersion));
  const uint32_t stored_crc = header.u32();
  const uint32_t actual_crc = crc32(bytes.data() + 16, bytes.size() - 16);
  if (stored_crc != actual_crc)
    throw std::runtime_error("checkpoint checksum mismatch (corrupt file): " + path);

  ByteReader in(bytes.data() + 16, bytes.size() - 16);
  TrainState state;
  state.run_config_json = in.str();
  state.step = in.u64();
  state.loss_ema = in.f64();
  state.ema_initialized = in.u8() != 0;
  state.best_val_accuracy = in.f64();
  state.best_step = in.u64();

  state.model = make_model(state.run_config_json);
  auto& params = state.model->params();
  const uint64_t n_params = in.u64();
  if (n_params != params.names().size())
    throw std::runtime_error("checkpoint parameter count does not match the model");
  for (uint64_t i = 0; i < n_params; ++i) {
    const std::string name = in.str();
    const uint32_t rank = in.u32();
    ad::Shape shape(rank);
    for (auto& e : shape) e = in.u64();
    std::vector<double> value = in.f64_vec();
    if (!params.contains(name))
      throw std::runtime_error("checkpoint parameter '" + name + "' unknown to the model");
    auto& p = params.get(name);
    if (p.shape != shape || p.value.size() != value.size())
      throw std::runtime_error("checkpoint parameter '" + name + "' shape mismatch");
    p.value = std::move(value);
  }
  state.optimizer = std::make_unique<Optimizer>(OptimizerConfig{}, params);
  state.optimizer->deserialize(in);
  return state;
}

// ---- fit --------------------------------------------------------------------------------

void fit(TrainState& state, const TrainConfig& config, const TaskSet& tasks,
         const VocabSplit& split, const std::string& out_dir, const FitCallbacks& callbacks) {
  config.validate();
  if (!state.model || !state.optimizer) throw std::invalid_argument("fit: uninitialized state");
  const bool siamese = state.model->config().head == ModelHead::Siamese;

  namespace fs = std::filesystem;
  std::ofstream log;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    log.open(fs::path(out_dir) / "train.log", state.step > 0 ? std::ios::app : std::ios::trunc);
  }
  const auto t0 = std::chrono::steady_clock::now();

  auto run_eval = [&](uint64_t at_step) {
    EvalReport val = evaluate(*state.model, split.validation_words, config.eval_episodes,
                              config.spec, tasks, mix_seed(config.seed, kValStream));
    if (val.mean_accuracy > state.best_val_accuracy) {  // ties keep the earliest step
      state.best_val_accuracy = val.mean_accuracy;
      state.best_step = at_step;
      if (!out_dir.empty())
        save_checkpoint(state, (fs::path(out_dir) / "checkpoint.best.bin").string());
    }
    if (log.is_open()) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      json line;
      line["step"] = at_step;
      line["loss_ema"] = state.loss_ema;
      line["val_accuracy"] = val.mean_accuracy;
      line["wall_seconds"] = wall;
      log << line.dump() << '\n' << std::flush;
    }
    return val.mean_accuracy;
  };

  while (state.step < config.steps) {
    const uint64_t step = state.step + 1;
    const uint64_t ep_seed = mix_seed(config.seed, kTrainStream, step);
    Rng rng(ep_seed);
    StepResult result{};
    if (siamese) {
      PairBatch batch =
          sample_pair_batch(split.train_words, tasks, config.spec.batch_size, rng);
      result = train_step_pairs(state, batch, config.clip_norm);
    } else {
      Episode ep = sample_episode(split.train_words, config.spec, tasks, rng, ep_seed);
      result = train_step(state, ep, config.clip_norm);
    }
    state.step = step;
    if (!state.ema_initialized) {
      state.loss_ema = result.loss;
      state.ema_initialized = true;
    } else {
      state.loss_ema = 0.99 * state.loss_ema + 0.01 * result.loss;
    }

    if (step % config.eval_every == 0 || step == config.steps) {
      const double val_acc = run_eval(step);
      if (!out_dir.empty())
        save_checkpoint(state, (fs::path(out_dir) / "checkpoint.last.bin").string());
      if (callbacks.on_eval && !callbacks.on_eval(step, state.loss_ema, val_acc)) break;
    }
  }
  if (!out_dir.empty()) {
    save_checkpoint(state, (fs::path(out_dir) / "checkpoint.last.bin").string());
    // a run that never reached an eval still leaves a best checkpoint behind
    if (state.best_val_accuracy < 0.0)
      save_checkpoint(state, (fs::path(out_dir) / "checkpoint.best.bin").string());
  }
}

}  // namespace fewshot
