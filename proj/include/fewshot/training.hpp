#pragma once

#include <functional>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "fewshot/episodes.hpp"
#include "fewshot/models.hpp"
#include "fewshot/serialize.hpp"

namespace fewshot {

struct OptimizerConfig {
  enum class Kind { Sgd, Adam };
  Kind kind = Kind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  std::string name() const { return kind == Kind::Sgd ? "sgd" : "adam"; }
  static Kind parse_kind(const std::string& s);
};

struct TrainConfig {
  EpisodeSpec spec;
  size_t steps = 30000;
  OptimizerConfig optimizer;
  size_t eval_every = 500;
  size_t eval_episodes = 200;
  uint64_t seed = 0;
  double clip_norm = 5.0;

  void validate() const;
};

class Optimizer {
 public:
  Optimizer(OptimizerConfig config, ad::ParameterStore& params);

  // global-norm clip, then SGD/Adam update; returns the pre-clip norm
  double step(const ad::Gradients& grads, double clip_norm);

  const OptimizerConfig& config() const { return config_; }
  uint64_t timestep() const { return t_; }

  // checkpoint round trip
  void serialize(ByteWriter& out) const;
  void deserialize(ByteReader& in);

 private:
  OptimizerConfig config_;
  ad::ParameterStore* params_;
  uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;  // adam moments, by parameter order
};

struct EvalReport {
  size_t episodes = 0;
  double mean_accuracy = 0.0;
  double stderr_accuracy = 0.0;
  std::vector<double> per_episode;
  size_t n_way = 0;
  size_t k_shot = 0;
  std::string metric;
  std::string model;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  // the paper's table style, e.g. "28.6 ± 0.4%"
  std::string accuracy_string() const;
};

// Everything a resumable run carries.
struct TrainState {
  std::unique_ptr<Model> model;
  std::unique_ptr<Optimizer> optimizer;
  uint64_t step = 0;
  double loss_ema = 0.0;
  bool ema_initialized = false;
  double best_val_accuracy = -1.0;
  uint64_t best_step = 0;
  std::string run_config_json;  // opaque echo stored in the checkpoint
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
};

// forward + backward + clip + update on one episode
StepResult train_step(TrainState& state, const Episode& episode, double clip_norm);

// siamese pretraining batch: (a, b, same?) triples
struct PairBatch {
  std::vector<std::tuple<std::vector<int32_t>, std::vector<int32_t>, int>> pairs;
};
StepResult train_step_pairs(TrainState& state, const PairBatch& batch, double clip_norm);

EvalReport evaluate(const Model& model, const std::vector<int32_t>& word_pool,
                    size_t episode_count, const EpisodeSpec& spec, const TaskSet& tasks,
                    uint64_t eval_seed);

struct FitCallbacks {
  // called after each validation eval; return false to stop early
  std::function<bool(uint64_t step, double loss_ema, double val_accuracy)> on_eval;
};

// Episodic training loop. Writes checkpoint.last.bin / checkpoint.best.bin
// and train.log under out_dir ("" keeps everything in memory). Resumes from
// state.step when it is nonzero.
void fit(TrainState& state, const TrainConfig& config, const TaskSet& tasks,
         const VocabSplit& split, const std::string& out_dir, const FitCallbacks& callbacks = {});

PairBatch sample_pair_batch(const std::vector<int32_t>& word_pool, const TaskSet& tasks,
                            size_t batch_size, Rng& rng);

// ---- checkpoint -------------------------------------------------------------

void save_checkpoint(const TrainState& state, const std::string& path);
// constructs the model from the stored config echo via `make_model`
TrainState load_checkpoint(const std::string& path,
                           const std::function<std::unique_ptr<Model>(const std::string&)>&
                               make_model);

std::vector<uint8_t> checkpoint_bytes(const TrainState& state);

}  // namespace fewshot
