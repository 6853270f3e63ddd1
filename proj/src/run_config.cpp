#include "fewshot/run_config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fewshot {

using nlohmann::json;

namespace {

// collects unknown-key and type errors so the caller sees everything at once
struct KeyChecker {
  std::vector<std::string> errors;

  void check(const json& obj, const std::string& scope,
             const std::vector<std::string>& allowed) {
    for (const auto& [key, value] : obj.items()) {
      bool ok = false;
      for (const auto& a : allowed)
        if (key == a) ok = true;
      if (!ok) errors.push_back("unknown key '" + (scope.empty() ? key : scope + "." + key) + "'");
    }
  }

  template <typename T>
  void read(const json& obj, const std::string& scope, const std::string& key, T& out) {
    if (!obj.contains(key)) return;
    try {
      out = obj.at(key).get<T>();
    } catch (const std::exception&) {
      errors.push_back("bad value for '" + (scope.empty() ? key : scope + "." + key) + "'");
    }
  }
};

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config root must be a JSON object");

  RunConfig cfg;
  KeyChecker kc;
  kc.check(j, "",
           {"corpus", "split_sizes", "split_seed", "episode", "model", "train", "output_dir"});
  kc.read(j, "", "corpus", cfg.corpus);
  kc.read(j, "", "split_sizes", cfg.split_sizes);
  kc.read(j, "", "split_seed", cfg.split_seed);
  kc.read(j, "", "output_dir", cfg.output_dir);

  if (j.contains("episode") && j.at("episode").is_object()) {
    const json& e = j.at("episode");
    kc.check(e, "episode", {"n_way", "k_shot", "batch_size"});
    kc.read(e, "episode", "n_way", cfg.episode.n_way);
    kc.read(e, "episode", "k_shot", cfg.episode.k_shot);
    kc.read(e, "episode", "batch_size", cfg.episode.batch_size);
  } else if (j.contains("episode")) {
    kc.errors.push_back("'episode' must be an object");
  }

  if (j.contains("model") && j.at("model").is_object()) {
    const json& m = j.at("model");
    kc.check(m, "model",
             {"head", "metric", "fce_enabled", "fce_steps", "d_word", "relation_hidden",
              "relation_layers", "init_seed"});
    kc.read(m, "model", "head", cfg.head);
    kc.read(m, "model", "metric", cfg.metric);
    kc.read(m, "model", "fce_enabled", cfg.fce_enabled);
    kc.read(m, "model", "fce_steps", cfg.fce_steps);
    kc.read(m, "model", "d_word", cfg.d_word);
    kc.read(m, "model", "relation_hidden", cfg.relation_hidden);
    kc.read(m, "model", "relation_layers", cfg.relation_layers);
    kc.read(m, "model", "init_seed", cfg.init_seed);
  } else if (j.contains("model")) {
    kc.errors.push_back("'model' must be an object");
  }

  if (j.contains("train") && j.at("train").is_object()) {
    const json& t = j.at("train");
    kc.check(t, "train",
             {"steps", "optimizer", "lr", "beta1", "beta2", "eps", "eval_every", "eval_episodes",
              "clip_norm", "seed"});
    kc.read(t, "train", "steps", cfg.train.steps);
    std::string opt = cfg.train.optimizer.name();
    kc.read(t, "train", "optimizer", opt);
    try {
      cfg.train.optimizer.kind = OptimizerConfig::parse_kind(opt);
    } catch (const std::exception& e) {
      kc.errors.push_back(e.what());
    }
    kc.read(t, "train", "lr", cfg.train.optimizer.lr);
    kc.read(t, "train", "beta1", cfg.train.optimizer.beta1);
    kc.read(t, "train", "beta2", cfg.train.optimizer.beta2);
    kc.read(t, "train", "eps", cfg.train.optimizer.eps);
    kc.read(t, "train", "eval_every", cfg.train.eval_every);
    kc.read(t, "train", "eval_episodes", cfg.train.eval_episodes);
    kc.read(t, "train", "clip_norm", cfg.train.clip_norm);
    kc.read(t, "train", "seed", cfg.train.seed);
  } else if (j.contains("train")) {
    kc.errors.push_back("'train' must be an object");
  }

  if (!kc.errors.empty()) {
    std::ostringstream os;
    os << "config errors:";
    for (const auto& e : kc.errors) os << "\n  - " << e;
    throw std::invalid_argument(os.str());
  }
  cfg.train.spec = cfg.episode;
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return from_json_text(text.str());
}

std::string RunConfig::to_json_text() const {
  json j;
  j["corpus"] = corpus;
  j["split_sizes"] = split_sizes;
  j["split_seed"] = split_seed;
  j["episode"] = {{"n_way", episode.n_way},
                  {"k_shot", episode.k_shot},
                  {"batch_size", episode.batch_size}};
  j["model"] = {{"head", head},
                {"metric", metric},
                {"fce_enabled", fce_enabled},
                {"fce_steps", fce_steps},
                {"d_word", d_word},
                {"relation_hidden", relation_hidden},
                {"relation_layers", relation_layers},
                {"init_seed", init_seed}};
  j["train"] = {{"steps", train.steps},
                {"optimizer", train.optimizer.name()},
                {"lr", train.optimizer.lr},
                {"beta1", train.optimizer.beta1},
                {"beta2", train.optimizer.beta2},
                {"eps", train.optimizer.eps},
                {"eval_every", train.eval_every},
                {"eval_episodes", train.eval_episodes},
                {"clip_norm", train.clip_norm},
                {"seed", train.seed}};
  j["output_dir"] = output_dir;
  return j.dump(2);
}

void RunConfig::validate() const {
  std::vector<std::string> errors;
  if (corpus.empty()) errors.push_back("'corpus' is required");
  if (split_sizes.size() != 3 || split_sizes[0] == 0 || split_sizes[1] == 0 || split_sizes[2] == 0)
    errors.push_back("'split_sizes' must be three positive counts");
  try {
    episode.validate();
  } catch (const std::exception& e) {
    errors.push_back(e.what());
  }
  try {
    parse_head(head);
  } catch (const std::exception& e) {
    errors.push_back(e.what());
  }
  try {
    MetricKind::parse(metric);
  } catch (const std::exception& e) {
    errors.push_back(e.what());
  }
  if (fce_enabled && fce_steps < 1) errors.push_back("model.fce_steps must be >= 1");
  if (relation_layers < 1) errors.push_back("model.relation_layers must be >= 1");
  try {
    train.validate();
  } catch (const std::exception& e) {
    errors.push_back(e.what());
  }
  if (output_dir.empty()) errors.push_back("'output_dir' must not be empty");
  if (!errors.empty()) {
    std::ostringstream os;
    os << "config errors:";
    for (const auto& e : errors) os << "\n  - " << e;
    throw std::invalid_argument(os.str());
  }
}

ModelConfig RunConfig::model_config(size_t vocab_size) const {
  ModelConfig mc;
  mc.head = parse_head(head);
  mc.metric = MetricKind::parse(metric);
  mc.fce = FceConfig{fce_enabled, fce_steps, kEmbedDim};
  mc.d_word = d_word;
  mc.relation_hidden = relation_hidden;
  mc.relation_layers = relation_layers;
  mc.vocab_size = vocab_size;
  mc.init_seed = init_seed;
  return mc;
}

}  // namespace fewshot
