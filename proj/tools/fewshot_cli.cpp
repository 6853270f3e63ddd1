// fewshot — episodic few-shot learners on the missing-word task.
//
// Subcommands: ingest, split, train, eval, compare-metrics,
// export-attention, export-embeddings. See --help on each.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fewshot/episodes.hpp"
#include "fewshot/models.hpp"
#include "fewshot/report_tables.hpp"
#include "fewshot/run_config.hpp"
#include "fewshot/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fewshot;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// config/usage problems exit 2 instead of 1
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string apply_output_root(const std::string& dir) {
  const char* root = std::getenv("FEWSHOT_OUTPUT_ROOT");
  if (!root || !*root || fs::path(dir).is_absolute()) return dir;
  return (fs::path(root) / dir).string();
}

// checkpoints carry the run config plus the corpus-derived vocab size
std::string make_checkpoint_echo(const RunConfig& cfg, size_t vocab_size) {
  json j;
  j["run_config"] = json::parse(cfg.to_json_text());
  j["vocab_size"] = vocab_size;
  return j.dump();
}

std::pair<RunConfig, size_t> parse_checkpoint_echo(const std::string& echo) {
  const json j = json::parse(echo);
  RunConfig cfg = RunConfig::from_json_text(j.at("run_config").dump());
  return {cfg, j.at("vocab_size").get<size_t>()};
}

TrainState load_checkpoint_file(const std::string& path) {
  return load_checkpoint(path, [](const std::string& echo) {
    auto [cfg, vocab] = parse_checkpoint_echo(echo);
    return std::make_unique<Model>(cfg.model_config(vocab));
  });
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
}

std::string metric_dir_name(const std::string& metric) {
  std::string s = metric;
  for (char& c : s)
    if (c == ':' || c == '=') c = '_';
  return s;
}

// ---- ingest ---------------------------------------------------------------------

int cmd_ingest(const std::string& input, const std::string& out_dir, uint32_t min_occurrences) {
  if (!fs::exists(input)) throw UsageError("corpus file not found: " + input);
  Corpus corpus = ingest_file(input);
  TaskSet tasks = build_task_set(std::move(corpus), min_occurrences);
  fs::create_directories(out_dir);
  const std::string artifact = (fs::path(out_dir) / "corpus.bin").string();
  save_task_set(tasks, artifact);

  std::map<std::string, size_t> histogram;
  auto bucket = [](size_t n) -> std::string {
    if (n < 5) return std::to_string(n);
    if (n < 10) return "5-9";
    if (n < 20) return "10-19";
    if (n < 50) return "20-49";
    return "50+";
  };
  for (const auto& g : tasks.groups) histogram[bucket(g.occurrences.size())]++;

  std::cout << "corpus: " << input << "\n"
            << "sentences: " << tasks.corpus.sentences.size() << "\n"
            << "vocabulary: " << tasks.corpus.vocab_size() << " tokens\n"
            << "eligible label words (>= " << min_occurrences
            << " distinct sentences): " << tasks.groups.size() << "\n"
            << "instances per label word:\n";
  for (const auto& [b, count] : histogram) std::cout << "  " << b << ": " << count << "\n";
  std::cout << "artifact: " << artifact << "\n";
  return 0;
}

// ---- split ----------------------------------------------------------------------

int cmd_split(const std::string& artifact, const std::vector<size_t>& sizes, uint64_t seed,
              const std::string& out_path) {
  if (sizes.size() != 3) throw UsageError("--sizes requires three counts: train,validation,test");
  TaskSet tasks = load_task_set(artifact);
  VocabSplit split = split_vocab(tasks, sizes[0], sizes[1], sizes[2], seed);
  json j;
  j["seed"] = split.seed;
  j["train_words"] = split.train_words;
  j["validation_words"] = split.validation_words;
  j["test_words"] = split.test_words;
  json names;
  auto to_names = [&](const std::vector<int32_t>& ids) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int32_t id : ids) out.push_back(tasks.corpus.token_of(id));
    return out;
  };
  j["train_names"] = to_names(split.train_words);
  j["validation_names"] = to_names(split.validation_words);
  j["test_names"] = to_names(split.test_words);
  write_text(out_path, j.dump(2) + "\n");
  std::cout << "split sizes: " << split.train_words.size() << "/" << split.validation_words.size()
            << "/" << split.test_words.size() << " -> " << out_path << "\n";
  return 0;
}

// ---- train ----------------------------------------------------------------------

struct TrainOverrides {
  std::string corpus, head, metric, output_dir, optimizer;
  int64_t n_way = -1, k_shot = -1, steps = -1, eval_every = -1, eval_episodes = -1;
  int64_t seed = -1, fce_steps = -1;
  double lr = -1.0;
  int fce = -1;  // -1 unset, 0 off, 1 on
};

RunConfig merged_config(const std::string& config_path, const TrainOverrides& ov) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
  if (!ov.corpus.empty()) cfg.corpus = ov.corpus;
  if (!ov.head.empty()) cfg.head = ov.head;
  if (!ov.metric.empty()) cfg.metric = ov.metric;
  if (!ov.output_dir.empty()) cfg.output_dir = ov.output_dir;
  if (!ov.optimizer.empty())
    cfg.train.optimizer.kind = OptimizerConfig::parse_kind(ov.optimizer);
  if (ov.n_way >= 0) cfg.episode.n_way = static_cast<size_t>(ov.n_way);
  if (ov.k_shot >= 0) cfg.episode.k_shot = static_cast<size_t>(ov.k_shot);
  if (ov.steps >= 0) cfg.train.steps = static_cast<size_t>(ov.steps);
  if (ov.eval_every >= 0) cfg.train.eval_every = static_cast<size_t>(ov.eval_every);
  if (ov.eval_episodes >= 0) cfg.train.eval_episodes = static_cast<size_t>(ov.eval_episodes);
  if (ov.seed >= 0) cfg.train.seed = static_cast<uint64_t>(ov.seed);
  if (ov.fce_steps >= 0) cfg.fce_steps = static_cast<size_t>(ov.fce_steps);
  if (ov.lr >= 0.0) cfg.train.optimizer.lr = ov.lr;
  if (ov.fce >= 0) cfg.fce_enabled = ov.fce == 1;
  cfg.train.spec = cfg.episode;
  return cfg;
}

int run_training(RunConfig cfg, bool resume) {
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  cfg.output_dir = apply_output_root(cfg.output_dir);
  TaskSet tasks = load_task_set(cfg.corpus);
  VocabSplit split =
      split_vocab(tasks, cfg.split_sizes[0], cfg.split_sizes[1], cfg.split_sizes[2], cfg.split_seed);

  fs::create_directories(cfg.output_dir);
  write_text((fs::path(cfg.output_dir) / "config.json").string(), cfg.to_json_text() + "\n");

  const std::string last_path = (fs::path(cfg.output_dir) / "checkpoint.last.bin").string();
  TrainState state;
  if (resume && fs::exists(last_path)) {
    state = load_checkpoint_file(last_path);
    std::cout << "resuming from step " << state.step << "\n";
  } else {
    state.model = std::make_unique<Model>(cfg.model_config(tasks.corpus.vocab_size()));
    state.optimizer = std::make_unique<Optimizer>(cfg.train.optimizer, state.model->params());
    state.run_config_json = make_checkpoint_echo(cfg, tasks.corpus.vocab_size());
  }

  FitCallbacks callbacks;
  callbacks.on_eval = [](uint64_t step, double loss_ema, double val_acc) {
    std::cout << "step " << step << "  loss_ema " << loss_ema << "  val_accuracy " << val_acc
              << std::endl;
    return true;
  };
  fit(state, cfg.train, tasks, split, cfg.output_dir, callbacks);

  // final report: test-set evaluation of the best-validation checkpoint
  const std::string best_path = (fs::path(cfg.output_dir) / "checkpoint.best.bin").string();
  TrainState best = load_checkpoint_file(best_path);
  EvalReport report = evaluate(*best.model, split.test_words, cfg.train.eval_episodes,
                               cfg.episode, tasks, mix_seed(cfg.train.seed, 3));
  write_text((fs::path(cfg.output_dir) / "eval.test.json").string(), report.to_json() + "\n");
  std::cout << "test accuracy: " << report.accuracy_string() << " over " << report.episodes
            << " episodes (best step " << best.best_step << ")\n";
  return 0;
}

// ---- eval -----------------------------------------------------------------------

int cmd_eval(const std::string& checkpoint, const std::string& corpus_override,
             const std::string& role, size_t episodes, int64_t seed, int64_t n_way,
             int64_t k_shot, const std::string& out_path) {
  TrainState state = load_checkpoint_file(checkpoint);
  auto [cfg, vocab] = parse_checkpoint_echo(state.run_config_json);
  const std::string corpus_path = corpus_override.empty() ? cfg.corpus : corpus_override;
  TaskSet tasks = load_task_set(corpus_path);
  if (tasks.corpus.vocab_size() != vocab)
    throw std::runtime_error("corpus vocabulary (" + std::to_string(tasks.corpus.vocab_size()) +
                             ") does not match the checkpoint (" + std::to_string(vocab) + ")");
  VocabSplit split =
      split_vocab(tasks, cfg.split_sizes[0], cfg.split_sizes[1], cfg.split_sizes[2], cfg.split_seed);
  EpisodeSpec spec = cfg.episode;
  if (n_way >= 0) spec.n_way = static_cast<size_t>(n_way);
  if (k_shot >= 0) spec.k_shot = static_cast<size_t>(k_shot);
  const uint64_t eval_seed =
      seed >= 0 ? static_cast<uint64_t>(seed) : mix_seed(cfg.train.seed, 3);
  EvalReport report =
      evaluate(*state.model, split.of_role(role), episodes, spec, tasks, eval_seed);
  std::cout << role << " accuracy: " << report.accuracy_string() << " over " << report.episodes
            << " episodes\n";
  const std::string out = out_path.empty()
                              ? (fs::path(checkpoint).parent_path() / ("eval." + role + ".json"))
                                    .string()
                              : out_path;
  write_text(out, report.to_json() + "\n");
  return 0;
}

// ---- compare-metrics ---------------------------------------------------------------

int cmd_compare_metrics(const std::string& config_path, std::vector<std::string> metric_names,
                        std::vector<size_t> shots, bool train_inline, const std::string& out_dir_flag) {
  RunConfig base = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
  if (metric_names.empty())
    metric_names = {"cosine", "euclidean", "poincare", "minkowski:p=1", "minkowski:p=3"};
  if (shots.empty()) shots = {1, 2, 3};
  for (const auto& m : metric_names) MetricKind::parse(m);  // validate early

  const std::string out_root =
      apply_output_root(out_dir_flag.empty() ? base.output_dir : out_dir_flag);
  fs::create_directories(out_root);

  MetricTable table;
  table.metrics = metric_names;
  table.shots = shots;
  for (const auto& metric : metric_names) {
    std::vector<std::optional<double>> row;
    for (size_t k : shots) {
      const fs::path run_dir =
          fs::path(out_root) / (metric_dir_name(metric) + "_k" + std::to_string(k));
      const fs::path best = run_dir / "checkpoint.best.bin";
      if (!fs::exists(best) && train_inline) {
        RunConfig cfg = base;
        cfg.metric = metric;
        cfg.episode.k_shot = k;
        cfg.train.spec = cfg.episode;
        cfg.output_dir = run_dir.string();
        run_training(cfg, /*resume=*/false);
      }
      if (!fs::exists(best)) {
        row.push_back(std::nullopt);  // absent cell, exit still 0
        continue;
      }
      const fs::path report_path = run_dir / "eval.test.json";
      if (fs::exists(report_path)) {
        std::ifstream in(report_path);
        std::ostringstream text;
        text << in.rdbuf();
        row.push_back(EvalReport::from_json(text.str()).mean_accuracy);
      } else {
        row.push_back(std::nullopt);
      }
    }
    table.cells.push_back(std::move(row));
  }

  const std::string md = metric_table_markdown(table);
  write_text((fs::path(out_root) / "metric_table.md").string(), md);
  write_text((fs::path(out_root) / "metric_table.csv").string(), metric_table_csv(table));
  std::cout << md;
  return 0;
}

// ---- exports -------------------------------------------------------------------------

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

int cmd_export_attention(const std::string& checkpoint, const std::string& episode_file,
                         const std::string& out_path, size_t episode_index) {
  TrainState state = load_checkpoint_file(checkpoint);
  if (state.model->config().head != ModelHead::Matching)
    throw std::runtime_error("export-attention requires a matching-network checkpoint, got " +
                             head_name(state.model->config().head));
  const auto episodes = import_episodes(episode_file);
  if (episode_index >= episodes.size())
    throw std::runtime_error("episode index " + std::to_string(episode_index) +
                             " out of range; file has " + std::to_string(episodes.size()));
  const Episode& ep = episodes[episode_index];
  ad::Tape tape;
  ModelOutput out = state.model->forward(tape, ep);

  std::ostringstream csv;
  csv.precision(17);
  csv << "query_word";
  for (const auto& [tokens, cls] : ep.support) csv << "," << csv_escape(ep.label_words.at(cls));
  csv << "\n";
  for (size_t q = 0; q < ep.query.size(); ++q) {
    csv << csv_escape(ep.label_words.at(ep.query[q].second));
    for (size_t j = 0; j < ep.support.size(); ++j) csv << "," << out.attention.at(q, j);
    csv << "\n";
  }
  write_text(out_path, csv.str());
  std::cout << "wrote " << ep.query.size() << "x" << ep.support.size() << " attention matrix to "
            << out_path << "\n";
  return 0;
}

int cmd_export_embeddings(const std::string& checkpoint, const std::string& episode_file,
                          const std::string& out_path) {
  TrainState state = load_checkpoint_file(checkpoint);
  const auto episodes = import_episodes(episode_file);
  if (episodes.empty()) throw std::runtime_error("episode file is empty: " + episode_file);

  std::ostringstream csv;
  csv.precision(17);
  csv << "label,role";
  for (size_t d = 0; d < kEmbedDim; ++d) csv << ",e" << d;
  csv << "\n";
  size_t rows = 0;
  for (const auto& ep : episodes) {
    ad::Tape tape;
    auto bound = state.model->embedder().bind(tape);
    auto [support_emb, query_emb] = state.model->embedder().embed_episode(bound, ep);
    for (size_t i = 0; i < ep.support.size(); ++i) {
      csv << csv_escape(ep.label_words.at(ep.support[i].second)) << ",support";
      for (size_t d = 0; d < kEmbedDim; ++d) csv << "," << support_emb.at(i, d);
      csv << "\n";
      ++rows;
    }
    for (size_t q = 0; q < ep.query.size(); ++q) {
      csv << csv_escape(ep.label_words.at(ep.query[q].second)) << ",query";
      for (size_t d = 0; d < kEmbedDim; ++d) csv << "," << query_emb.at(q, d);
      csv << "\n";
      ++rows;
    }
  }
  write_text(out_path, csv.str());
  std::cout << "wrote " << rows << " embedding rows to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fewshot: metric-based one-/few-shot learners on the missing-word task"};
  app.require_subcommand(1);

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "build the corpus artifact from raw text");
  std::string in_path, out_dir = ".";
  uint32_t min_occ = 3;
  ingest_cmd->add_option("--input", in_path, "corpus text file (wiki.train.tokens layout)")
      ->required();
  ingest_cmd->add_option("--out", out_dir, "output directory for corpus.bin");
  ingest_cmd->add_option("--min-occurrences", min_occ,
                         "minimum distinct sentences per label word (>= 2)");

  // split
  auto* split_cmd = app.add_subcommand("split", "write a vocabulary split file");
  std::string split_artifact, split_out = "split.json";
  std::vector<size_t> split_sizes = {9000, 1000, 1000};
  uint64_t split_seed = 7;
  split_cmd->add_option("--corpus", split_artifact, "corpus artifact from ingest")->required();
  split_cmd->add_option("--sizes", split_sizes, "train validation test sizes")->expected(3);
  split_cmd->add_option("--seed", split_seed, "split seed");
  split_cmd->add_option("--out", split_out, "output path");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
  std::string train_config;
  TrainOverrides ov;
  bool resume = false;
  train_cmd->add_option("--config", train_config, "run config JSON file");
  train_cmd->add_option("--corpus", ov.corpus, "override corpus artifact path");
  train_cmd->add_option("--head", ov.head, "matching|prototypical|relation|siamese");
  train_cmd->add_option("--metric", ov.metric, "cosine|euclidean|minkowski:p=<real>|poincare");
  train_cmd->add_option("--n-way", ov.n_way, "classes per episode");
  train_cmd->add_option("--k-shot", ov.k_shot, "supports per class");
  train_cmd->add_option("--steps", ov.steps, "training episodes");
  train_cmd->add_option("--eval-every", ov.eval_every, "validation interval");
  train_cmd->add_option("--eval-episodes", ov.eval_episodes, "episodes per evaluation");
  train_cmd->add_option("--seed", ov.seed, "training seed");
  train_cmd->add_option("--lr", ov.lr, "learning rate");
  train_cmd->add_option("--optimizer", ov.optimizer, "sgd|adam");
  train_cmd->add_option("--fce-steps", ov.fce_steps, "attLSTM processing steps K");
  train_cmd->add_flag("--fce,!--no-fce", ov.fce, "toggle full context embeddings");
  train_cmd->add_option("--output-dir", ov.output_dir, "run output directory");
  train_cmd->add_flag("--resume", resume, "continue from checkpoint.last.bin");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string eval_ckpt, eval_corpus, eval_role = "test", eval_out;
  size_t eval_episodes = 1000;
  int64_t eval_seed = -1, eval_n = -1, eval_k = -1;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--corpus", eval_corpus, "override corpus artifact path");
  eval_cmd->add_option("--split", eval_role, "train|validation|test");
  eval_cmd->add_option("--episodes", eval_episodes, "episode count");
  eval_cmd->add_option("--seed", eval_seed, "evaluation seed");
  eval_cmd->add_option("--n-way", eval_n, "override N");
  eval_cmd->add_option("--k-shot", eval_k, "override k");
  eval_cmd->add_option("--out", eval_out, "report output path");

  // compare-metrics
  auto* cmp_cmd = app.add_subcommand("compare-metrics", "accuracy grid across metrics and shots");
  std::string cmp_config, cmp_out;
  std::vector<std::string> cmp_metrics;
  std::vector<size_t> cmp_shots;
  bool cmp_train = false;
  cmp_cmd->add_option("--config", cmp_config, "base run config JSON file");
  cmp_cmd->add_option("--metrics", cmp_metrics, "metric list (default: the five studied)");
  cmp_cmd->add_option("--shots", cmp_shots, "shot counts (default: 1 2 3)");
  cmp_cmd->add_flag("--train-inline", cmp_train, "train any missing cell before reporting");
  cmp_cmd->add_option("--out", cmp_out, "output directory (default: config output_dir)");

  // export-attention
  auto* att_cmd = app.add_subcommand("export-attention", "attention matrix CSV for one episode");
  std::string att_ckpt, att_eps, att_out = "attention.csv";
  size_t att_index = 0;
  att_cmd->add_option("--checkpoint", att_ckpt, "matching-network checkpoint")->required();
  att_cmd->add_option("--episodes", att_eps, "episode file (JSON lines)")->required();
  att_cmd->add_option("--out", att_out, "CSV output path");
  att_cmd->add_option("--episode-index", att_index, "which episode in the file");

  // export-embeddings
  auto* emb_cmd = app.add_subcommand("export-embeddings", "per-sentence embedding CSV");
  std::string emb_ckpt, emb_eps, emb_out = "embeddings.csv";
  emb_cmd->add_option("--checkpoint", emb_ckpt, "checkpoint file")->required();
  emb_cmd->add_option("--episodes", emb_eps, "episode file (JSON lines)")->required();
  emb_cmd->add_option("--out", emb_out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (app.got_subcommand(ingest_cmd)) return cmd_ingest(in_path, out_dir, min_occ);
    if (app.got_subcommand(split_cmd))
      return cmd_split(split_artifact, split_sizes, split_seed, split_out);
    if (app.got_subcommand(train_cmd)) {
      RunConfig cfg = merged_config(train_config, ov);
      return run_training(std::move(cfg), resume);
    }
    if (app.got_subcommand(eval_cmd))
      return cmd_eval(eval_ckpt, eval_corpus, eval_role, eval_episodes, eval_seed, eval_n, eval_k,
                      eval_out);
    if (app.got_subcommand(cmp_cmd))
      return cmd_compare_metrics(cmp_config, cmp_metrics, cmp_shots, cmp_train, cmp_out);
    if (app.got_subcommand(att_cmd))
      return cmd_export_attention(att_ckpt, att_eps, att_out, att_index);
    if (app.got_subcommand(emb_cmd)) return cmd_export_embeddings(emb_ckpt, emb_eps, emb_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
