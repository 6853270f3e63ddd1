#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "fewshot/rng.hpp"

namespace fewshot {

// Reserved embedding-table rows. Corpus tokens start at kFirstWordId; the
// corpus is lowercased so the uppercase names can never collide with text.
struct SpecialIds {
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kUnk = 1;
  static constexpr int32_t kBlank = 2;
  static constexpr int32_t kFirstWord = 3;
};

struct Corpus {
  std::vector<std::vector<int32_t>> sentences;
  std::vector<std::string> id_to_token;  // [0..2] are the specials
  std::unordered_map<std::string, int32_t> token_to_id;
  std::vector<int64_t> frequency;  // by token id
  std::string source_path;
  uint64_t source_lines = 0;

  size_t vocab_size() const { return id_to_token.size(); }
  int32_t id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token_of(int32_t id) const;
};

// One occurrence of a label word; the blanked sentence is materialized on
// demand to keep large corpora cheap to hold.
struct TaskInstance {
  uint32_t sentence_index = 0;
  uint32_t position = 0;
};

struct TaskGroup {
  int32_t word = 0;  // label word id
  std::vector<TaskInstance> occurrences;
  uint32_t distinct_sentences = 0;
};

struct MaterializedTask {
  int32_t label_word;
  std::vector<int32_t> tokens;  // BLANK at the label position, truncated
  size_t blank_position;        // within the truncated sentence
};

// Corpus plus its label-word task groups: the sampler's world.
struct TaskSet {
  Corpus corpus;
  std::vector<TaskGroup> groups;  // sorted by word id
  std::unordered_map<int32_t, size_t> group_of_word;
  uint32_t min_occurrences = 3;

  const TaskGroup* find_group(int32_t word) const;
};

struct VocabSplit {
  std::vector<int32_t> train_words;       // each sorted ascending
  std::vector<int32_t> validation_words;
  std::vector<int32_t> test_words;
  uint64_t seed = 0;

  const std::vector<int32_t>& of_role(const std::string& role) const;
};

struct EpisodeSpec {
  size_t n_way = 5;
  size_t k_shot = 1;
  size_t batch_size = 20;

  void validate() const;
};

struct Episode {
  size_t n_way = 0;
  size_t k_shot = 0;
  std::vector<std::pair<std::vector<int32_t>, size_t>> support;  // (tokens, class)
  std::vector<std::pair<std::vector<int32_t>, size_t>> query;
  std::vector<std::string> label_words;   // class index -> word
  uint64_t seed = 0;
  // corpus bookkeeping (not exported): sentence indices backing each item
  std::vector<uint32_t> support_sentences;
  std::vector<uint32_t> query_sentences;
};

// sentences are truncated to this many tokens, centered on the blank
inline constexpr size_t kMaxSentenceTokens = 48;

// Lowercases, drops '='-delimited heading lines and blanks, splits on
// sentence terminators (. ! ?), whitespace-tokenizes.
Corpus ingest(std::istream& text, const std::string& source_path);
Corpus ingest_file(const std::string& path);

// Groups label-word occurrences. Eligible label words are >= 2 chars, all
// ASCII-alphabetic, and appear in >= min_occurrences distinct sentences.
std::vector<TaskGroup> build_tasks(const Corpus& corpus, uint32_t min_occurrences);

TaskSet build_task_set(Corpus corpus, uint32_t min_occurrences);

MaterializedTask materialize_task(const Corpus& corpus, int32_t word, const TaskInstance& inst);

// Seeded uniform split of eligible label words. Exact sizes when the pool
// allows; otherwise scaled proportionally (same ratios, rounded, min 1).
VocabSplit split_vocab(const TaskSet& tasks, size_t train, size_t validation, size_t test,
                       uint64_t seed);

Episode sample_episode(const std::vector<int32_t>& word_pool, const EpisodeSpec& spec,
                       const TaskSet& tasks, Rng& rng, uint64_t episode_seed = 0);

void export_episodes(const std::vector<Episode>& episodes, const std::string& path);
std::vector<Episode> import_episodes(const std::string& path);

// binary artifact round trip (corpus + task groups)
void save_task_set(const TaskSet& tasks, const std::string& path);
TaskSet load_task_set(const std::string& path);

}  // namespace fewshot
