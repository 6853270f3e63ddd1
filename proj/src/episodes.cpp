#include "fewshot/episodes.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "fewshot/serialize.hpp"

namespace fewshot {

int32_t Corpus::id_of(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? SpecialIds::kUnk : it->second;
}

const std::string& Corpus::token_of(int32_t id) const {
  if (id < 0 || static_cast<size_t>(id) >= id_to_token.size())
    throw std::invalid_argument("token id out of range: " + std::to_string(id));
  return id_to_token[static_cast<size_t>(id)];
}

const TaskGroup* TaskSet::find_group(int32_t word) const {
  auto it = group_of_word.find(word);
  return it == group_of_word.end() ? nullptr : &groups[it->second];
}

const std::vector<int32_t>& VocabSplit::of_role(const std::string& role) const {
  if (role == "train") return train_words;
  if (role == "validation" || role == "val") return validation_words;
  if (role == "test") return test_words;
  throw std::invalid_argument("unknown split role '" + role + "' (train|validation|test)");
}

void EpisodeSpec::validate() const {
  if (n_way < 2) throw std::invalid_argument("episode spec: N must be >= 2");
  if (k_shot < 1) throw std::invalid_argument("episode spec: k must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("episode spec: batch_size must be >= 1");
}

// ---- ingestion --------------------------------------------------------------

namespace {

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string trim(const std::string& s) {
  size_t l = 0, r = s.size();
  while (l < r && std::isspace(static_cast<unsigned char>(s[l]))) ++l;
  while (r > l && std::isspace(static_cast<unsigned char>(s[r - 1]))) --r;
  return s.substr(l, r - l);
}

bool is_heading(const std::string& trimmed) {
  return trimmed.size() >= 2 && trimmed.front() == '=' && trimmed.back() == '=';
}

bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

}  // namespace

Corpus ingest(std::istream& text, const std::string& source_path) {
  Corpus corpus;
  corpus.source_path = source_path;
  corpus.id_to_token = {"<PAD>", "<UNK>", "<BLANK>"};
  corpus.frequency = {0, 0, 0};
  for (size_t i = 0; i < corpus.id_to_token.size(); ++i)
    corpus.token_to_id[corpus.id_to_token[i]] = static_cast<int32_t>(i);

  auto intern = [&corpus](const std::string& tok) {
    auto it = corpus.token_to_id.find(tok);
    if (it != corpus.token_to_id.end()) {
      corpus.frequency[static_cast<size_t>(it->second)]++;
      return it->second;
    }
    const auto id = static_cast<int32_t>(corpus.id_to_token.size());
    corpus.id_to_token.push_back(tok);
    corpus.frequency.push_back(1);
    corpus.token_to_id.emplace(tok, id);
    return id;
  };

  std::string line;
  while (std::getline(text, line)) {
    corpus.source_lines++;
    const std::string t = trim(line);
    if (t.empty() || is_heading(t)) continue;
    const std::string lowered = lowercase(t);
    // split the character stream on terminators, then whitespace-tokenize
    std::vector<int32_t> current;
    std::string word;
    auto flush_word = [&]() {
      if (!word.empty()) {
        current.push_back(intern(word));
        word.clear();
      }
    };
    auto flush_sentence = [&]() {
      flush_word();
      if (!current.empty()) {
        corpus.sentences.push_back(std::move(current));
        current = {};
      }
    };
    for (char c : lowered) {
      if (is_terminator(c))
        flush_sentence();
      else if (std::isspace(static_cast<unsigned char>(c)))
        flush_word();
      else
        word.push_back(c);
    }
    flush_sentence();
  }
  if (corpus.sentences.empty())
    throw std::runtime_error("corpus is empty after filtering: " + source_path);
  return corpus;
}

Corpus ingest_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  return ingest(in, path);
}

// ---- task construction --------------------------------------------------------

namespace {

bool eligible_label_token(const std::string& tok) {
  if (tok.size() < 2) return false;
  for (char c : tok)
    if (!std::isalpha(static_cast<unsigned char>(c)) || static_cast<unsigned char>(c) >= 0x80)
      return false;
  return true;
}

}  // namespace

std::vector<TaskGroup> build_tasks(const Corpus& corpus, uint32_t min_occurrences) {
  if (min_occurrences < 2) throw std::invalid_argument("build_tasks: min_occurrences must be >= 2");
  // word id -> occurrences, plus distinct-sentence counts
  std::unordered_map<int32_t, TaskGroup> by_word;
  std::unordered_map<int32_t, uint32_t> last_sentence_of_word;
  for (uint32_t s = 0; s < corpus.sentences.size(); ++s) {
    const auto& sent = corpus.sentences[s];
    for (uint32_t p = 0; p < sent.size(); ++p) {
      const int32_t id = sent[p];
      if (id < SpecialIds::kFirstWord) continue;
      if (!eligible_label_token(corpus.id_to_token[static_cast<size_t>(id)])) continue;
      auto& group = by_word[id];
      group.word = id;
      group.occurrences.push_back(TaskInstance{s, p});
      // a sentence counts once toward distinct-sentence eligibility even if
      // the word appears in it twice
      auto it = last_sentence_of_word.find(id);
      if (it == last_sentence_of_word.end() || it->second != s) {
        group.distinct_sentences++;
        last_sentence_of_word[id] = s;
      }
    }
  }
  std::vector<TaskGroup> groups;
  for (auto& [word, group] : by_word)
    if (group.distinct_sentences >= min_occurrences) groups.push_back(std::move(group));
  std::sort(groups.begin(), groups.end(),
            [](const TaskGroup& a, const TaskGroup& b) { return a.word < b.word; });
  return groups;
}

TaskSet build_task_set(Corpus corpus, uint32_t min_occurrences) {
  TaskSet tasks;
  tasks.corpus = std::move(corpus);
  tasks.groups = build_tasks(tasks.corpus, min_occurrences);
  tasks.min_occurrences = min_occurrences;
  for (size_t i = 0; i < tasks.groups.size(); ++i) tasks.group_of_word[tasks.groups[i].word] = i;
  return tasks;
}

MaterializedTask materialize_task(const Corpus& corpus, int32_t word, const TaskInstance& inst) {
  if (inst.sentence_index >= corpus.sentences.size())
    throw std::invalid_argument("task instance sentence index out of range");
  std::vector<int32_t> tokens = corpus.sentences[inst.sentence_index];
  if (inst.position >= tokens.size())
    throw std::invalid_argument("task instance position out of range");
  tokens[inst.position] = SpecialIds::kBlank;
  size_t blank = inst.position;
  if (tokens.size() > kMaxSentenceTokens) {
    const size_t half = kMaxSentenceTokens / 2;
    size_t start = blank > half ? blank - half : 0;
    start = std::min(start, tokens.size() - kMaxSentenceTokens);
    tokens = std::vector<int32_t>(tokens.begin() + static_cast<long>(start),
                                  tokens.begin() + static_cast<long>(start + kMaxSentenceTokens));
    blank -= start;
  }
  return MaterializedTask{word, std::move(tokens), blank};
}

// ---- vocabulary split ----------------------------------------------------------

VocabSplit split_vocab(const TaskSet& tasks, size_t train, size_t validation, size_t test,
                       uint64_t seed) {
  if (train == 0 || validation == 0 || test == 0)
    throw std::invalid_argument("split sizes must all be positive");
  std::vector<int32_t> words;
  words.reserve(tasks.groups.size());
  for (const auto& g : tasks.groups) words.push_back(g.word);
  const size_t n = words.size();
  size_t want_train = train, want_val = validation, want_test = test;
  if (n < train + validation + test) {
    // proportional fallback, same ratios
    const double total = static_cast<double>(train + validation + test);
    want_val = std::max<size_t>(
        1, static_cast<size_t>(std::llround(static_cast<double>(n) * validation / total)));
    want_test = std::max<size_t>(
        1, static_cast<size_t>(std::llround(static_cast<double>(n) * test / total)));
    if (want_val + want_test >= n)
      throw std::runtime_error("too few eligible label words to split: " + std::to_string(n));
    want_train = n - want_val - want_test;
  }
  Rng rng(seed);
  rng.shuffle(words);
  VocabSplit split;
  split.seed = seed;
  split.train_words.assign(words.begin(), words.begin() + static_cast<long>(want_train));
  split.validation_words.assign(words.begin() + static_cast<long>(want_train),
                                words.begin() + static_cast<long>(want_train + want_val));
  split.test_words.assign(words.begin() + static_cast<long>(want_train + want_val),
                          words.begin() + static_cast<long>(want_train + want_val + want_test));
  std::sort(split.train_words.begin(), split.train_words.end());
  std::sort(split.validation_words.begin(), split.validation_words.end());
  std::sort(split.test_words.begin(), split.test_words.end());
  return split;
}

// ---- episode sampling -----------------------------------------------------------

Episode sample_episode(const std::vector<int32_t>& word_pool, const EpisodeSpec& spec,
                       const TaskSet& tasks, Rng& rng, uint64_t episode_seed) {
  spec.validate();
  const size_t need_sentences = spec.k_shot + 1;  // k support + at least one query

  std::vector<const TaskGroup*> eligible;
  for (int32_t w : word_pool) {
    const TaskGroup* g = tasks.find_group(w);
    if (g && g->distinct_sentences >= need_sentences) eligible.push_back(g);
  }
  if (eligible.size() < spec.n_way)
    throw std::runtime_error("episode sampler: only " + std::to_string(eligible.size()) +
                             " words with >= " + std::to_string(need_sentences) +
                             " distinct sentences; need N = " + std::to_string(spec.n_way));

  const std::vector<size_t> picks =
      rng.sample_without_replacement(eligible.size(), spec.n_way);

  Episode ep;
  ep.n_way = spec.n_way;
  ep.k_shot = spec.k_shot;
  ep.seed = episode_seed;

  struct ClassDraw {
    const TaskGroup* group;
    std::vector<TaskInstance> support;
    std::vector<size_t> shuffled_occurrence_order;
  };
  std::vector<ClassDraw> draws;
  std::unordered_set<uint32_t> support_sentences;

  for (size_t c = 0; c < spec.n_way; ++c) {
    const TaskGroup* g = eligible[picks[c]];
    ep.label_words.push_back(tasks.corpus.token_of(g->word));
    ClassDraw draw;
    draw.group = g;
    // shuffle this class's occurrences once; supports take the first k with
    // fresh sentences, queries later reuse the same order
    draw.shuffled_occurrence_order.resize(g->occurrences.size());
    for (size_t i = 0; i < g->occurrences.size(); ++i) draw.shuffled_occurrence_order[i] = i;
    rng.shuffle(draw.shuffled_occurrence_order);
    std::unordered_set<uint32_t> class_sentences;
    for (size_t idx : draw.shuffled_occurrence_order) {
      if (draw.support.size() == spec.k_shot) break;
      const TaskInstance& inst = g->occurrences[idx];
      if (class_sentences.count(inst.sentence_index)) continue;
      class_sentences.insert(inst.sentence_index);
      draw.support.push_back(inst);
    }
    if (draw.support.size() < spec.k_shot)
      throw std::runtime_error("episode sampler: word '" + tasks.corpus.token_of(g->word) +
                               "' has too few distinct sentences for k = " +
                               std::to_string(spec.k_shot));
    for (const auto& inst : draw.support) support_sentences.insert(inst.sentence_index);
    draws.push_back(std::move(draw));
  }

  // emit supports in shuffled order
  std::vector<std::pair<size_t, size_t>> support_slots;  // (class, slot)
  for (size_t c = 0; c < spec.n_way; ++c)
    for (size_t s = 0; s < spec.k_shot; ++s) support_slots.emplace_back(c, s);
  rng.shuffle(support_slots);
  for (const auto& [c, s] : support_slots) {
    const TaskInstance& inst = draws[c].support[s];
    MaterializedTask task = materialize_task(tasks.corpus, draws[c].group->word, inst);
    ep.support.emplace_back(std::move(task.tokens), c);
    ep.support_sentences.push_back(inst.sentence_index);
  }

  // balanced query quotas, remainder to the lowest class indices
  const size_t base = spec.batch_size / spec.n_way;
  const size_t rem = spec.batch_size % spec.n_way;
  for (size_t c = 0; c < spec.n_way; ++c) {
    const size_t quota = base + (c < rem ? 1 : 0);
    if (quota == 0) continue;
    const ClassDraw& draw = draws[c];
    std::vector<const TaskInstance*> pool;
    for (size_t idx : draw.shuffled_occurrence_order) {
      const TaskInstance& inst = draw.group->occurrences[idx];
      if (!support_sentences.count(inst.sentence_index)) pool.push_back(&inst);
    }
    if (pool.empty())
      throw std::runtime_error("episode sampler: word '" +
                               tasks.corpus.token_of(draw.group->word) +
                               "' has no query instances outside the support sentences");
    for (size_t i = 0; i < quota; ++i) {
      const TaskInstance& inst = *pool[i % pool.size()];  // cycle when the pool is short
      MaterializedTask task = materialize_task(tasks.corpus, draw.group->word, inst);
      ep.query.emplace_back(std::move(task.tokens), c);
      ep.query_sentences.push_back(inst.sentence_index);
    }
  }
  return ep;
}

// ---- episode file round trip ------------------------------------------------------

namespace {

using nlohmann::json;

json items_to_json(const std::vector<std::pair<std::vector<int32_t>, size_t>>& items) {
  json arr = json::array();
  for (const auto& [tokens, cls] : items) arr.push_back(json::array({json(tokens), cls}));
  return arr;
}

std::vector<std::pair<std::vector<int32_t>, size_t>> items_from_json(const json& arr) {
  std::vector<std::pair<std::vector<int32_t>, size_t>> out;
  for (const auto& item : arr) {
    if (!item.is_array() || item.size() != 2) throw std::runtime_error("bad episode item");
    out.emplace_back(item[0].get<std::vector<int32_t>>(), item[1].get<size_t>());
  }
  return out;
}

}  // namespace

void export_episodes(const std::vector<Episode>& episodes, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& ep : episodes) {
    json j;
    j["N"] = ep.n_way;
    j["k"] = ep.k_shot;
    j["label_words"] = ep.label_words;
    j["seed"] = ep.seed;
    j["support"] = items_to_json(ep.support);
    j["query"] = items_to_json(ep.query);
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<Episode> import_episodes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open episode file: " + path);
  std::vector<Episode> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
      Episode ep;
      ep.n_way = j.at("N").get<size_t>();
      ep.k_shot = j.at("k").get<size_t>();
      ep.label_words = j.at("label_words").get<std::vector<std::string>>();
      ep.seed = j.at("seed").get<uint64_t>();
      ep.support = items_from_json(j.at("support"));
      ep.query = items_from_json(j.at("query"));
      out.push_back(std::move(ep));
    } catch (const std::exception& e) {
      throw std::runtime_error("episode file " + path + ": malformed line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---- task set artifact ---------------------------------------------------------------

namespace {
constexpr char kTaskSetMagic[8] = {'F', 'S', 'C', 'O', 'R', 'P', '0', '1'};
constexpr uint32_t kTaskSetVersion = 1;
}  // namespace

void save_task_set(const TaskSet& tasks, const std::string& path) {
  ByteWriter payload;
  payload.str(tasks.corpus.source_path);
  payload.u64(tasks.corpus.source_lines);
  payload.u64(tasks.corpus.id_to_token.size());
  for (const auto& tok : tasks.corpus.id_to_token) payload.str(tok);
  for (int64_t f : tasks.corpus.frequency) payload.i64(f);
  payload.u64(tasks.corpus.sentences.size());
  for (const auto& s : tasks.corpus.sentences) payload.i32_vec(s);
  payload.u32(tasks.min_occurrences);
  payload.u64(tasks.groups.size());
  for (const auto& g : tasks.groups) {
    payload.u32(static_cast<uint32_t>(g.word));
    payload.u32(g.distinct_sentences);
    payload.u64(g.occurrences.size());
    for (const auto& o : g.occurrences) {
      payload.u32(o.sentence_index);
      payload.u32(o.position);
    }
  }

  ByteWriter out;
  out.bytes(kTaskSetMagic, sizeof(kTaskSetMagic));
  out.u32(kTaskSetVersion);
  out.u32(crc32(payload.data().data(), payload.data().size()));
  out.bytes(payload.data().data(), payload.data().size());
  write_file(path, out.data());
}

TaskSet load_task_set(const std::string& path) {
  const auto bytes = read_file(path);
  ByteReader in(bytes);
  char magic[8];
  std::memcpy(magic, bytes.data(), std::min<size_t>(8, bytes.size()));
  if (bytes.size() < 16 || std::memcmp(magic, kTaskSetMagic, 8) != 0)
    throw std::runtime_error("not a corpus artifact: " + path);
  in = ByteReader(bytes.data() + 8, bytes.size() - 8);
  const uint32_t version = in.u32();
  if (version != kTaskSetVersion)
    throw std::runtime_error("corpus artifact version mismatch: got " + std::to_string(version));
  const uint32_t stored_crc = in.u32();
  const uint32_t actual_crc = crc32(bytes.data() + 16, bytes.size() - 16);
  if (stored_crc != actual_crc)
    throw std::runtime_error("corpus artifact checksum mismatch (corrupt file): " + path);

  TaskSet tasks;
  tasks.corpus.source_path = in.str();
  tasks.corpus.source_lines = in.u64();
  const uint64_t vocab = in.u64();
  tasks.corpus.id_to_token.reserve(vocab);
  for (uint64_t i = 0; i < vocab; ++i) tasks.corpus.id_to_token.push_back(in.str());
  tasks.corpus.frequency.resize(vocab);
  for (uint64_t i = 0; i < vocab; ++i) tasks.corpus.frequency[i] = in.i64();
  for (size_t i = 0; i < tasks.corpus.id_to_token.size(); ++i)
    tasks.corpus.token_to_id[tasks.corpus.id_to_token[i]] = static_cast<int32_t>(i);
  const uint64_t n_sent = in.u64();
  tasks.corpus.sentences.reserve(n_sent);
  for (uint64_t i = 0; i < n_sent; ++i) tasks.corpus.sentences.push_back(in.i32_vec());
  tasks.min_occurrences = in.u32();
  const uint64_t n_groups = in.u64();
  tasks.groups.reserve(n_groups);
  for (uint64_t i = 0; i < n_groups; ++i) {
    TaskGroup g;
    g.word = static_cast<int32_t>(in.u32());
    g.distinct_sentences = in.u32();
    const uint64_t n_occ = in.u64();
    g.occurrences.reserve(n_occ);
    for (uint64_t k = 0; k < n_occ; ++k) {
      TaskInstance inst;
      inst.sentence_index = in.u32();
      inst.position = in.u32();
      g.occurrences.push_back(inst);
    }
    tasks.groups.push_back(std::move(g));
  }
  for (size_t i = 0; i < tasks.groups.size(); ++i) tasks.group_of_word[tasks.groups[i].word] = i;
  return tasks;
}

}  // namespace fewshot
