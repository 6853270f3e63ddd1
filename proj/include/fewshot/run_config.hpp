#pragma once

#include <string>
#include <vector>

#include "fewshot/models.hpp"
#include "fewshot/training.hpp"

namespace fewshot {

// Declarative run file. Every field has a default except the corpus path.
// Unknown keys are rejected; validation reports every problem at once.
struct RunConfig {
  std::string corpus;  // path to the ingest artifact (required)
  std::vector<size_t> split_sizes = {9000, 1000, 1000};
  uint64_t split_seed = 7;
  EpisodeSpec episode;
  // model
  std::string head = "matching";
  std::string metric = "cosine";
  bool fce_enabled = true;
  size_t fce_steps = 5;
  size_t d_word = kEmbedDim;
  size_t relation_hidden = 64;
  size_t relation_layers = 2;
  uint64_t init_seed = 1;
  // training
  TrainConfig train;
  std::string output_dir = "runs/run";

  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
  std::string to_json_text() const;

  // throws std::invalid_argument listing every problem
  void validate() const;

  ModelConfig model_config(size_t vocab_size) const;
};

}  // namespace fewshot
