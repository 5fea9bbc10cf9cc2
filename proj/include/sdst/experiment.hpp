#pragma once

#include <map>
#include <string>
#include <vector>

#include "sdst/blocks.hpp"
#include "sdst/corpus.hpp"
#include "sdst/train.hpp"

namespace sdst {

inline constexpr const char* kToolVersion = "0.1.0";

// Versioned experiment configuration covering data generation, model
// shape and training. Unknown keys are rejected so typos fail fast.
struct ExperimentConfig {
  int version = 1;
  // data
  GenConfig gen;
  int n_train = 1000;
  int n_dev = 200;
  int n_test = 200;
  uint64_t lexicon_seed = 1234;
  int lexicon_train_words = 60;
  int lexicon_dev_words = 40;
  // model
  nn::BlockConfig block;
  // train
  TrainConfig train;

  static ExperimentConfig from_json_file(const std::string& path);
  static ExperimentConfig from_json_string(const std::string& text);
  std::string to_json_string() const;

  Ontology make_ontology() const {
    return default_ontology(lexicon_seed, lexicon_train_words, lexicon_dev_words);
  }
};

uint64_t file_checksum(const std::string& path);

// Reproducibility record written next to every artifact: command, seeds,
// input/output checksums.
struct Manifest {
  std::string command;
  uint64_t seed = 0;
  std::string config_path;
  uint64_t config_checksum = 0;
  std::map<std::string, uint64_t> inputs;   // path -> checksum
  std::map<std::string, uint64_t> outputs;  // path -> checksum
  std::map<std::string, std::string> extra;

  void save(const std::string& path) const;
  static Manifest load(const std::string& path);
};

// Slot-group sidecar for evaluation (written by gen-data into the corpus
// manifest, consumed by eval for group F1).
void save_corpus_manifest(const std::string& dir, const ExperimentConfig& config, uint64_t seed,
                          const std::map<std::string, SlotGroup>& groups,
                          const std::map<std::string, uint64_t>& file_checksums);
std::map<std::string, SlotGroup> load_slot_groups(const std::string& dir);

}  // namespace sdst
