#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdst/ontology.hpp"
#include "sdst/rng.hpp"
#include "sdst/state.hpp"
#include "sdst/tokenizer.hpp"

namespace sdst {

enum class NoiseProfile { clean, noisy };
enum class AgentModality { text, audio };
enum class Split { train, dev, test };

const char* split_name(Split s);
const char* noise_profile_name(NoiseProfile p);

struct InvalidConfig : std::runtime_error {
  explicit InvalidConfig(const std::string& what) : std::runtime_error(what) {}
};
struct EmptyText : std::runtime_error {
  explicit EmptyText(const std::string& what) : std::runtime_error(what) {}
};
struct FormatVersionMismatch : std::runtime_error {
  explicit FormatVersionMismatch(const std::string& what) : std::runtime_error(what) {}
};
struct ChecksumMismatch : std::runtime_error {
  explicit ChecksumMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct NoiseParams {
  double sigma = 0.0;
  double jitter_prob = 0.0;
  double drop_prob = 0.0;
};

struct GenConfig {
  int n_dialogues = 100;
  double mean_turns = 13.3;  // user+agent turns per dialogue
  NoiseProfile profile = NoiseProfile::clean;
  // negative values pick the profile defaults (clean 0.05/0/0, noisy 0.25/0.2/0.05)
  double frame_noise_sigma = -1.0;
  double frame_jitter_prob = -1.0;
  double frame_drop_prob = -1.0;
  AgentModality agent_modality = AgentModality::text;
  uint64_t seed = 1;
  int audio_dim = 16;
  int frames_per_token_min = 8;
  int frames_per_token_max = 10;
  Split split = Split::train;
  double cross_ref_rate = 0.35;  // floor for context-dependent dialogues

  NoiseParams effective_noise() const;
  void validate() const;  // throws InvalidConfig
};

using Corpus = std::vector<Dialogue>;

// Deterministic function of (ontology, config). Each dialogue derives its
// own rng stream from (seed, split, index) so generation order is
// schedule-independent.
Corpus generate_corpus(const Ontology& ont, const GenConfig& config);

// Pseudo-acoustic rendering: every token name maps to a fixed base vector
// derived from (seed, token); the base vector repeats r times (r drawn from
// frames_per_token) with additive Gaussian noise. The noisy profile jitters
// repeat counts and drops frames. At least one frame per token survives.
FrameMatrix vocalize(const std::string& text, const Tokenizer& tok, const GenConfig& config, Rng& rng);

// Corpus file pair: JSON-lines dialogues at `path` plus an audio sidecar at
// `path` with extension replaced by ".frames".
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

std::string sidecar_path(const std::string& corpus_path);

// (dialogue index, user-turn ordinal) pairs with identical agent/user
// surface strings but different gold context and different gold state.
struct ContextNecessityPair {
  size_t dialogue_a, turn_a;  // turn = user-turn ordinal, 1-based
  size_t dialogue_b, turn_b;
};
std::vector<ContextNecessityPair> find_context_necessity_pairs(const Corpus& corpus, size_t max_pairs = 0);

}  // namespace sdst
