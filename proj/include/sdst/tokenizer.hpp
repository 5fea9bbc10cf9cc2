#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sdst/ontology.hpp"

namespace sdst {

struct UnknownToken : std::runtime_error {
  explicit UnknownToken(const std::string& what) : std::runtime_error(what) {}
};

// Whitespace words over the closed generated vocabulary with a
// character fallback for open values. Id 0 is the CTC blank. Explicit
// <sp> tokens mark word boundaries so decoding is a plain surface
// concatenation and round-trips exactly.
class Tokenizer {
 public:
  static constexpr int kBlank = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kBosState = 3;
  static constexpr int kSep = 4;
  static constexpr int kSpace = 5;

  static Tokenizer build(const Ontology& ont);
  static Tokenizer from_tokens(std::vector<std::string> tokens);

  int vocab_size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Throws UnknownToken for characters outside the fallback set.
  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;

  // Token names in encoding order; char tokens are their character,
  // the space marker is "<sp>". Drives per-token audio rendering.
  std::vector<std::string> token_names(std::string_view text) const;

  const std::string& name(int id) const { return tokens_.at(static_cast<size_t>(id)); }
  // Surface form used by decode(); specials map to "" (space marker to " ").
  std::string surface(int id) const;

  bool operator==(const Tokenizer& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  void index();
  int lookup(const std::string& tok) const;
};

}  // namespace sdst
