#include "sdst/tokenizer.hpp"

#include <algorithm>
#include <set>

namespace sdst {

namespace {
const std::string kCharSet = "abcdefghijklmnopqrstuvwxyz0123456789:-=;";
const std::vector<std::string> kSpecials = {"<blank>", "<bos>", "<eos>", "<bos_state>", "<sep>", "<sp>"};
bool is_structural(char c) { return c == '=' || c == ';'; }
}  // namespace

Tokenizer Tokenizer::build(const Ontology& ont) {
  std::set<std::string> words;
  for (const auto& d : ont.domains) {
    words.insert(d.name);
    for (const auto& s : d.slots) {
      words.insert(s.name);
      words.insert(s.key());
      for (const auto& v : s.values) words.insert(v);
    }
  }
  for (const auto& w : template_words()) words.insert(w);

  std::vector<std::string> tokens = kSpecials;
  for (char c : kCharSet) tokens.push_back(std::string(1, c));
  for (const auto& w : words)
    if (w.size() > 1) tokens.push_back(w);  // single chars already covered
  return from_tokens(std::move(tokens));
}

Tokenizer Tokenizer::from_tokens(std::vector<std::string> tokens) {
  Tokenizer t;
  t.tokens_ = std::move(tokens);
  t.index();
  return t;
}

void Tokenizer::index() {
  ids_.clear();
  for (size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = static_cast<int>(i);
}

int Tokenizer::lookup(const std::string& tok) const {
  auto it = ids_.find(tok);
  return it == ids_.end() ? -1 : it->second;
}

std::vector<std::string> Tokenizer::token_names(std::string_view text) const {
  std::vector<std::string> out;
  size_t i = 0;
  bool first_segment = true;
  while (i < text.size()) {
    if (text[i] == ' ') {
      ++i;
      continue;
    }
    size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (!first_segment) out.push_back("<sp>");
    first_segment = false;
    // split the segment on structural chars, keeping them as tokens
    size_t p = i;
    while (p < j) {
      if (is_structural(text[p])) {
        out.push_back(std::string(1, text[p]));
        ++p;
        continue;
      }
      size_t q = p;
      while (q < j && !is_structural(text[q])) ++q;
      std::string piece(text.substr(p, q - p));
      if (lookup(piece) >= 0) {
        out.push_back(piece);
      } else {
        for (char c : piece) {
          std::string ch(1, c);
          if (lookup(ch) < 0) throw UnknownToken("no token for character '" + ch + "'");
          out.push_back(ch);
        }
      }
      p = q;
    }
    i = j;
  }
  return out;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  for (const auto& name : token_names(text)) {
    int id = lookup(name);
    if (id < 0) throw UnknownToken("no token for '" + name + "'");
    out.push_back(id);
  }
  return out;
}

std::string Tokenizer::surface(int id) const {
  if (id < 0 || id >= vocab_size()) return "";
  if (id == kSpace) return " ";
  if (id < static_cast<int>(kSpecials.size())) return "";
  return tokens_[static_cast<size_t>(id)];
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) out += surface(id);
  return out;
}

}  // namespace sdst
