#include "sdst/state.hpp"

#include <cctype>
#include <cstdio>

namespace sdst {

const char* slot_group_name(SlotGroup g) {
  switch (g) {
    case SlotGroup::categorical: return "categorical";
    case SlotGroup::open: return "open";
    case SlotGroup::time: return "time";
  }
  return "?";
}

std::string normalize_text(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char c : raw) {
    unsigned char uc = static_cast<unsigned char>(c);
    if (std::isspace(uc)) {
      if (!out.empty()) pending_space = true;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(uc)));
  }
  return out;
}

std::string normalize_value(std::string_view raw, SlotGroup group) {
  std::string norm = normalize_text(raw);
  if (group != SlotGroup::time) return norm;

  // Accept "H:MM", "HH:M", "HH:MM"; reject everything else.
  size_t colon = norm.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 >= norm.size())
    throw MalformedTime("not a clock time: '" + norm + "'");
  int hours = 0, minutes = 0;
  for (size_t i = 0; i < colon; ++i) {
    unsigned char c = static_cast<unsigned char>(norm[i]);
    if (!std::isdigit(c) || colon > 2) throw MalformedTime("bad hour in '" + norm + "'");
    hours = hours * 10 + (c - '0');
  }
  size_t mlen = norm.size() - colon - 1;
  if (mlen > 2) throw MalformedTime("bad minutes in '" + norm + "'");
  for (size_t i = colon + 1; i < norm.size(); ++i) {
    unsigned char c = static_cast<unsigned char>(norm[i]);
    if (!std::isdigit(c)) throw MalformedTime("bad minutes in '" + norm + "'");
    minutes = minutes * 10 + (c - '0');
  }
  if (hours > 23) throw MalformedTime("hour out of range in '" + norm + "'");
  if (minutes > 59) throw MalformedTime("minutes out of range in '" + norm + "'");
  std::string out = "00:00";
  out[0] = static_cast<char>('0' + hours / 10);
  out[1] = static_cast<char>('0' + hours % 10);
  out[3] = static_cast<char>('0' + minutes / 10);
  out[4] = static_cast<char>('0' + minutes % 10);
  return out;
}

std::string flatten(const DialogueState& state) {
  std::string out;
  bool first = true;
  for (const auto& [slot, value] : state.pairs) {
    if (!first) out.push_back(';');
    out += slot;
    out.push_back('=');
    out += value;
    first = false;
  }
  return out;
}

ParseResult parse_state(std::string_view text) {
  ParseResult result;
  size_t pos = 0;
  while (pos <= text.size()) {
    if (pos == text.size() && pos == 0) break;  // empty input: no fragments
    size_t semi = text.find(';', pos);
    std::string_view frag = text.substr(pos, semi == std::string_view::npos ? std::string_view::npos : semi - pos);
    size_t eq = frag.find('=');
    if (eq == std::string_view::npos) {
      result.warnings.push_back("fragment without '=': '" + std::string(frag) + "'");
    } else {
      std::string slot = normalize_text(frag.substr(0, eq));
      std::string value = normalize_text(frag.substr(eq + 1));
      if (slot.empty() || value.empty()) {
        result.warnings.push_back("empty slot or value in '" + std::string(frag) + "'");
      } else {
        if (result.state.pairs.count(slot))
          result.warnings.push_back("duplicate slot '" + slot + "', keeping last");
        result.state.pairs[slot] = value;
      }
    }
    if (semi == std::string_view::npos) break;
    pos = semi + 1;
    if (pos == text.size()) {  // trailing separator leaves an empty fragment
      result.warnings.push_back("fragment without '=': ''");
      break;
    }
  }
  return result;
}

bool state_equal(const DialogueState& a, const DialogueState& b) { return a.pairs == b.pairs; }

std::vector<size_t> Dialogue::user_turn_indices() const {
  std::vector<size_t> out;
  for (size_t i = 0; i < turns.size(); ++i)
    if (turns[i].speaker == Speaker::user) out.push_back(i);
  return out;
}

void validate_dialogue(const Dialogue& d) {
  if (d.turns.empty()) throw std::invalid_argument("dialogue '" + d.id + "' has no turns");
  for (size_t i = 0; i < d.turns.size(); ++i) {
    const Turn& t = d.turns[i];
    Speaker expected = (i % 2 == 0) ? Speaker::user : Speaker::agent;
    if (t.speaker != expected)
      throw std::invalid_argument("dialogue '" + d.id + "': speaker order broken at turn " + std::to_string(i));
    if (!t.text && !t.audio)
      throw std::invalid_argument("dialogue '" + d.id + "': turn " + std::to_string(i) + " has neither text nor audio");
    if ((t.speaker == Speaker::user) != t.gold_state.has_value())
      throw std::invalid_argument("dialogue '" + d.id + "': gold_state presence wrong at turn " + std::to_string(i));
  }
}

}  // namespace sdst
