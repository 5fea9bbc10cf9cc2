#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdst {

enum class SlotGroup { categorical, open, time };

const char* slot_group_name(SlotGroup g);

struct MalformedTime : std::runtime_error {
  explicit MalformedTime(const std::string& what) : std::runtime_error(what) {}
};

// Lowercase, collapse runs of whitespace to single spaces, trim.
std::string normalize_text(std::string_view raw);

// Group-aware canonical form. Time values become zero-padded 24h "HH:MM";
// anything that does not read as a valid clock time throws MalformedTime.
std::string normalize_value(std::string_view raw, SlotGroup group);

// Unordered slot->value map. Keys are "domain-name" strings; values are
// normalized. std::map keeps flatten() deterministic.
struct DialogueState {
  std::map<std::string, std::string> pairs;

  bool empty() const { return pairs.empty(); }
  size_t size() const { return pairs.size(); }
  void set(const std::string& slot, const std::string& value) { pairs[slot] = value; }
  const std::string* get(const std::string& slot) const {
    auto it = pairs.find(slot);
    return it == pairs.end() ? nullptr : &it->second;
  }
  bool operator==(const DialogueState& other) const = default;
};

// "slot1=value1;slot2=value2" with keys in lexicographic order.
// The empty state flattens to the empty string.
std::string flatten(const DialogueState& state);

struct ParseResult {
  DialogueState state;
  std::vector<std::string> warnings;
};

// Best-effort inverse of flatten. Never throws: fragments without '=',
// empty keys/values and duplicate keys degrade to warnings, duplicates
// resolve last-wins. Keys and values get normalize_text applied.
ParseResult parse_state(std::string_view text);

// Exact match over the unordered slot->value associations.
bool state_equal(const DialogueState& a, const DialogueState& b);

enum class Speaker { user, agent };

struct FrameMatrix {
  int frames = 0;
  int dim = 0;
  std::vector<float> data;  // row-major frames x dim

  float& at(int f, int d) { return data[static_cast<size_t>(f) * dim + d]; }
  float at(int f, int d) const { return data[static_cast<size_t>(f) * dim + d]; }
  bool operator==(const FrameMatrix& other) const = default;
};

struct Turn {
  Speaker speaker = Speaker::user;
  std::optional<std::string> text;
  std::optional<FrameMatrix> audio;
  std::optional<DialogueState> gold_state;  // user turns only

  bool operator==(const Turn& other) const = default;
};

struct Dialogue {
  std::string id;
  uint64_t seed = 0;
  std::vector<Turn> turns;  // user first, strictly alternating

  // Indices into turns for the user turns, in order.
  std::vector<size_t> user_turn_indices() const;
  bool operator==(const Dialogue& other) const = default;
};

// Throws std::invalid_argument if alternation / gold-state invariants fail.
void validate_dialogue(const Dialogue& d);

}  // namespace sdst
