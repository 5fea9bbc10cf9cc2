#include <set>

#include "doctest.h"
#include "sdst/rng.hpp"
#include "sdst/state.hpp"

using namespace sdst;

namespace {

// Independent random-state generator for property tests.
DialogueState random_state(Rng& rng, int max_pairs = 8) {
  static const char* domains[3] = {"hotel", "restaurant", "taxi"};
  static const char* names[6] = {"area", "stars", "name", "food", "day", "leaveat"};
  DialogueState s;
  int n = rng.range_int(0, max_pairs);
  for (int i = 0; i < n; ++i) {
    std::string slot = std::string(domains[rng.range_int(0, 2)]) + "-" + names[rng.range_int(0, 5)];
    std::string value;
    int len = rng.range_int(1, 8);
    for (int c = 0; c < len; ++c) value.push_back(static_cast<char>('a' + rng.range_int(0, 25)));
    s.set(slot, value);
  }
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("state");

TEST_CASE("normalize_value lowercases, trims and collapses whitespace") {
  CHECK(normalize_value("  North ", SlotGroup::categorical) == "north");
  CHECK(normalize_value("palo   ALTO", SlotGroup::open) == "palo alto");
  CHECK(normalize_value("a\t b", SlotGroup::open) == "a b");
}

TEST_CASE("normalize_value canonicalizes times") {
  CHECK(normalize_value("9:5", SlotGroup::time) == "09:05");
  CHECK(normalize_value("09:05", SlotGroup::time) == "09:05");
  CHECK(normalize_value("23:59", SlotGroup::time) == "23:59");
  CHECK(normalize_value("0:0", SlotGroup::time) == "00:00");
  CHECK_THROWS_AS(normalize_value("25:00", SlotGroup::time), MalformedTime);
  CHECK_THROWS_AS(normalize_value("12:60", SlotGroup::time), MalformedTime);
  CHECK_THROWS_AS(normalize_value("noon", SlotGroup::time), MalformedTime);
  CHECK_THROWS_AS(normalize_value("123:00", SlotGroup::time), MalformedTime);
  CHECK_THROWS_AS(normalize_value(":30", SlotGroup::time), MalformedTime);
  CHECK_THROWS_AS(normalize_value("12:", SlotGroup::time), MalformedTime);
}

TEST_CASE("flatten sorts pairs and joins with the grammar") {
  DialogueState s;
  s.set("hotel-stars", "4");
  s.set("hotel-area", "north");
  CHECK(flatten(s) == "hotel-area=north;hotel-stars=4");
  CHECK(flatten(DialogueState{}) == "");
  DialogueState t;
  t.set("taxi-leaveat", "09:05");
  CHECK(flatten(t) == "taxi-leaveat=09:05");
}

TEST_CASE("parse is order-insensitive") {
  auto [state, warnings] = parse_state("hotel-stars=4;hotel-area=north");
  CHECK(warnings.empty());
  DialogueState expect;
  expect.set("hotel-area", "north");
  expect.set("hotel-stars", "4");
  CHECK(state_equal(state, expect));
}

TEST_CASE("parse drops bad fragments with warnings") {
  auto [state, warnings] = parse_state("garbage;;a=1");
  CHECK(warnings.size() == 2);
  DialogueState expect;
  expect.set("a", "1");
  CHECK(state_equal(state, expect));
}

TEST_CASE("parse resolves duplicates last-wins") {
  auto [state, warnings] = parse_state("a=1;a=2");
  CHECK(warnings.size() == 1);
  CHECK(*state.get("a") == "2");
}

TEST_CASE("parse edge fragments") {
  CHECK(parse_state("").warnings.empty());
  CHECK(parse_state("").state.empty());
  CHECK(parse_state("a=1;").warnings.size() == 1);
  CHECK(parse_state("=x").warnings.size() == 1);
  CHECK(parse_state("x=").warnings.size() == 1);
  CHECK(parse_state("x=  ").warnings.size() == 1);
}

TEST_CASE("state_equal is permutation-invariant exact match") {
  DialogueState a, b;
  a.set("x", "1");
  a.set("y", "2");
  b.set("y", "2");
  b.set("x", "1");
  CHECK(state_equal(a, b));
  CHECK(state_equal(DialogueState{}, DialogueState{}));
  DialogueState c = a;
  c.set("z", "3");
  CHECK_FALSE(state_equal(a, c));
}

TEST_CASE("property: parse(flatten(s)) round-trips without warnings") {
  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    DialogueState s = random_state(rng);
    auto [back, warnings] = parse_state(flatten(s));
    CHECK(warnings.empty());
    CHECK(state_equal(back, s));
  }
}

TEST_CASE("property: flatten is deterministic under insertion order") {
  Rng rng(43);
  for (int i = 0; i < 200; ++i) {
    DialogueState s = random_state(rng);
    std::vector<std::pair<std::string, std::string>> pairs(s.pairs.begin(), s.pairs.end());
    // rebuild in reversed order
    DialogueState t;
    for (auto it = pairs.rbegin(); it != pairs.rend(); ++it) t.set(it->first, it->second);
    CHECK(flatten(s) == flatten(t));
  }
}

TEST_CASE("property: parse is total on fuzzed bytes and output is invariant-clean") {
  Rng rng(44);
  for (int i = 0; i < 1000; ++i) {
    int len = rng.range_int(0, 64);
    std::string junk;
    for (int c = 0; c < len; ++c) junk.push_back(static_cast<char>(rng.range_int(1, 255)));
    ParseResult pr = parse_state(junk);
    for (const auto& [slot, value] : pr.state.pairs) {
      CHECK_FALSE(slot.empty());
      CHECK_FALSE(value.empty());
    }
  }
}

TEST_CASE("dialogue invariants validated") {
  Dialogue d;
  d.id = "x";
  Turn user;
  user.speaker = Speaker::user;
  user.text = "hello";
  user.gold_state = DialogueState{};
  Turn agent;
  agent.speaker = Speaker::agent;
  agent.text = "hi";
  d.turns = {user, agent, user};
  CHECK_NOTHROW(validate_dialogue(d));

  Dialogue bad = d;
  bad.turns = {agent};
  CHECK_THROWS_AS(validate_dialogue(bad), std::invalid_argument);

  Dialogue bad2 = d;
  bad2.turns = {user, user};
  CHECK_THROWS_AS(validate_dialogue(bad2), std::invalid_argument);

  Dialogue bad3 = d;
  Turn user_no_gold = user;
  user_no_gold.gold_state.reset();
  bad3.turns = {user_no_gold};
  CHECK_THROWS_AS(validate_dialogue(bad3), std::invalid_argument);
}

TEST_SUITE_END();
