#include "sdst/ontology.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include "sdst/rng.hpp"

namespace sdst {

const SlotDef* Ontology::find_slot(const std::string& key) const {
  for (const auto& d : domains)
    for (const auto& s : d.slots)
      if (s.key() == key) return &s;
  return nullptr;
}

std::vector<const SlotDef*> Ontology::all_slots() const {
  std::vector<const SlotDef*> out;
  for (const auto& d : domains)
    for (const auto& s : d.slots) out.push_back(&s);
  return out;
}

std::map<std::string, SlotGroup> Ontology::slot_groups() const {
  std::map<std::string, SlotGroup> out;
  for (const auto* s : all_slots()) out[s->key()] = s->group;
  return out;
}

static bool valid_identifier(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-')) return false;
  return true;
}

void Ontology::validate() const {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& d : domains) {
    if (!valid_identifier(d.name)) throw std::invalid_argument("bad domain identifier: " + d.name);
    for (const auto& s : d.slots) {
      if (!valid_identifier(s.name)) throw std::invalid_argument("bad slot identifier: " + s.name);
      if (!seen.insert({s.domain, s.name}).second)
        throw std::invalid_argument("duplicate slot: " + s.key());
      if (s.domain != d.name) throw std::invalid_argument("slot domain mismatch: " + s.key());
      if (s.group == SlotGroup::categorical && s.values.empty())
        throw std::invalid_argument("categorical slot without values: " + s.key());
    }
  }
  std::set<std::string> train(open_train_lexicon.begin(), open_train_lexicon.end());
  for (const auto& w : open_dev_lexicon)
    if (train.count(w)) throw std::invalid_argument("lexicons overlap on '" + w + "'");
  if (open_train_lexicon.empty() || open_dev_lexicon.empty())
    throw std::invalid_argument("open lexicons must be non-empty");
}

std::vector<std::string> make_pseudoword_lexicon(uint64_t seed, int count,
                                                 const std::vector<std::string>& avoid) {
  static const std::string consonants = "bcdfghjklmnprstvz";
  static const std::string vowels = "aeiou";
  std::set<std::string> block(avoid.begin(), avoid.end());
  std::vector<std::string> out;
  Rng rng = Rng::derive(seed, "lexicon");
  while (static_cast<int>(out.size()) < count) {
    int syllables = rng.range_int(2, 3);
    std::string w;
    for (int s = 0; s < syllables; ++s) {
      w += consonants[rng.range_int(0, static_cast<int>(consonants.size()) - 1)];
      w += vowels[rng.range_int(0, static_cast<int>(vowels.size()) - 1)];
    }
    if (rng.bernoulli(0.4)) w += consonants[rng.range_int(0, static_cast<int>(consonants.size()) - 1)];
    if (block.count(w)) continue;
    block.insert(w);
    out.push_back(w);
  }
  return out;
}

Ontology default_ontology(uint64_t lexicon_seed, int train_words, int dev_words) {
  Ontology ont;
  auto cat = [](std::string d, std::string n, std::vector<std::string> vals) {
    return SlotDef{std::move(d), std::move(n), SlotGroup::categorical, std::move(vals)};
  };
  auto open = [](std::string d, std::string n) { return SlotDef{std::move(d), std::move(n), SlotGroup::open, {}}; };
  auto timeslot = [](std::string d, std::string n) { return SlotDef{std::move(d), std::move(n), SlotGroup::time, {}}; };

  std::vector<std::string> areas = {"north", "south", "east", "west", "centre"};
  std::vector<std::string> prices = {"cheap", "moderate", "expensive"};
  std::vector<std::string> days = {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"};

  DomainDef hotel{"hotel", {}};
  hotel.slots = {cat("hotel", "area", areas),
                 cat("hotel", "pricerange", prices),
                 cat("hotel", "stars", {"1", "2", "3", "4", "5"}),
                 cat("hotel", "parking", {"yes", "no"}),
                 cat("hotel", "day", days),
                 open("hotel", "name")};

  DomainDef restaurant{"restaurant", {}};
  restaurant.slots = {cat("restaurant", "area", areas),
                      cat("restaurant", "pricerange", prices),
                      cat("restaurant", "food", {"italian", "chinese", "indian", "british", "thai"}),
                      cat("restaurant", "day", days),
                      open("restaurant", "name"),
                      open("restaurant", "dish"),
                      timeslot("restaurant", "booktime")};

  DomainDef taxi{"taxi", {}};
  taxi.slots = {cat("taxi", "passengers", {"1", "2", "3", "4"}),
                cat("taxi", "luggage", {"yes", "no"}),
                cat("taxi", "payment", {"cash", "card"}),
                open("taxi", "departure"),
                open("taxi", "destination"),
                open("taxi", "company"),
                timeslot("taxi", "leaveat")};

  ont.domains = {hotel, restaurant, taxi};

  std::vector<std::string> avoid = template_words();
  for (const auto& d : ont.domains) {
    avoid.push_back(d.name);
    for (const auto& s : d.slots) {
      avoid.push_back(s.name);
      for (const auto& v : s.values) avoid.push_back(v);
    }
  }
  ont.open_train_lexicon = make_pseudoword_lexicon(lexicon_seed, train_words, avoid);
  std::vector<std::string> avoid2 = avoid;
  avoid2.insert(avoid2.end(), ont.open_train_lexicon.begin(), ont.open_train_lexicon.end());
  ont.open_dev_lexicon = make_pseudoword_lexicon(lexicon_seed + 1, dev_words, avoid2);
  ont.validate();
  return ont;
}

std::vector<std::string> referable_slot_names(const Ontology& ont) {
  std::map<std::string, int> counts;
  for (const auto* s : ont.all_slots())
    if (s->group == SlotGroup::categorical) counts[s->name]++;
  std::vector<std::string> out;
  for (const auto& [name, n] : counts)
    if (n >= 2) out.push_back(name);
  return out;
}

const std::vector<std::string>& Templates::request() {
  static const std::vector<std::string> t = {
      "i want the {d} {s} to be {v}",
      "the {d} {s} should be {v}",
      "set the {d} {s} to {v}",
      "please make the {d} {s} {v}",
      "{v} for the {d} {s}",
  };
  return t;
}

const std::vector<std::string>& Templates::overwrite() {
  static const std::vector<std::string> t = {
      "actually change the {d} {s} to {v}",
      "no the {d} {s} should be {v} instead",
  };
  return t;
}

const std::vector<std::string>& Templates::reference() {
  static const std::vector<std::string> t = {
      "the {d} {s} can be the same as the {o}",
      "use the same {s} for the {d} as the {o}",
  };
  return t;
}

const std::vector<std::string>& Templates::agent_ack() {
  static const std::vector<std::string> t = {
      "okay {v} for the {d} {s}",
      "noted the {d} {s} is {v}",
      "done the {d} {s} is set",
  };
  return t;
}

const std::vector<std::string>& Templates::agent_ask() {
  static const std::vector<std::string> t = {
      "what {s} for the {d}",
      "which {s} would you like for the {d}",
  };
  return t;
}

const std::vector<std::string>& Templates::short_answer() {
  static const std::vector<std::string> t = {
      "{v}",
      "{v} please",
  };
  return t;
}

const std::string& Templates::agent_generic() {
  static const std::string t = "anything else";
  return t;
}

const std::string& Templates::agent_opening() {
  static const std::string t = "how can i help";
  return t;
}

std::vector<std::string> template_words() {
  std::set<std::string> words;
  auto add_all = [&words](const std::vector<std::string>& tpls) {
    for (const auto& tpl : tpls) {
      std::istringstream iss(tpl);
      std::string w;
      while (iss >> w)
        if (w.front() != '{') words.insert(w);
    }
  };
  add_all(Templates::request());
  add_all(Templates::overwrite());
  add_all(Templates::reference());
  add_all(Templates::agent_ack());
  add_all(Templates::agent_ask());
  add_all(Templates::short_answer());
  add_all({Templates::agent_generic(), Templates::agent_opening()});
  return {words.begin(), words.end()};
}

std::string render_template(const std::string& tpl, const std::string& domain,
                            const std::string& slot, const std::string& value,
                            const std::string& other_domain) {
  std::string out;
  for (size_t i = 0; i < tpl.size(); ++i) {
    if (tpl[i] == '{' && i + 2 < tpl.size() && tpl[i + 2] == '}') {
      switch (tpl[i + 1]) {
        case 'd': out += domain; i += 2; continue;
        case 's': out += slot; i += 2; continue;
        case 'v': out += value; i += 2; continue;
        case 'o': out += other_domain; i += 2; continue;
        default: break;
      }
    }
    out.push_back(tpl[i]);
  }
  return out;
}

}  // namespace sdst
