#pragma once

#include <map>
#include <string>
#include <vector>

#include "sdst/state.hpp"

namespace sdst {

struct SlotDef {
  std::string domain;
  std::string name;
  SlotGroup group = SlotGroup::categorical;
  std::vector<std::string> values;  // closed set, categorical only

  std::string key() const { return domain + "-" + name; }
};

struct DomainDef {
  std::string name;
  std::vector<SlotDef> slots;
};

// Closed synthetic world: domains/slots, the open-value lexicons and the
// utterance templates all live here so the tokenizer and the generator
// agree on the exact word inventory.
struct Ontology {
  std::vector<DomainDef> domains;
  std::vector<std::string> open_train_lexicon;
  std::vector<std::string> open_dev_lexicon;  // disjoint from train
  int dev_time_offset_minutes = 7;

  const SlotDef* find_slot(const std::string& key) const;
  std::vector<const SlotDef*> all_slots() const;
  std::map<std::string, SlotGroup> slot_groups() const;

  // Throws std::invalid_argument on identifier/uniqueness/lexicon violations.
  void validate() const;
};

// 20 slots over hotel/restaurant/taxi: 12 categorical, 6 open, 2 time
// (60/30/10 mix). Lexicons are pseudowords derived from lexicon_seed.
Ontology default_ontology(uint64_t lexicon_seed = 1234, int train_words = 60, int dev_words = 40);

// Slot names that exist in more than one domain and may be targeted by
// cross-turn references ("same area as the restaurant").
std::vector<std::string> referable_slot_names(const Ontology& ont);

// Fixed surface templates. {d}=domain, {s}=slot name, {v}=value, {o}=other domain.
struct Templates {
  static const std::vector<std::string>& request();       // assign a value
  static const std::vector<std::string>& overwrite();     // change a value
  static const std::vector<std::string>& reference();     // copy from other domain
  static const std::vector<std::string>& agent_ack();     // agent acknowledgement
  static const std::vector<std::string>& agent_ask();     // agent asks for the next slot
  static const std::vector<std::string>& short_answer();  // bare-value reply to a question
  static const std::string& agent_generic();              // fixed agent filler
  static const std::string& agent_opening();              // unused slot kept for symmetry
};

// Every in-vocabulary word the generator can emit outside of slot keys,
// categorical values and domain/slot names.
std::vector<std::string> template_words();

// Render a template, substituting {d},{s},{v},{o}.
std::string render_template(const std::string& tpl, const std::string& domain,
                            const std::string& slot, const std::string& value,
                            const std::string& other_domain = "");

std::vector<std::string> make_pseudoword_lexicon(uint64_t seed, int count,
                                                 const std::vector<std::string>& avoid);

}  // namespace sdst
