#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdst/state.hpp"

namespace sdst {

struct LengthMismatch : std::runtime_error {
  explicit LengthMismatch(const std::string& what) : std::runtime_error(what) {}
};
struct EmptyInput : std::runtime_error {
  explicit EmptyInput(const std::string& what) : std::runtime_error(what) {}
};

// Joint-Goal Accuracy: fraction of turns whose predicted state exactly
// matches gold as an unordered slot->value collection.
double jga(const std::vector<DialogueState>& predictions, const std::vector<DialogueState>& golds);

std::vector<int> match_indicators(const std::vector<DialogueState>& predictions,
                                  const std::vector<DialogueState>& golds);

// Percentile bootstrap over turn-level resampling with replacement:
// 2.5th/97.5th percentiles of resampled means.
std::pair<double, double> bootstrap_ci(const std::vector<int>& indicators, int resamples, uint64_t seed);

struct SlotCounts {
  int tp = 0, fp = 0, fn = 0;
  double f1() const {
    int denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * tp / denom;
  }
};

struct SlotF1Report {
  std::map<std::string, SlotCounts> per_slot;      // slots with any support
  std::map<std::string, double> group_f1;          // unweighted mean over member slots
};

// TP: slot present in both with equal value. FP: predicted but absent or
// different in gold. FN: gold but absent or different in the prediction
// (a wrong value counts as both FP and FN).
SlotF1Report slot_f1(const std::vector<DialogueState>& predictions,
                     const std::vector<DialogueState>& golds,
                     const std::map<std::string, SlotGroup>& groups);

struct TurnAccuracy {
  double accuracy = 0.0;
  int support = 0;
  bool operator==(const TurnAccuracy&) const = default;
};

// Exact-match rate grouped by 1-based user-turn ordinal.
std::map<int, TurnAccuracy> per_turn_accuracy(const std::vector<DialogueState>& predictions,
                                              const std::vector<DialogueState>& golds,
                                              const std::vector<int>& turn_ordinals);

struct EvalReport {
  std::string model_label;   // e.g. "e2e", "cascade", "cascade-gt"
  std::string scenario;      // "oracle_context" | "predicted_context"
  std::string mode;          // "audio" | "asr" | "ground_truth_text"
  std::string corpus_tag;
  double jga = 0.0;
  double ci_low = 0.0, ci_high = 0.0;
  int n_turns = 0;
  int bootstrap_resamples = 1000;
  uint64_t bootstrap_seed = 0;
  std::map<std::string, double> per_slot_f1;
  std::map<std::string, double> group_f1;
  std::map<int, TurnAccuracy> per_turn;
  double parse_warning_rate = 0.0;

  std::string to_json_string() const;
  static EvalReport from_json_string(const std::string& text);
};

void save_report(const EvalReport& report, const std::string& path);
EvalReport load_report(const std::string& path);

}  // namespace sdst
