#include "sdst/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sdst/rng.hpp"

namespace sdst {

std::vector<int> match_indicators(const std::vector<DialogueState>& predictions,
                                  const std::vector<DialogueState>& golds) {
  if (predictions.size() != golds.size())
    throw LengthMismatch("match_indicators: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(golds.size()) + " golds");
  std::vector<int> out(predictions.size());
  for (size_t i = 0; i < predictions.size(); ++i) out[i] = state_equal(predictions[i], golds[i]) ? 1 : 0;
  return out;
}

double jga(const std::vector<DialogueState>& predictions, const std::vector<DialogueState>& golds) {
  std::vector<int> ind = match_indicators(predictions, golds);
  if (ind.empty()) return 0.0;
  long hits = 0;
  for (int v : ind) hits += v;
  return static_cast<double>(hits) / static_cast<double>(ind.size());
}

std::pair<double, double> bootstrap_ci(const std::vector<int>& indicators, int resamples, uint64_t seed) {
  if (indicators.empty()) throw EmptyInput("bootstrap_ci: no indicators");
  if (resamples < 1) throw EmptyInput("bootstrap_ci: resamples must be >= 1");
  size_t n = indicators.size();
  Rng rng = Rng::derive(seed, "bootstrap");
  std::vector<double> means(static_cast<size_t>(resamples));
  for (int r = 0; r < resamples; ++r) {
    long total = 0;
    for (size_t i = 0; i < n; ++i)
      total += indicators[static_cast<size_t>(rng.range_int(0, static_cast<int>(n) - 1))];
    means[static_cast<size_t>(r)] = static_cast<double>(total) / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  auto order_stat = [&means, resamples](double q) {
    long idx = static_cast<long>(std::ceil(q * resamples)) - 1;
    idx = std::clamp<long>(idx, 0, resamples - 1);
    return means[static_cast<size_t>(idx)];
  };
  return {order_stat(0.025), order_stat(0.975)};
}

SlotF1Report slot_f1(const std::vector<DialogueState>& predictions,
                     const std::vector<DialogueState>& golds,
                     const std::map<std::string, SlotGroup>& groups) {
  if (predictions.size() != golds.size()) throw LengthMismatch("slot_f1: list size mismatch");
  SlotF1Report report;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const auto& pred = predictions[i].pairs;
    const auto& gold = golds[i].pairs;
    for (const auto& [slot, value] : pred) {
      auto it = gold.find(slot);
      if (it != gold.end() && it->second == value) report.per_slot[slot].tp++;
      else report.per_slot[slot].fp++;
    }
    for (const auto& [slot, value] : gold) {
      auto it = pred.find(slot);
      if (it == pred.end() || it->second != value) report.per_slot[slot].fn++;
    }
  }
  std::map<std::string, std::pair<double, int>> agg;  // group -> (sum, count)
  for (const auto& [slot, counts] : report.per_slot) {
    auto git = groups.find(slot);
    if (git == groups.end()) continue;  // slot invented by the decoder
    auto& [total, n] = agg[slot_group_name(git->second)];
    total += counts.f1();
    n += 1;
  }
  for (const auto& [group, pair] : agg)
    report.group_f1[group] = pair.second == 0 ? 0.0 : pair.first / pair.second;
  return report;
}

std::map<int, TurnAccuracy> per_turn_accuracy(const std::vector<DialogueState>& predictions,
                                              const std::vector<DialogueState>& golds,
                                              const std::vector<int>& turn_ordinals) {
  if (predictions.size() != golds.size() || predictions.size() != turn_ordinals.size())
    throw LengthMismatch("per_turn_accuracy: list size mismatch");
  std::map<int, std::pair<int, int>> buckets;  // ordinal -> (hits, support)
  for (size_t i = 0; i < predictions.size(); ++i) {
    auto& [hits, support] = buckets[turn_ordinals[i]];
    hits += state_equal(predictions[i], golds[i]) ? 1 : 0;
    support += 1;
  }
  std::map<int, TurnAccuracy> out;
  for (const auto& [ordinal, hs] : buckets)
    out[ordinal] = {static_cast<double>(hs.first) / hs.second, hs.second};
  return out;
}

std::string EvalReport::to_json_string() const {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["model"] = model_label;
  j["scenario"] = scenario;
  j["mode"] = mode;
  j["corpus"] = corpus_tag;
  j["jga"] = jga;
  j["jga_ci"] = {ci_low, ci_high};
  j["n_turns"] = n_turns;
  j["bootstrap"] = {{"resamples", bootstrap_resamples}, {"seed", bootstrap_seed}};
  j["per_slot_f1"] = per_slot_f1;
  j["group_f1"] = group_f1;
  j["per_turn"] = nlohmann::ordered_json::array();
  for (const auto& [ordinal, acc] : per_turn)
    j["per_turn"].push_back({{"turn", ordinal}, {"accuracy", acc.accuracy}, {"support", acc.support}});
  j["parse_warning_rate"] = parse_warning_rate;
  return j.dump(2);
}

EvalReport EvalReport::from_json_string(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  EvalReport r;
  r.model_label = j.at("model").get<std::string>();
  r.scenario = j.at("scenario").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.corpus_tag = j.value("corpus", "");
  r.jga = j.at("jga").get<double>();
  r.ci_low = j.at("jga_ci").at(0).get<double>();
  r.ci_high = j.at("jga_ci").at(1).get<double>();
  r.n_turns = j.at("n_turns").get<int>();
  r.bootstrap_resamples = j.at("bootstrap").at("resamples").get<int>();
  r.bootstrap_seed = j.at("bootstrap").at("seed").get<uint64_t>();
  for (const auto& [k, v] : j.at("per_slot_f1").items()) r.per_slot_f1[k] = v.get<double>();
  for (const auto& [k, v] : j.at("group_f1").items()) r.group_f1[k] = v.get<double>();
  for (const auto& e : j.at("per_turn"))
    r.per_turn[e.at("turn").get<int>()] = {e.at("accuracy").get<double>(), e.at("support").get<int>()};
  r.parse_warning_rate = j.at("parse_warning_rate").get<double>();
  return r;
}

void save_report(const EvalReport& report, const std::string& path) {
  std::ofstream fs(path, std::ios::binary | std::ios::trunc);
  if (!fs) throw std::runtime_error("cannot write " + path);
  fs << report.to_json_string() << "\n";
  if (!fs) throw std::runtime_error("write failed: " + path);
}

EvalReport load_report(const std::string& path) {
  std::ifstream fs(path, std::ios::binary);
  if (!fs) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << fs.rdbuf();
  return EvalReport::from_json_string(ss.str());
}

}  // namespace sdst
