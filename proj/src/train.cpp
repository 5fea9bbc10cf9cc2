#include "sdst/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "sdst/optim.hpp"

namespace sdst {

const char* scenario_name(Scenario s) {
  return s == Scenario::oracle_context ? "oracle_context" : "predicted_context";
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (lr <= 0) throw InvalidConfig("lr must be positive");
  if (warmup_steps < 0) throw InvalidConfig("warmup_steps must be >= 0");
  double prev = 0.0;
  for (double e : epsilon_schedule) {
    if (e < 0.0 || e > 1.0) throw InvalidConfig("epsilon values must lie in [0,1]");
    if (e < prev) throw InvalidConfig("epsilon schedule must be non-decreasing");
    prev = e;
  }
}

double TrainConfig::epsilon_for_epoch(int epoch) const {
  if (context_mode == ContextMode::oracle) return 0.0;
  if (!epsilon_schedule.empty()) {
    size_t i = std::min(static_cast<size_t>(epoch), epsilon_schedule.size() - 1);
    return epsilon_schedule[i];
  }
  // default: linear 0 -> 0.5 over the configured epochs
  if (epochs <= 1) return 0.0;
  return 0.5 * static_cast<double>(epoch) / static_cast<double>(epochs - 1);
}

void LossCurve::save_csv(const std::string& path) const {
  std::ofstream fs(path, std::ios::trunc);
  if (!fs) throw std::runtime_error("cannot write " + path);
  fs << "epoch,loss,dev_jga\n";
  for (size_t i = 0; i < epoch_loss.size(); ++i) {
    fs << i << "," << epoch_loss[i] << ",";
    if (i < dev_jga.size() && dev_jga[i] >= 0) fs << dev_jga[i];
    fs << "\n";
  }
}

namespace {

struct TurnRef {
  size_t dialogue;
  size_t ordinal;  // 0-based user-turn index within the dialogue
};

std::vector<TurnRef> user_turn_refs(const Corpus& corpus) {
  std::vector<TurnRef> refs;
  for (size_t di = 0; di < corpus.size(); ++di) {
    size_t users = corpus[di].user_turn_indices().size();
    for (size_t u = 0; u < users; ++u) refs.push_back({di, u});
  }
  return refs;
}

template <typename T>
void shuffle_refs(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<size_t>(rng.range_int(0, static_cast<int>(i) - 1))]);
}

double warmup_lr(const TrainConfig& cfg, int64_t step) {
  if (cfg.warmup_steps <= 0) return cfg.lr;
  double f = static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  return cfg.lr * std::min(1.0, f);
}

void check_finite_loss(double loss, const char* what) {
  if (!std::isfinite(loss))
    throw NonFiniteLoss(std::string(what) + ": loss became non-finite (diverged or bad inputs)");
}

// Gold context of user turn `ordinal` (the previous user turn's state).
const DialogueState& gold_context(const Dialogue& d, const std::vector<size_t>& users, size_t ordinal) {
  static const DialogueState empty;
  if (ordinal == 0) return empty;
  return *d.turns[users[ordinal - 1]].gold_state;
}

const Turn* agent_before(const Dialogue& d, const std::vector<size_t>& users, size_t ordinal) {
  if (ordinal == 0) return nullptr;
  return &d.turns[users[ordinal] - 1];
}

}  // namespace

LossCurve train_e2e(E2EModel& model, const Corpus& train, const Corpus* dev, const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw EmptyCorpus("train_e2e: empty corpus");
  std::vector<TurnRef> refs = user_turn_refs(train);
  if (refs.empty()) throw EmptyCorpus("train_e2e: corpus has no user turns");

  std::vector<ag::Tensor<float>*> params = model.params();
  ag::Adam<float> adam({config.lr});
  LossCurve curve;

  std::vector<std::vector<size_t>> users_cache(train.size());
  for (size_t di = 0; di < train.size(); ++di) users_cache[di] = train[di].user_turn_indices();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double eps = config.epsilon_for_epoch(epoch);
    Rng shuffle_rng = Rng::derive(config.seed, "e2e-shuffle", static_cast<uint64_t>(epoch));
    std::vector<TurnRef> order = refs;
    shuffle_refs(order, shuffle_rng);

    double epoch_loss = 0.0;
    size_t batch_start = 0;
    while (batch_start < order.size()) {
      size_t batch_end = std::min(batch_start + static_cast<size_t>(config.batch_size), order.size());
      int n = static_cast<int>(batch_end - batch_start);
      ag::Adam<float>::zero_grad(params);
      for (size_t bi = batch_start; bi < batch_end; ++bi) {
        const TurnRef& ref = order[bi];
        const Dialogue& d = train[ref.dialogue];
        const auto& users = users_cache[ref.dialogue];
        const Turn& user = d.turns[users[ref.ordinal]];

        DialogueState context = gold_context(d, users, ref.ordinal);
        if (eps > 0 && ref.ordinal >= 1) {
          Rng flip = Rng::derive(config.seed, "e2e-sched",
                                 (static_cast<uint64_t>(epoch) << 40) ^
                                     (static_cast<uint64_t>(ref.dialogue) << 12) ^ ref.ordinal);
          if (flip.bernoulli(eps)) {
            // frozen forward for turn t-2 under its own gold context
            size_t prev = ref.ordinal - 1;
            PredictOutcome po = e2e_predict(model, gold_context(d, users, prev),
                                            agent_before(d, users, prev), d.turns[users[prev]]);
            context = std::move(po.state);
          }
        }

        std::vector<int> ctx_ids = model.context_ids(context, agent_before(d, users, ref.ordinal));
        FrameMatrix frames = model.turn_frames(agent_before(d, users, ref.ordinal), user);
        ag::Tensor<float> h = model.encode(ctx_ids, frames);

        std::vector<int> target = model.tokenizer.encode(flatten(*user.gold_state));
        std::vector<int> dec_in = {Tokenizer::kBos};
        dec_in.insert(dec_in.end(), target.begin(), target.end());
        std::vector<int> dec_out = target;
        dec_out.push_back(Tokenizer::kEos);

        ag::Tensor<float> logits = model.decoder.forward_train(dec_in, h);
        ag::Tensor<float> loss = ag::cross_entropy(logits, dec_out);
        double lv = static_cast<double>(loss.item());
        check_finite_loss(lv, "train_e2e");
        epoch_loss += lv;
        ag::backward(ag::scale(loss, 1.0f / static_cast<float>(n)));
      }
      adam.step(params, warmup_lr(config, adam.steps() + 1));
      batch_start = batch_end;
    }
    curve.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    curve.epochs_run = epoch + 1;

    double dj = -1.0;
    bool want_eval = dev && (epoch % std::max(1, config.eval_every) == 0 || epoch == config.epochs - 1);
    if (want_eval) dj = dev_jga(make_e2e_predictor(model), *dev);
    curve.dev_jga.push_back(dj);
    if (config.target_dev_jga >= 0 && dj >= config.target_dev_jga) break;
  }
  model.meta.epochs = static_cast<uint32_t>(curve.epochs_run);
  return curve;
}

LossCurve train_asr(CascadeModel& model, const Corpus& train, const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw EmptyCorpus("train_asr: empty corpus");

  struct AudioRef {
    size_t dialogue, turn;
  };
  std::vector<AudioRef> refs;
  for (size_t di = 0; di < train.size(); ++di)
    for (size_t ti = 0; ti < train[di].turns.size(); ++ti)
      if (train[di].turns[ti].audio && train[di].turns[ti].text) refs.push_back({di, ti});
  if (refs.empty()) throw EmptyCorpus("train_asr: corpus has no audio turns");

  std::vector<ag::Tensor<float>*> params = model.asr_params();
  ag::Adam<float> adam({config.lr});
  LossCurve curve;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng = Rng::derive(config.seed, "asr-shuffle", static_cast<uint64_t>(epoch));
    std::vector<AudioRef> order = refs;
    shuffle_refs(order, shuffle_rng);

    double epoch_loss = 0.0;
    size_t counted = 0;
    size_t batch_start = 0;
    while (batch_start < order.size()) {
      size_t batch_end = std::min(batch_start + static_cast<size_t>(config.batch_size), order.size());
      ag::Adam<float>::zero_grad(params);
      int effective = 0;
      std::vector<ag::Tensor<float>> losses;
      for (size_t bi = batch_start; bi < batch_end; ++bi) {
        const Turn& turn = train[order[bi].dialogue].turns[order[bi].turn];
        std::vector<int> target = model.tokenizer.encode(*turn.text);
        ag::Tensor<float> logits = model.asr_logits(*turn.audio);
        try {
          ag::Tensor<float> loss = ag::ctc_loss(logits, target);
          // normalize by target length so long utterances don't dominate
          loss = ag::scale(loss, 1.0f / static_cast<float>(std::max<size_t>(1, target.size())));
          losses.push_back(std::move(loss));
          ++effective;
        } catch (const ag::ImpossibleAlignment&) {
          ++curve.skipped_examples;  // dropped frames made the target unreachable
        }
      }
      for (auto& loss : losses) {
        double lv = static_cast<double>(loss.item());
        check_finite_loss(lv, "train_asr");
        epoch_loss += lv;
        ++counted;
        ag::backward(ag::scale(loss, 1.0f / static_cast<float>(std::max(1, effective))));
      }
      if (effective > 0) adam.step(params, warmup_lr(config, adam.steps() + 1));
      batch_start = batch_end;
    }
    curve.epoch_loss.push_back(counted ? epoch_loss / static_cast<double>(counted) : 0.0);
    curve.dev_jga.push_back(-1.0);
    curve.epochs_run = epoch + 1;
  }
  model.meta.epochs = static_cast<uint32_t>(curve.epochs_run);
  return curve;
}

LossCurve train_nlu(CascadeModel& model, const Corpus& train, const Corpus* dev, const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw EmptyCorpus("train_nlu: empty corpus");
  std::vector<TurnRef> refs = user_turn_refs(train);
  if (refs.empty()) throw EmptyCorpus("train_nlu: corpus has no user turns");

  std::vector<std::vector<size_t>> users_cache(train.size());
  for (size_t di = 0; di < train.size(); ++di) users_cache[di] = train[di].user_turn_indices();

  // Frozen-ASR transcripts, computed once: user turns always, agent turns
  // only under audio modality (otherwise gold agent text is the input).
  std::vector<std::vector<std::string>> user_tx(train.size());
  std::vector<std::vector<std::string>> agent_tx(train.size());
  for (size_t di = 0; di < train.size(); ++di) {
    const auto& users = users_cache[di];
    user_tx[di].resize(users.size());
    agent_tx[di].resize(users.size());
    for (size_t u = 0; u < users.size(); ++u) {
      const Turn& user = train[di].turns[users[u]];
      user_tx[di][u] = user.audio ? asr_transcribe(model, *user.audio) : (user.text ? *user.text : "");
      const Turn* agent = agent_before(train[di], users, u);
      if (!agent) continue;
      if (model.agent_modality == AgentModality::audio && agent->audio)
        agent_tx[di][u] = asr_transcribe(model, *agent->audio);
      else if (agent->text)
        agent_tx[di][u] = *agent->text;
    }
  }

  auto nlu_forward_predict = [&model](const DialogueState& ctx, const std::string& agent_text,
                                      const std::string& user_text) {
    ag::NoGradGuard no_grad;
    std::vector<int> ids = model.nlu_input_ids(ctx, agent_text, user_text);
    ag::Tensor<float> memory = model.nlu_enc.forward(ids);
    nn::DecodeResult dr = model.nlu_dec.decode_greedy(memory, Tokenizer::kBos, Tokenizer::kEos,
                                                      model.config.max_decode_len);
    return parse_state(model.tokenizer.decode(dr.ids)).state;
  };

  std::vector<ag::Tensor<float>*> params = model.nlu_params();
  ag::Adam<float> adam({config.lr});
  LossCurve curve;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double eps = config.epsilon_for_epoch(epoch);
    Rng shuffle_rng = Rng::derive(config.seed, "nlu-shuffle", static_cast<uint64_t>(epoch));
    std::vector<TurnRef> order = refs;
    shuffle_refs(order, shuffle_rng);

    double epoch_loss = 0.0;
    size_t batch_start = 0;
    while (batch_start < order.size()) {
      size_t batch_end = std::min(batch_start + static_cast<size_t>(config.batch_size), order.size());
      int n = static_cast<int>(batch_end - batch_start);
      ag::Adam<float>::zero_grad(params);
      for (size_t bi = batch_start; bi < batch_end; ++bi) {
        const TurnRef& ref = order[bi];
        const Dialogue& d = train[ref.dialogue];
        const auto& users = users_cache[ref.dialogue];
        const Turn& user = d.turns[users[ref.ordinal]];

        DialogueState context = gold_context(d, users, ref.ordinal);
        if (eps > 0 && ref.ordinal >= 1) {
          Rng flip = Rng::derive(config.seed, "nlu-sched",
                                 (static_cast<uint64_t>(epoch) << 40) ^
                                     (static_cast<uint64_t>(ref.dialogue) << 12) ^ ref.ordinal);
          if (flip.bernoulli(eps)) {
            size_t prev = ref.ordinal - 1;
            context = nlu_forward_predict(gold_context(d, users, prev), agent_tx[ref.dialogue][prev],
                                          user_tx[ref.dialogue][prev]);
          }
        }

        std::vector<int> ids = model.nlu_input_ids(context, agent_tx[ref.dialogue][ref.ordinal],
                                                   user_tx[ref.dialogue][ref.ordinal]);
        ag::Tensor<float> memory = model.nlu_enc.forward(ids);

        std::vector<int> target = model.tokenizer.encode(flatten(*user.gold_state));
        std::vector<int> dec_in = {Tokenizer::kBos};
        dec_in.insert(dec_in.end(), target.begin(), target.end());
        std::vector<int> dec_out = target;
        dec_out.push_back(Tokenizer::kEos);

        ag::Tensor<float> logits = model.nlu_dec.forward_train(dec_in, memory);
        ag::Tensor<float> loss = ag::cross_entropy(logits, dec_out);
        double lv = static_cast<double>(loss.item());
        check_finite_loss(lv, "train_nlu");
        epoch_loss += lv;
        ag::backward(ag::scale(loss, 1.0f / static_cast<float>(n)));
      }
      adam.step(params, warmup_lr(config, adam.steps() + 1));
      batch_start = batch_end;
    }
    curve.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    curve.epochs_run = epoch + 1;

    double dj = -1.0;
    bool want_eval = dev && (epoch % std::max(1, config.eval_every) == 0 || epoch == config.epochs - 1);
    if (want_eval) dj = dev_jga(make_cascade_predictor(model, CascadeMode::asr), *dev);
    curve.dev_jga.push_back(dj);
    if (config.target_dev_jga >= 0 && dj >= config.target_dev_jga) break;
  }
  model.meta.epochs = static_cast<uint32_t>(curve.epochs_run);
  return curve;
}

Predictor make_e2e_predictor(const E2EModel& model) {
  return [&model](const DialogueState& ctx, const Turn* agent, const Turn& user) {
    return e2e_predict(model, ctx, agent, user);
  };
}

Predictor make_cascade_predictor(const CascadeModel& model, CascadeMode mode) {
  return [&model, mode](const DialogueState& ctx, const Turn* agent, const Turn& user) {
    return cascade_predict(model, ctx, agent, user, mode);
  };
}

std::vector<TurnPrediction> rollout(const Predictor& predict, const Corpus& corpus, Scenario scenario) {
  std::vector<TurnPrediction> out;
  for (size_t di = 0; di < corpus.size(); ++di) {
    const Dialogue& d = corpus[di];
    std::vector<size_t> users = d.user_turn_indices();
    DialogueState prev_predicted;
    for (size_t u = 0; u < users.size(); ++u) {
      DialogueState context =
          u == 0 ? DialogueState{}
                 : (scenario == Scenario::oracle_context ? *d.turns[users[u - 1]].gold_state : prev_predicted);
      PredictOutcome po = predict(context, agent_before(d, users, u), d.turns[users[u]]);
      prev_predicted = po.state;
      TurnPrediction tp;
      tp.dialogue_id = d.id;
      tp.dialogue_index = di;
      tp.user_ordinal = static_cast<int>(u) + 1;
      tp.raw = std::move(po.raw);
      tp.state = std::move(po.state);
      tp.warnings = std::move(po.warnings);
      tp.gold = *d.turns[users[u]].gold_state;
      out.push_back(std::move(tp));
    }
  }
  return out;
}

EvalReport evaluate_predictions(const std::vector<TurnPrediction>& predictions,
                                const std::map<std::string, SlotGroup>& groups,
                                const EvalOptions& options) {
  std::vector<DialogueState> preds, golds;
  std::vector<int> ordinals;
  int warned = 0;
  for (const auto& tp : predictions) {
    preds.push_back(tp.state);
    golds.push_back(tp.gold);
    ordinals.push_back(tp.user_ordinal);
    if (!tp.warnings.empty()) ++warned;
  }
  EvalReport report;
  report.model_label = options.model_label;
  report.scenario = scenario_name(options.scenario);
  report.mode = options.mode;
  report.corpus_tag = options.corpus_tag;
  report.n_turns = static_cast<int>(predictions.size());
  report.bootstrap_resamples = options.bootstrap_resamples;
  report.bootstrap_seed = options.bootstrap_seed;
  report.jga = jga(preds, golds);
  auto ci = bootstrap_ci(match_indicators(preds, golds), options.bootstrap_resamples, options.bootstrap_seed);
  report.ci_low = ci.first;
  report.ci_high = ci.second;
  SlotF1Report f1 = slot_f1(preds, golds, groups);
  for (const auto& [slot, counts] : f1.per_slot) report.per_slot_f1[slot] = counts.f1();
  report.group_f1 = f1.group_f1;
  report.per_turn = per_turn_accuracy(preds, golds, ordinals);
  report.parse_warning_rate =
      predictions.empty() ? 0.0 : static_cast<double>(warned) / static_cast<double>(predictions.size());
  return report;
}

EvalReport evaluate(const Predictor& predict, const Corpus& corpus,
                    const std::map<std::string, SlotGroup>& groups, const EvalOptions& options) {
  if (corpus.empty()) throw EmptyCorpus("evaluate: empty corpus");
  return evaluate_predictions(rollout(predict, corpus, options.scenario), groups, options);
}

void save_prediction_dump(const std::vector<TurnPrediction>& predictions, Scenario scenario,
                          const std::string& path) {
  std::ofstream fs(path, std::ios::binary | std::ios::trunc);
  if (!fs) throw std::runtime_error("cannot write " + path);
  for (const auto& tp : predictions) {
    nlohmann::ordered_json j;
    j["dialogue_id"] = tp.dialogue_id;
    j["turn"] = tp.user_ordinal;
    j["raw"] = tp.raw;
    j["predicted"] = flatten(tp.state);
    j["gold"] = flatten(tp.gold);
    j["scenario"] = scenario_name(scenario);
    fs << j.dump() << "\n";
  }
  if (!fs) throw std::runtime_error("write failed: " + path);
}

double dev_jga(const Predictor& predict, const Corpus& dev) {
  std::vector<TurnPrediction> preds = rollout(predict, dev, Scenario::oracle_context);
  std::vector<DialogueState> p, g;
  for (auto& tp : preds) {
    p.push_back(std::move(tp.state));
    g.push_back(std::move(tp.gold));
  }
  return jga(p, g);
}

}  // namespace sdst
