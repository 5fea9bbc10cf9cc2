#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sdst/corpus.hpp"
#include "sdst/metrics.hpp"
#include "sdst/models.hpp"

namespace sdst {

struct EmptyCorpus : std::runtime_error {
  explicit EmptyCorpus(const std::string& what) : std::runtime_error(what) {}
};
struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(const std::string& what) : std::runtime_error(what) {}
};

enum class ContextMode { oracle, scheduled };
enum class Scenario { oracle_context, predicted_context };

const char* scenario_name(Scenario s);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double lr = 2e-3;
  int warmup_steps = 100;
  uint64_t seed = 1;
  ContextMode context_mode = ContextMode::oracle;
  // per-epoch probability of feeding the model's own frozen prediction
  // for turn t-2; empty + scheduled mode -> linear 0 -> 0.5 over epochs
  std::vector<double> epsilon_schedule;
  double target_dev_jga = -1.0;  // early stop once dev JGA reaches this
  int eval_every = 1;            // dev evaluation cadence in epochs

  void validate() const;
  double epsilon_for_epoch(int epoch) const;
};

struct LossCurve {
  std::vector<double> epoch_loss;
  std::vector<double> dev_jga;  // -1 for epochs without a dev pass
  int epochs_run = 0;
  int skipped_examples = 0;

  void save_csv(const std::string& path) const;
};

// Teacher-forced cross-entropy on the flattened DS_t target. In scheduled
// mode the context is the model's own frozen prediction with per-epoch
// probability epsilon.
LossCurve train_e2e(E2EModel& model, const Corpus& train, const Corpus* dev, const TrainConfig& config);

// CTC over every audio turn; alignment-infeasible examples are skipped.
LossCurve train_asr(CascadeModel& model, const Corpus& train, const TrainConfig& config);

// NLU trained on the (frozen) ASR's transcriptions of user turns so that
// training matches the inference regime. Requires a trained ASR.
LossCurve train_nlu(CascadeModel& model, const Corpus& train, const Corpus* dev, const TrainConfig& config);

// ---- rollout & evaluation ----

using Predictor =
    std::function<PredictOutcome(const DialogueState& context, const Turn* agent_turn, const Turn& user_turn)>;

Predictor make_e2e_predictor(const E2EModel& model);
Predictor make_cascade_predictor(const CascadeModel& model, CascadeMode mode);

struct TurnPrediction {
  std::string dialogue_id;
  size_t dialogue_index = 0;
  int user_ordinal = 0;  // 1-based
  std::string raw;
  DialogueState state;
  std::vector<std::string> warnings;
  DialogueState gold;
};

// Oracle scenario feeds gold DS_{t-2}; predicted scenario feeds the parse
// of the model's own previous output. Turns themselves stay gold.
std::vector<TurnPrediction> rollout(const Predictor& predict, const Corpus& corpus, Scenario scenario);

struct EvalOptions {
  Scenario scenario = Scenario::oracle_context;
  std::string model_label = "model";
  std::string mode = "audio";
  std::string corpus_tag;
  int bootstrap_resamples = 1000;
  uint64_t bootstrap_seed = 12345;
};

EvalReport evaluate_predictions(const std::vector<TurnPrediction>& predictions,
                                const std::map<std::string, SlotGroup>& groups, const EvalOptions& options);

EvalReport evaluate(const Predictor& predict, const Corpus& corpus,
                    const std::map<std::string, SlotGroup>& groups, const EvalOptions& options);

// JSON-lines dump: {dialogue id, turn index, raw string, parsed state,
// gold state, scenario}.
void save_prediction_dump(const std::vector<TurnPrediction>& predictions, Scenario scenario,
                          const std::string& path);

// Oracle-context dev JGA of a frozen model (used for early stopping).
double dev_jga(const Predictor& predict, const Corpus& dev);

}  // namespace sdst
