#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "sdst/train.hpp"

using namespace sdst;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() / ("sdst_train_test_" + std::to_string(++counter));
  fs::create_directories(p);
  return p;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct Fixture {
  Ontology ont = default_ontology();
  Tokenizer tok = Tokenizer::build(ont);
  GenConfig gen;
  nn::BlockConfig cfg;

  Fixture() {
    gen.n_dialogues = 3;
    gen.seed = 1;
    gen.mean_turns = 5;
    gen.audio_dim = 8;
    gen.frames_per_token_min = 2;
    gen.frames_per_token_max = 3;
    gen.frame_noise_sigma = 0.01;
    cfg.model_dim = 16;
    cfg.heads = 2;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.ffn_dim = 32;
    cfg.vocab_size = tok.vocab_size();
    cfg.max_decode_len = 48;
    cfg.audio_dim = gen.audio_dim;
  }

  Corpus corpus(int n, uint64_t seed) const {
    GenConfig g = gen;
    g.n_dialogues = n;
    g.seed = seed;
    return generate_corpus(ont, g);
  }
};

// Looks the gold state up by turn identity; stands in for a perfect model.
Predictor gold_predictor(const Corpus& corpus) {
  return [&corpus](const DialogueState&, const Turn*, const Turn& user) {
    for (const auto& d : corpus)
      for (const auto& t : d.turns)
        if (&t == &user) return PredictOutcome{*t.gold_state, flatten(*t.gold_state), {}};
    FAIL("user turn not found in corpus");
    return PredictOutcome{};
  };
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("training rejects empty corpora and bad configs") {
  Fixture fx;
  E2EModel model = E2EModel::init(fx.cfg, fx.tok, AgentModality::text, 1);
  TrainConfig tc;
  CHECK_THROWS_AS(train_e2e(model, {}, nullptr, tc), EmptyCorpus);
  TrainConfig bad;
  bad.epsilon_schedule = {0.5, 0.2};  // decreasing
  Corpus c = fx.corpus(1, 2);
  CHECK_THROWS_AS(train_e2e(model, c, nullptr, bad), InvalidConfig);
  TrainConfig bad2;
  bad2.epsilon_schedule = {1.5};
  CHECK_THROWS_AS(train_e2e(model, c, nullptr, bad2), InvalidConfig);
}

TEST_CASE("overfit oracle: single dialogue drives loss under 0.01 and predictions to gold") {
  Fixture fx;
  Corpus corpus = fx.corpus(1, 42);
  E2EModel model = E2EModel::init(fx.cfg, fx.tok, AgentModality::text, 7);
  TrainConfig tc;
  tc.epochs = 500;
  tc.batch_size = 4;
  tc.lr = 3e-3;
  tc.warmup_steps = 30;
  tc.seed = 7;
  LossCurve curve = train_e2e(model, corpus, nullptr, tc);
  REQUIRE_FALSE(curve.epoch_loss.empty());
  CHECK(curve.epoch_loss.back() < 0.01);

  std::vector<TurnPrediction> preds = rollout(make_e2e_predictor(model), corpus, Scenario::oracle_context);
  for (const auto& tp : preds) {
    CAPTURE(tp.raw);
    CHECK(state_equal(tp.state, tp.gold));
  }
}

TEST_CASE("determinism: same seed and corpus give byte-identical checkpoints") {
  Fixture fx;
  Corpus corpus = fx.corpus(2, 5);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.seed = 11;

  fs::path dir = temp_dir();
  std::string p1 = (dir / "a.ckpt").string(), p2 = (dir / "b.ckpt").string();
  {
    E2EModel m = E2EModel::init(fx.cfg, fx.tok, AgentModality::text, 11);
    train_e2e(m, corpus, nullptr, tc);
    save_checkpoint(m, p1);
  }
  {
    E2EModel m = E2EModel::init(fx.cfg, fx.tok, AgentModality::text, 11);
    train_e2e(m, corpus, nullptr, tc);
    save_checkpoint(m, p2);
  }
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("scheduled mode with epsilon == 0 is byte-equivalent to oracle mode") {
  Fixture fx;
  Corpus corpus = fx.corpus(2, 6);
  fs::path dir = temp_dir();
  std::string p1 = (dir / "oracle.ckpt").string(), p2 = (dir / "sched0.ckpt").string();
  {
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 13;
    tc.context_mode = ContextMode::oracle;
    E2EModel m = E2EModel::init(fx.cfg, fx.tok, AgentModality::text, 13);
    train_e2e(m, corpus, nullptr, tc);
    save_checkpoint(m, p1);
  }
  {
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 13;
    tc.context_mode = ContextMode::scheduled;
    tc.epsilon_schedule = {0.0, 0.0};
    E2EModel m = E2EModel::init(fx.cfg, fx.tok, AgentModality::text, 13);
    train_e2e(m, corpus, nullptr, tc);
    save_checkpoint(m, p2);
  }
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("scheduled mode with epsilon > 0 changes the trajectory") {
  Fixture fx;
  Corpus corpus = fx.corpus(2, 8);
  TrainConfig oracle_tc;
  oracle_tc.epochs = 2;
  oracle_tc.seed = 17;
  TrainConfig sched_tc = oracle_tc;
  sched_tc.context_mode = ContextMode::scheduled;
  sched_tc.epsilon_schedule = {1.0, 1.0};

  E2EModel m1 = E2EModel::init(fx.cfg, fx.tok, AgentModality::text, 17);
  E2EModel m2 = E2EModel::init(fx.cfg, fx.tok, AgentModality::text, 17);
  train_e2e(m1, corpus, nullptr, oracle_tc);
  train_e2e(m2, corpus, nullptr, sched_tc);
  bool any_diff = false;
  auto v1 = m1.params();
  auto v2 = m2.params();
  for (size_t i = 0; i < v1.size() && !any_diff; ++i)
    any_diff = v1[i]->values() != v2[i]->values();
  CHECK(any_diff);
}

TEST_CASE("asr training converges on a zero-noise token and transcribes it") {
  Fixture fx;
  GenConfig quiet = fx.gen;
  quiet.frame_noise_sigma = 0.0;
  quiet.n_dialogues = 25;
  quiet.seed = 20;
  quiet.audio_dim = 16;
  quiet.frames_per_token_min = 3;
  quiet.frames_per_token_max = 4;
  Corpus corpus = generate_corpus(fx.ont, quiet);

  nn::BlockConfig cfg = fx.cfg;
  cfg.audio_dim = quiet.audio_dim;
  CascadeModel model = CascadeModel::init(cfg, fx.tok, AgentModality::text, 21);
  TrainConfig tc;
  tc.epochs = 150;
  tc.batch_size = 8;
  tc.lr = 3e-3;
  tc.warmup_steps = 20;
  tc.seed = 21;
  LossCurve curve = train_asr(model, corpus, tc);
  CHECK(curve.epoch_loss.back() < 0.1);

  // probe with a single token the corpus exposes as a bare short answer
  std::string probe_value;
  for (const auto& d : corpus)
    for (const auto& t : d.turns)
      if (t.speaker == Speaker::user && t.text->find(' ') == std::string::npos && probe_value.empty())
        probe_value = *t.text;
  REQUIRE_FALSE(probe_value.empty());
  Rng rng = Rng::derive(1, "asr-test");
  FrameMatrix frames = vocalize(probe_value, fx.tok, quiet, rng);
  CHECK(asr_transcribe(model, frames) == probe_value);
}

TEST_CASE("nlu training runs on asr transcripts and improves") {
  Fixture fx;
  GenConfig quiet = fx.gen;
  quiet.frame_noise_sigma = 0.0;
  quiet.n_dialogues = 4;
  quiet.seed = 23;
  Corpus corpus = generate_corpus(fx.ont, quiet);

  CascadeModel model = CascadeModel::init(fx.cfg, fx.tok, AgentModality::text, 24);
  TrainConfig asr_tc;
  asr_tc.epochs = 20;
  asr_tc.batch_size = 8;
  asr_tc.lr = 3e-3;
  asr_tc.seed = 24;
  train_asr(model, corpus, asr_tc);

  TrainConfig nlu_tc;
  nlu_tc.epochs = 8;
  nlu_tc.batch_size = 4;
  nlu_tc.lr = 3e-3;
  nlu_tc.seed = 25;
  LossCurve curve = train_nlu(model, corpus, nullptr, nlu_tc);
  CHECK(curve.epoch_loss.back() < curve.epoch_loss.front());
}

TEST_CASE("rollout: turn 0 has no prior context in either scenario") {
  Fixture fx;
  Corpus corpus = fx.corpus(3, 30);
  std::vector<DialogueState> seen_contexts;
  Predictor probe = [&seen_contexts](const DialogueState& ctx, const Turn*, const Turn& user) {
    seen_contexts.push_back(ctx);
    PredictOutcome po;
    po.state = *user.gold_state;  // arbitrary deterministic output
    po.raw = flatten(po.state);
    return po;
  };
  std::vector<TurnPrediction> oracle = rollout(probe, corpus, Scenario::oracle_context);
  std::vector<DialogueState> oracle_ctx = seen_contexts;
  seen_contexts.clear();
  std::vector<TurnPrediction> predicted = rollout(probe, corpus, Scenario::predicted_context);
  for (size_t i = 0, k = 0; i < corpus.size(); ++i) {
    CHECK(oracle_ctx[k].empty());
    CHECK(seen_contexts[k].empty());
    CHECK(oracle[k].raw == predicted[k].raw);  // identical inputs at t=0
    k += corpus[i].user_turn_indices().size();
  }
}

TEST_CASE("rollout: a model that always predicts gold makes both scenarios identical") {
  Fixture fx;
  Corpus corpus = fx.corpus(3, 31);
  Predictor gold = gold_predictor(corpus);
  std::vector<TurnPrediction> a = rollout(gold, corpus, Scenario::oracle_context);
  std::vector<TurnPrediction> b = rollout(gold, corpus, Scenario::predicted_context);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(state_equal(a[i].state, b[i].state));
    CHECK(a[i].raw == b[i].raw);
  }
}

TEST_CASE("rollout: corrupted turn-0 prediction makes scenarios diverge from turn 1") {
  Fixture fx;
  Corpus corpus = fx.corpus(1, 32);
  REQUIRE(corpus[0].user_turn_indices().size() >= 2);
  // echoes its context; turn 0 emits a poisoned state
  Predictor echo = [](const DialogueState& ctx, const Turn*, const Turn&) {
    PredictOutcome po;
    if (ctx.empty()) {
      po.state.set("poison-slot", "bad");
    } else {
      po.state = ctx;
    }
    po.raw = flatten(po.state);
    return po;
  };
  std::vector<TurnPrediction> oracle = rollout(echo, corpus, Scenario::oracle_context);
  std::vector<TurnPrediction> predicted = rollout(echo, corpus, Scenario::predicted_context);
  CHECK(state_equal(oracle[0].state, predicted[0].state));  // same at t=0
  for (size_t i = 1; i < oracle.size(); ++i) {
    CHECK_FALSE(state_equal(oracle[i].state, predicted[i].state));
    CHECK(predicted[i].state.get("poison-slot") != nullptr);  // propagates
  }
}

TEST_CASE("evaluate produces a structurally sound report and dump") {
  Fixture fx;
  Corpus corpus = fx.corpus(4, 33);
  EvalOptions options;
  options.scenario = Scenario::oracle_context;
  options.model_label = "gold";
  options.mode = "audio";
  EvalReport report = evaluate(gold_predictor(corpus), corpus, fx.ont.slot_groups(), options);
  CHECK(report.jga == 1.0);
  CHECK(report.ci_low == 1.0);
  CHECK(report.ci_high == 1.0);
  CHECK(report.parse_warning_rate == 0.0);
  int support_total = 0;
  for (const auto& [ordinal, acc] : report.per_turn) {
    CHECK(acc.accuracy == 1.0);
    support_total += acc.support;
  }
  CHECK(support_total == report.n_turns);
  for (const auto& [group, f1] : report.group_f1) CHECK(f1 == 1.0);

  // supports never increase with the ordinal
  int prev_support = 1 << 30;
  for (const auto& [ordinal, acc] : report.per_turn) {
    CHECK(acc.support <= prev_support);
    prev_support = acc.support;
  }

  fs::path dir = temp_dir();
  std::string dump_path = (dir / "dump.jsonl").string();
  save_prediction_dump(rollout(gold_predictor(corpus), corpus, options.scenario), options.scenario, dump_path);
  std::string dump = slurp(dump_path);
  CHECK(std::count(dump.begin(), dump.end(), '\n') == report.n_turns);
  CHECK(dump.find("\"scenario\":\"oracle_context\"") != std::string::npos);
}

TEST_CASE("loss curve csv is written") {
  LossCurve curve;
  curve.epoch_loss = {1.5, 0.7};
  curve.dev_jga = {-1.0, 0.5};
  curve.epochs_run = 2;
  fs::path dir = temp_dir();
  std::string path = (dir / "curve.csv").string();
  curve.save_csv(path);
  std::string text = slurp(path);
  CHECK(text.find("epoch,loss,dev_jga") == 0);
  CHECK(text.find("1,0.7,0.5") != std::string::npos);
}

TEST_SUITE_END();
