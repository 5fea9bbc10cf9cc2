#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "sdst/experiment.hpp"
#include "sdst/report.hpp"

namespace fs = std::filesystem;
using namespace sdst;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitMissingDependency = 3;
constexpr int kExitNonFiniteLoss = 4;
constexpr int kExitConfigMismatch = 5;

int log_level() {
  const char* env = std::getenv("SDST_LOG");
  if (!env) return 1;
  std::string v = env;
  if (v == "quiet") return 0;
  if (v == "debug") return 2;
  return 1;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cout << msg << "\n";
}

uint64_t draw_seed() {
  std::random_device rd;
  return (static_cast<uint64_t>(rd()) << 32) ^ rd();
}

struct GenArgs {
  std::string config_path, out_dir;
  int64_t seed = -1;
};

int run_gen_data(const GenArgs& args) {
  ExperimentConfig cfg = ExperimentConfig::from_json_file(args.config_path);
  uint64_t seed = args.seed >= 0 ? static_cast<uint64_t>(args.seed) : draw_seed();
  fs::create_directories(args.out_dir);
  Ontology ont = cfg.make_ontology();
  std::map<std::string, uint64_t> checksums;
  for (auto [split, count] : {std::pair{Split::train, cfg.n_train}, {Split::dev, cfg.n_dev},
                              {Split::test, cfg.n_test}}) {
    GenConfig gen = cfg.gen;
    gen.seed = seed;
    gen.split = split;
    gen.n_dialogues = count;
    Corpus corpus = generate_corpus(ont, gen);
    std::string path = args.out_dir + "/" + split_name(split) + ".jsonl";
    save_corpus(corpus, path);
    checksums[split_name(split) + std::string(".jsonl")] = file_checksum(path);
    checksums[split_name(split) + std::string(".frames")] = file_checksum(sidecar_path(path));
    info("wrote " + path + " (" + std::to_string(corpus.size()) + " dialogues)");
  }
  save_corpus_manifest(args.out_dir, cfg, seed, ont.slot_groups(), checksums);

  Manifest m;
  m.command = "gen-data";
  m.seed = seed;
  m.config_path = args.config_path;
  m.config_checksum = file_checksum(args.config_path);
  for (const auto& [name, sum] : checksums) m.outputs[args.out_dir + "/" + name] = sum;
  m.save(args.out_dir + "/gen_manifest.json");
  info("corpus manifest at " + args.out_dir + "/manifest.json");
  return 0;
}

struct TrainArgs {
  std::string model, corpus_dir, config_path, out_path, asr_ckpt, context_mode;
  int64_t seed = -1;
};

int run_train(const TrainArgs& args) {
  ExperimentConfig cfg = ExperimentConfig::from_json_file(args.config_path);
  if (!args.context_mode.empty()) {
    if (args.context_mode == "oracle") cfg.train.context_mode = ContextMode::oracle;
    else if (args.context_mode == "scheduled") cfg.train.context_mode = ContextMode::scheduled;
    else throw CLI::ValidationError("--context-mode must be oracle or scheduled");
  }
  if (args.seed >= 0) cfg.train.seed = static_cast<uint64_t>(args.seed);

  std::string train_path = args.corpus_dir + "/train.jsonl";
  std::string dev_path = args.corpus_dir + "/dev.jsonl";
  Corpus train_corpus = load_corpus(train_path);
  Corpus dev_corpus;
  bool have_dev = fs::exists(dev_path);
  if (have_dev) dev_corpus = load_corpus(dev_path);

  // tokenizer must match the generating ontology exactly
  Ontology ont = cfg.make_ontology();
  Tokenizer tok = Tokenizer::build(ont);
  nn::BlockConfig block = cfg.block;
  block.vocab_size = tok.vocab_size();
  block.audio_dim = cfg.gen.audio_dim;

  uint64_t corpus_sum = file_checksum(train_path) ^ file_checksum(sidecar_path(train_path));
  LossCurve curve;
  Manifest m;
  m.command = "train";
  m.seed = cfg.train.seed;
  m.config_path = args.config_path;
  m.config_checksum = file_checksum(args.config_path);
  m.inputs[train_path] = file_checksum(train_path);
  m.extra["model"] = args.model;
  m.extra["context_mode"] = cfg.train.context_mode == ContextMode::oracle ? "oracle" : "scheduled";

  if (args.model == "e2e") {
    E2EModel model = E2EModel::init(block, tok, cfg.gen.agent_modality, cfg.train.seed);
    model.meta.corpus_checksum = corpus_sum;
    curve = train_e2e(model, train_corpus, have_dev ? &dev_corpus : nullptr, cfg.train);
    save_checkpoint(model, args.out_path);
  } else if (args.model == "cascade-asr") {
    CascadeModel model = CascadeModel::init(block, tok, cfg.gen.agent_modality, cfg.train.seed);
    model.meta.corpus_checksum = corpus_sum;
    curve = train_asr(model, train_corpus, cfg.train);
    save_checkpoint(model, args.out_path, ModelKind::asr);
  } else if (args.model == "cascade-nlu") {
    if (args.asr_ckpt.empty() || !fs::exists(args.asr_ckpt)) {
      std::cerr << "error: cascade-nlu requires --asr-ckpt with a trained ASR checkpoint\n";
      return kExitMissingDependency;
    }
    LoadedModel loaded = load_checkpoint(args.asr_ckpt);
    if (!loaded.cascade) throw ConfigMismatch("--asr-ckpt does not hold an asr/cascade model");
    CascadeModel model = std::move(*loaded.cascade);
    model.reinit_nlu(cfg.train.seed);
    model.meta.seed = cfg.train.seed;
    model.meta.corpus_checksum = corpus_sum;
    curve = train_nlu(model, train_corpus, have_dev ? &dev_corpus : nullptr, cfg.train);
    save_checkpoint(model, args.out_path, ModelKind::cascade);
    m.inputs[args.asr_ckpt] = file_checksum(args.asr_ckpt);
  } else {
    throw CLI::ValidationError("--model must be e2e, cascade-asr or cascade-nlu");
  }

  std::string curve_path = args.out_path + ".loss.csv";
  curve.save_csv(curve_path);
  m.outputs[args.out_path] = file_checksum(args.out_path);
  m.outputs[curve_path] = file_checksum(curve_path);
  m.save(args.out_path + ".manifest.json");
  info("trained " + args.model + " for " + std::to_string(curve.epochs_run) + " epochs, checkpoint at " +
       args.out_path);
  return 0;
}

struct EvalArgs {
  std::string ckpt, corpus_dir, scenario = "oracle", mode, report_path, split = "dev";
  uint64_t bootstrap_seed = 12345;
  int bootstrap_resamples = 1000;
};

int run_eval(const EvalArgs& args) {
  LoadedModel loaded = load_checkpoint(args.ckpt);
  if (loaded.kind == ModelKind::asr)
    throw ConfigMismatch("checkpoint holds only an asr component; train cascade-nlu first");

  Scenario scenario;
  if (args.scenario == "oracle") scenario = Scenario::oracle_context;
  else if (args.scenario == "predicted") scenario = Scenario::predicted_context;
  else throw CLI::ValidationError("--scenario must be oracle or predicted");

  std::string mode = args.mode;
  if (loaded.kind == ModelKind::e2e) {
    if (!mode.empty() && mode != "audio")
      throw CLI::ValidationError("--mode " + mode + " applies to cascade checkpoints only");
    mode = "audio";
  } else {
    if (mode.empty()) mode = "asr";
    if (mode != "asr" && mode != "ground-truth-text")
      throw CLI::ValidationError("--mode must be asr or ground-truth-text");
  }

  std::string corpus_path = args.corpus_dir + "/" + args.split + ".jsonl";
  Corpus corpus = load_corpus(corpus_path);
  std::map<std::string, SlotGroup> groups = load_slot_groups(args.corpus_dir);

  EvalOptions options;
  options.scenario = scenario;
  options.corpus_tag = args.split;
  options.bootstrap_seed = args.bootstrap_seed;
  options.bootstrap_resamples = args.bootstrap_resamples;

  Predictor predictor;
  if (loaded.kind == ModelKind::e2e) {
    options.model_label = "e2e";
    options.mode = "audio";
    predictor = make_e2e_predictor(*loaded.e2e);
  } else {
    options.model_label = "cascade";
    options.mode = mode == "asr" ? "asr" : "ground_truth_text";
    predictor = make_cascade_predictor(*loaded.cascade,
                                       mode == "asr" ? CascadeMode::asr : CascadeMode::ground_truth_text);
  }

  std::vector<TurnPrediction> predictions = rollout(predictor, corpus, scenario);
  EvalReport report = evaluate_predictions(predictions, groups, options);
  save_report(report, args.report_path);
  save_prediction_dump(predictions, scenario, args.report_path + ".predictions.jsonl");

  Manifest m;
  m.command = "eval";
  m.seed = args.bootstrap_seed;
  m.inputs[args.ckpt] = file_checksum(args.ckpt);
  m.inputs[corpus_path] = file_checksum(corpus_path);
  m.outputs[args.report_path] = file_checksum(args.report_path);
  m.extra["scenario"] = scenario_name(scenario);
  m.extra["mode"] = options.mode;
  m.save(args.report_path + ".manifest.json");

  info("JGA " + format_jga_cell(report.jga, report.ci_low, report.ci_high) + " over " +
       std::to_string(report.n_turns) + " turns -> " + args.report_path);
  return 0;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::vector<std::string> formats = {"md"};
  std::string out_dir;
};

int run_report(const ReportArgs& args) {
  std::vector<EvalReport> reports;
  for (const auto& path : args.inputs) {
    try {
      reports.push_back(load_report(path));
    } catch (const std::exception& e) {
      std::cerr << "error: cannot read report " << path << ": " << e.what() << "\n";
      return kExitUsage;
    }
  }
  fs::create_directories(args.out_dir);
  for (const auto& format : args.formats) {
    std::string path, content;
    if (format == "md") {
      path = args.out_dir + "/results.md";
      content = render_markdown_table(reports);
    } else if (format == "csv") {
      path = args.out_dir + "/results.csv";
      content = render_csv(reports);
    } else if (format == "svg") {
      std::ofstream f1(args.out_dir + "/group_f1.svg", std::ios::trunc);
      f1 << render_group_f1_svg(reports);
      std::ofstream f2(args.out_dir + "/turn_accuracy.svg", std::ios::trunc);
      f2 << render_turn_accuracy_svg(reports);
      info("wrote " + args.out_dir + "/group_f1.svg and turn_accuracy.svg");
      continue;
    } else {
      throw CLI::ValidationError("--format must be md, csv or svg");
    }
    std::ofstream fs_(path, std::ios::trunc);
    fs_ << content;
    info("wrote " + path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic spoken dialogue state tracking laboratory"};
  app.require_subcommand(1);

  GenArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic corpus (train/dev/test)");
  gen->add_option("--config", gen_args.config_path, "experiment config JSON")->required();
  gen->add_option("--seed", gen_args.seed, "generation seed (drawn and recorded if omitted)");
  gen->add_option("--out", gen_args.out_dir, "output directory")->required();

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train a model on a corpus");
  train->add_option("--model", train_args.model, "e2e | cascade-asr | cascade-nlu")->required();
  train->add_option("--corpus", train_args.corpus_dir, "corpus directory from gen-data")->required();
  train->add_option("--config", train_args.config_path, "experiment config JSON")->required();
  train->add_option("--context-mode", train_args.context_mode, "oracle | scheduled");
  train->add_option("--seed", train_args.seed, "training seed override");
  train->add_option("--asr-ckpt", train_args.asr_ckpt, "trained ASR checkpoint (cascade-nlu only)");
  train->add_option("--out", train_args.out_path, "checkpoint output path")->required();

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus split");
  eval->add_option("--ckpt", eval_args.ckpt, "model checkpoint")->required();
  eval->add_option("--corpus", eval_args.corpus_dir, "corpus directory")->required();
  eval->add_option("--split", eval_args.split, "train | dev | test (default dev)");
  eval->add_option("--scenario", eval_args.scenario, "oracle | predicted");
  eval->add_option("--mode", eval_args.mode, "asr | ground-truth-text (cascade only)");
  eval->add_option("--bootstrap-seed", eval_args.bootstrap_seed, "bootstrap rng seed");
  eval->add_option("--bootstrap-resamples", eval_args.bootstrap_resamples, "bootstrap resamples");
  eval->add_option("--report", eval_args.report_path, "report JSON output path")->required();

  ReportArgs report_args;
  CLI::App* report = app.add_subcommand("report", "render tables and charts from reports");
  report->add_option("--inputs", report_args.inputs, "report JSON files")->required()->expected(-1);
  report->add_option("--format", report_args.formats, "md | csv | svg (repeatable)");
  report->add_option("--out", report_args.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_args);
    if (train->parsed()) return run_train(train_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (report->parsed()) return run_report(report_args);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitNonFiniteLoss;
  } catch (const ConfigMismatch& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << "\n";
    return kExitConfigMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
