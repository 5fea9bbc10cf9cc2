#include "sdst/experiment.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace sdst {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw InvalidConfig("unknown key '" + key + "' in " + where);
}

NoiseProfile parse_profile(const std::string& s) {
  if (s == "clean") return NoiseProfile::clean;
  if (s == "noisy") return NoiseProfile::noisy;
  throw InvalidConfig("profile must be 'clean' or 'noisy', got '" + s + "'");
}

AgentModality parse_modality(const std::string& s) {
  if (s == "text") return AgentModality::text;
  if (s == "audio") return AgentModality::audio;
  throw InvalidConfig("agent_modality must be 'text' or 'audio', got '" + s + "'");
}

ContextMode parse_context_mode(const std::string& s) {
  if (s == "oracle") return ContextMode::oracle;
  if (s == "scheduled") return ContextMode::scheduled;
  throw InvalidConfig("context_mode must be 'oracle' or 'scheduled', got '" + s + "'");
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    check_keys(j, {"version", "data", "model", "train"}, "config");
    ExperimentConfig cfg;
    cfg.version = j.value("version", 1);
    if (cfg.version != 1) throw FormatVersionMismatch("unsupported config version " + std::to_string(cfg.version));

    if (j.contains("data")) {
      const json& d = j.at("data");
      check_keys(d,
                 {"n_train", "n_dev", "n_test", "mean_turns", "profile", "frame_noise_sigma",
                  "frame_jitter_prob", "frame_drop_prob", "agent_modality", "audio_dim",
                  "frames_per_token", "cross_ref_rate", "lexicon_seed", "lexicon_train_words",
                  "lexicon_dev_words"},
                 "config.data");
      cfg.n_train = d.value("n_train", cfg.n_train);
      cfg.n_dev = d.value("n_dev", cfg.n_dev);
      cfg.n_test = d.value("n_test", cfg.n_test);
      cfg.gen.mean_turns = d.value("mean_turns", cfg.gen.mean_turns);
      if (d.contains("profile")) cfg.gen.profile = parse_profile(d.at("profile").get<std::string>());
      cfg.gen.frame_noise_sigma = d.value("frame_noise_sigma", cfg.gen.frame_noise_sigma);
      cfg.gen.frame_jitter_prob = d.value("frame_jitter_prob", cfg.gen.frame_jitter_prob);
      cfg.gen.frame_drop_prob = d.value("frame_drop_prob", cfg.gen.frame_drop_prob);
      if (d.contains("agent_modality"))
        cfg.gen.agent_modality = parse_modality(d.at("agent_modality").get<std::string>());
      cfg.gen.audio_dim = d.value("audio_dim", cfg.gen.audio_dim);
      if (d.contains("frames_per_token")) {
        const json& f = d.at("frames_per_token");
        if (!f.is_array() || f.size() != 2) throw InvalidConfig("frames_per_token must be [min, max]");
        cfg.gen.frames_per_token_min = f.at(0).get<int>();
        cfg.gen.frames_per_token_max = f.at(1).get<int>();
      }
      cfg.gen.cross_ref_rate = d.value("cross_ref_rate", cfg.gen.cross_ref_rate);
      cfg.lexicon_seed = d.value("lexicon_seed", cfg.lexicon_seed);
      cfg.lexicon_train_words = d.value("lexicon_train_words", cfg.lexicon_train_words);
      cfg.lexicon_dev_words = d.value("lexicon_dev_words", cfg.lexicon_dev_words);
    }

    if (j.contains("model")) {
      const json& m = j.at("model");
      check_keys(m, {"model_dim", "heads", "enc_layers", "dec_layers", "ffn_dim", "max_decode_len"},
                 "config.model");
      cfg.block.model_dim = m.value("model_dim", cfg.block.model_dim);
      cfg.block.heads = m.value("heads", cfg.block.heads);
      cfg.block.enc_layers = m.value("enc_layers", cfg.block.enc_layers);
      cfg.block.dec_layers = m.value("dec_layers", cfg.block.dec_layers);
      cfg.block.ffn_dim = m.value("ffn_dim", cfg.block.ffn_dim);
      cfg.block.max_decode_len = m.value("max_decode_len", cfg.block.max_decode_len);
    }

    if (j.contains("train")) {
      const json& t = j.at("train");
      check_keys(t,
                 {"epochs", "batch_size", "lr", "warmup_steps", "context_mode", "epsilon_schedule",
                  "target_dev_jga", "eval_every"},
                 "config.train");
      cfg.train.epochs = t.value("epochs", cfg.train.epochs);
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
      cfg.train.lr = t.value("lr", cfg.train.lr);
      cfg.train.warmup_steps = t.value("warmup_steps", cfg.train.warmup_steps);
      if (t.contains("context_mode"))
        cfg.train.context_mode = parse_context_mode(t.at("context_mode").get<std::string>());
      if (t.contains("epsilon_schedule"))
        cfg.train.epsilon_schedule = t.at("epsilon_schedule").get<std::vector<double>>();
      cfg.train.target_dev_jga = t.value("target_dev_jga", cfg.train.target_dev_jga);
      cfg.train.eval_every = t.value("eval_every", cfg.train.eval_every);
    }

    cfg.train.validate();
    cfg.block.audio_dim = cfg.gen.audio_dim;
    if (cfg.n_train < 0 || cfg.n_dev < 0 || cfg.n_test < 0)
      throw InvalidConfig("corpus sizes must be >= 0");
    return cfg;
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("malformed config: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream fs(path, std::ios::binary);
  if (!fs) throw InvalidConfig("cannot read config file " + path);
  std::stringstream ss;
  ss << fs.rdbuf();
  return from_json_string(ss.str());
}

std::string ExperimentConfig::to_json_string() const {
  ordered_json j;
  j["version"] = version;
  ordered_json d;
  d["n_train"] = n_train;
  d["n_dev"] = n_dev;
  d["n_test"] = n_test;
  d["mean_turns"] = gen.mean_turns;
  d["profile"] = noise_profile_name(gen.profile);
  d["frame_noise_sigma"] = gen.frame_noise_sigma;
  d["frame_jitter_prob"] = gen.frame_jitter_prob;
  d["frame_drop_prob"] = gen.frame_drop_prob;
  d["agent_modality"] = gen.agent_modality == AgentModality::text ? "text" : "audio";
  d["audio_dim"] = gen.audio_dim;
  d["frames_per_token"] = {gen.frames_per_token_min, gen.frames_per_token_max};
  d["cross_ref_rate"] = gen.cross_ref_rate;
  d["lexicon_seed"] = lexicon_seed;
  d["lexicon_train_words"] = lexicon_train_words;
  d["lexicon_dev_words"] = lexicon_dev_words;
  j["data"] = d;
  ordered_json m;
  m["model_dim"] = block.model_dim;
  m["heads"] = block.heads;
  m["enc_layers"] = block.enc_layers;
  m["dec_layers"] = block.dec_layers;
  m["ffn_dim"] = block.ffn_dim;
  m["max_decode_len"] = block.max_decode_len;
  j["model"] = m;
  ordered_json t;
  t["epochs"] = train.epochs;
  t["batch_size"] = train.batch_size;
  t["lr"] = train.lr;
  t["warmup_steps"] = train.warmup_steps;
  t["context_mode"] = train.context_mode == ContextMode::oracle ? "oracle" : "scheduled";
  t["epsilon_schedule"] = train.epsilon_schedule;
  t["target_dev_jga"] = train.target_dev_jga;
  t["eval_every"] = train.eval_every;
  j["train"] = t;
  return j.dump(2);
}

uint64_t file_checksum(const std::string& path) {
  std::ifstream fs(path, std::ios::binary);
  if (!fs) throw std::runtime_error("cannot read " + path);
  Fnv64 h;
  char buf[65536];
  while (fs.read(buf, sizeof(buf)) || fs.gcount() > 0) h.update(buf, static_cast<size_t>(fs.gcount()));
  return h.digest();
}

void Manifest::save(const std::string& path) const {
  ordered_json j;
  j["tool_version"] = kToolVersion;
  j["command"] = command;
  j["seed"] = seed;
  j["config_path"] = config_path;
  j["config_checksum"] = config_checksum;
  ordered_json ji = ordered_json::object(), jo = ordered_json::object();
  for (const auto& [p, c] : inputs) ji[p] = c;
  for (const auto& [p, c] : outputs) jo[p] = c;
  j["inputs"] = ji;
  j["outputs"] = jo;
  ordered_json je = ordered_json::object();
  for (const auto& [k, v] : extra) je[k] = v;
  j["extra"] = je;
  std::ofstream fs(path, std::ios::binary | std::ios::trunc);
  if (!fs) throw std::runtime_error("cannot write " + path);
  fs << j.dump(2) << "\n";
}

Manifest Manifest::load(const std::string& path) {
  std::ifstream fs(path, std::ios::binary);
  if (!fs) throw std::runtime_error("cannot read " + path);
  nlohmann::json j = nlohmann::json::parse(fs);
  Manifest m;
  m.command = j.at("command").get<std::string>();
  m.seed = j.at("seed").get<uint64_t>();
  m.config_path = j.value("config_path", "");
  m.config_checksum = j.value("config_checksum", 0ull);
  for (const auto& [p, c] : j.at("inputs").items()) m.inputs[p] = c.get<uint64_t>();
  for (const auto& [p, c] : j.at("outputs").items()) m.outputs[p] = c.get<uint64_t>();
  if (j.contains("extra"))
    for (const auto& [k, v] : j.at("extra").items()) m.extra[k] = v.get<std::string>();
  return m;
}

void save_corpus_manifest(const std::string& dir, const ExperimentConfig& config, uint64_t seed,
                          const std::map<std::string, SlotGroup>& groups,
                          const std::map<std::string, uint64_t>& file_checksums) {
  ordered_json j;
  j["tool_version"] = kToolVersion;
  j["seed"] = seed;
  j["config"] = nlohmann::ordered_json::parse(config.to_json_string());
  ordered_json jg = ordered_json::object();
  for (const auto& [slot, group] : groups) jg[slot] = slot_group_name(group);
  j["slot_groups"] = jg;
  ordered_json jf = ordered_json::object();
  for (const auto& [p, c] : file_checksums) jf[p] = c;
  j["files"] = jf;
  std::ofstream fs(dir + "/manifest.json", std::ios::binary | std::ios::trunc);
  if (!fs) throw std::runtime_error("cannot write " + dir + "/manifest.json");
  fs << j.dump(2) << "\n";
}

std::map<std::string, SlotGroup> load_slot_groups(const std::string& dir) {
  std::ifstream fs(dir + "/manifest.json", std::ios::binary);
  if (!fs) throw std::runtime_error("cannot read " + dir + "/manifest.json");
  nlohmann::json j = nlohmann::json::parse(fs);
  std::map<std::string, SlotGroup> out;
  for (const auto& [slot, name] : j.at("slot_groups").items()) {
    std::string g = name.get<std::string>();
    if (g == "categorical") out[slot] = SlotGroup::categorical;
    else if (g == "open") out[slot] = SlotGroup::open;
    else if (g == "time") out[slot] = SlotGroup::time;
    else throw std::runtime_error("unknown slot group '" + g + "' in manifest");
  }
  return out;
}

}  // namespace sdst
