#include "sdst/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace sdst {

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

const char* noise_profile_name(NoiseProfile p) {
  return p == NoiseProfile::clean ? "clean" : "noisy";
}

NoiseParams GenConfig::effective_noise() const {
  NoiseParams def = profile == NoiseProfile::clean ? NoiseParams{0.05, 0.0, 0.0}
                                                   : NoiseParams{0.25, 0.2, 0.05};
  NoiseParams out = def;
  if (frame_noise_sigma >= 0) out.sigma = frame_noise_sigma;
  if (frame_jitter_prob >= 0) out.jitter_prob = frame_jitter_prob;
  if (frame_drop_prob >= 0) out.drop_prob = frame_drop_prob;
  return out;
}

void GenConfig::validate() const {
  if (n_dialogues < 0) throw InvalidConfig("n_dialogues must be >= 0");
  if (mean_turns < 2) throw InvalidConfig("mean_turns must be >= 2");
  if (audio_dim <= 0) throw InvalidConfig("audio_dim must be positive");
  if (frames_per_token_min < 1 || frames_per_token_max < frames_per_token_min)
    throw InvalidConfig("frames_per_token range invalid");
  NoiseParams n = effective_noise();
  if (n.sigma < 0) throw InvalidConfig("sigma must be >= 0");
  if (n.jitter_prob < 0 || n.jitter_prob > 1 || n.drop_prob < 0 || n.drop_prob > 1)
    throw InvalidConfig("probabilities must lie in [0,1]");
  if (cross_ref_rate < 0 || cross_ref_rate > 1) throw InvalidConfig("cross_ref_rate must lie in [0,1]");
}

FrameMatrix vocalize(const std::string& text, const Tokenizer& tok, const GenConfig& config, Rng& rng) {
  std::vector<std::string> names = tok.token_names(text);
  if (names.empty()) throw EmptyText("vocalize: no tokens in '" + text + "'");
  NoiseParams noise = config.effective_noise();
  FrameMatrix fm;
  fm.dim = config.audio_dim;
  for (const auto& name : names) {
    Rng base_rng = Rng::derive(config.seed, "audio-base:" + name);
    std::vector<float> base(static_cast<size_t>(config.audio_dim));
    for (auto& v : base) v = static_cast<float>(base_rng.normal());

    int repeats = rng.range_int(config.frames_per_token_min, config.frames_per_token_max);
    if (noise.jitter_prob > 0 && rng.bernoulli(noise.jitter_prob)) repeats += rng.range_int(-2, 2);
    if (repeats < 1) repeats = 1;

    int emitted = 0;
    for (int r = 0; r < repeats; ++r) {
      bool drop = noise.drop_prob > 0 && rng.bernoulli(noise.drop_prob);
      if (drop && !(r == repeats - 1 && emitted == 0)) continue;
      for (int d = 0; d < config.audio_dim; ++d) {
        double v = base[static_cast<size_t>(d)];
        if (noise.sigma > 0) v += noise.sigma * rng.normal();
        fm.data.push_back(static_cast<float>(v));
      }
      ++emitted;
    }
  }
  fm.frames = static_cast<int>(fm.data.size() / static_cast<size_t>(fm.dim));
  return fm;
}

namespace {

struct Assignment {
  enum Kind { request, overwrite, reference } kind = request;
  std::string slot_key;    // target slot
  std::string domain;      // target domain
  std::string slot_name;
  std::string value;       // empty for reference until resolved
  std::string src_domain;  // reference only
  std::string src_key;     // reference only
};

std::string draw_value(const Ontology& ont, const SlotDef& slot, Split split, Rng& rng,
                       const std::string& avoid = "") {
  for (int attempt = 0; attempt < 8; ++attempt) {
    std::string v;
    switch (slot.group) {
      case SlotGroup::categorical:
        v = slot.values[static_cast<size_t>(rng.range_int(0, static_cast<int>(slot.values.size()) - 1))];
        break;
      case SlotGroup::open: {
        const auto& lex = split == Split::train ? ont.open_train_lexicon : ont.open_dev_lexicon;
        v = lex[static_cast<size_t>(rng.range_int(0, static_cast<int>(lex.size()) - 1))];
        break;
      }
      case SlotGroup::time: {
        static const int grid[4] = {0, 15, 30, 45};
        int hour = rng.range_int(8, 21);
        int minute = grid[rng.range_int(0, 3)];
        if (split != Split::train) minute = (minute + ont.dev_time_offset_minutes) % 60;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%02d:%02d", hour, minute);
        v = buf;
        break;
      }
    }
    if (v != avoid) return v;
  }
  return avoid;  // degenerate ontology; a no-op overwrite is harmless
}

template <typename T>
void shuffle_vec(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<size_t>(rng.range_int(0, static_cast<int>(i) - 1))]);
}

Dialogue generate_dialogue(const Ontology& ont, const Tokenizer& tok, const GenConfig& config,
                           int index) {
  uint64_t dseed = mix64(mix64(config.seed) ^ mix64(static_cast<uint64_t>(index)) ^
                         fnv1a64(split_name(config.split)));
  Rng rng(dseed);
  Dialogue dlg;
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s-%05d", split_name(config.split), index);
    dlg.id = buf;
  }
  dlg.seed = dseed;

  bool plan_reference = rng.bernoulli(config.cross_ref_rate);
  std::vector<std::string> ref_names = referable_slot_names(ont);
  if (ref_names.empty()) plan_reference = false;

  double mu_users = (config.mean_turns + 1.0) / 2.0;
  int k = static_cast<int>(std::lround(rng.normal(mu_users, mu_users / 3.5)));
  int min_k = plan_reference ? 2 : 1;
  k = std::clamp(k, min_k, static_cast<int>(std::ceil(mu_users * 2.5)) + 1);

  // choose domains
  std::vector<std::string> domain_names;
  for (const auto& d : ont.domains) domain_names.push_back(d.name);
  std::string src_domain, tgt_domain, ref_slot;
  if (plan_reference) {
    ref_slot = ref_names[static_cast<size_t>(rng.range_int(0, static_cast<int>(ref_names.size()) - 1))];
    std::vector<std::string> holders;
    for (const auto* s : ont.all_slots())
      if (s->name == ref_slot && s->group == SlotGroup::categorical) holders.push_back(s->domain);
    shuffle_vec(holders, rng);
    src_domain = holders[0];
    tgt_domain = holders[1];
  }
  shuffle_vec(domain_names, rng);
  std::vector<std::string> chosen;
  if (plan_reference) {
    chosen = {src_domain, tgt_domain};
    if (k >= 6 && rng.bernoulli(0.3)) {
      for (const auto& d : domain_names)
        if (d != src_domain && d != tgt_domain) {
          chosen.push_back(d);
          break;
        }
    }
  } else {
    int n_dom = std::clamp(1 + rng.range_int(0, std::min(2, k / 3)), 1, 3);
    chosen.assign(domain_names.begin(), domain_names.begin() + n_dom);
  }

  // slot pool over chosen domains
  std::vector<const SlotDef*> pool;
  for (const auto& dname : chosen)
    for (const auto& d : ont.domains)
      if (d.name == dname)
        for (const auto& s : d.slots) pool.push_back(&s);
  shuffle_vec(pool, rng);

  std::string src_key = plan_reference ? src_domain + "-" + ref_slot : "";
  std::string tgt_key = plan_reference ? tgt_domain + "-" + ref_slot : "";
  if (plan_reference) {
    auto drop = [&pool](const std::string& key) {
      pool.erase(std::remove_if(pool.begin(), pool.end(),
                                [&key](const SlotDef* s) { return s->key() == key; }),
                 pool.end());
    };
    drop(src_key);
    drop(tgt_key);
  }

  int ref_pos = plan_reference ? rng.range_int(1, k - 1) : -1;

  std::vector<Assignment> plan;
  std::vector<const SlotDef*> assigned;  // for overwrites
  DialogueState preview;                 // tracks values for overwrite avoidance
  for (int pos = 0; pos < k; ++pos) {
    Assignment a;
    if (plan_reference && pos == 0) {
      const SlotDef* s = ont.find_slot(src_key);
      a.kind = Assignment::request;
      a.slot_key = s->key();
      a.domain = s->domain;
      a.slot_name = s->name;
      a.value = draw_value(ont, *s, config.split, rng);
      assigned.push_back(s);
    } else if (pos == ref_pos) {
      const SlotDef* s = ont.find_slot(tgt_key);
      a.kind = Assignment::reference;
      a.slot_key = s->key();
      a.domain = s->domain;
      a.slot_name = s->name;
      a.src_domain = src_domain;
      a.src_key = src_key;
    } else if (!pool.empty()) {
      const SlotDef* s = pool.back();
      pool.pop_back();
      a.kind = Assignment::request;
      a.slot_key = s->key();
      a.domain = s->domain;
      a.slot_name = s->name;
      a.value = draw_value(ont, *s, config.split, rng);
      assigned.push_back(s);
    } else {
      const SlotDef* s = assigned[static_cast<size_t>(rng.range_int(0, static_cast<int>(assigned.size()) - 1))];
      a.kind = Assignment::overwrite;
      a.slot_key = s->key();
      a.domain = s->domain;
      a.slot_name = s->name;
      const std::string* cur = preview.get(s->key());
      a.value = draw_value(ont, *s, config.split, rng, cur ? *cur : "");
    }
    if (a.kind != Assignment::reference) preview.set(a.slot_key, a.value);
    plan.push_back(a);
  }

  // render turns
  DialogueState state;
  auto pick = [&rng](const std::vector<std::string>& v) {
    return v[static_cast<size_t>(rng.range_int(0, static_cast<int>(v.size()) - 1))];
  };
  for (int pos = 0; pos < k; ++pos) {
    const Assignment& a = plan[pos];
    // agent sometimes asks for the next slot and the user answers with the
    // bare value; the slot is then only recoverable from the agent turn
    bool question_form = pos > 0 && a.kind == Assignment::request && rng.bernoulli(0.25);
    if (pos > 0) {
      Turn agent;
      agent.speaker = Speaker::agent;
      if (a.kind == Assignment::reference) {
        agent.text = Templates::agent_generic();
      } else if (question_form) {
        agent.text = render_template(pick(Templates::agent_ask()), a.domain, a.slot_name, "");
      } else {
        const Assignment& prev = plan[static_cast<size_t>(pos) - 1];
        const std::string* pv = state.get(prev.slot_key);
        agent.text = render_template(pick(Templates::agent_ack()), prev.domain, prev.slot_name,
                                     pv ? *pv : prev.value);
      }
      if (config.agent_modality == AgentModality::audio)
        agent.audio = vocalize(*agent.text, tok, config, rng);
      dlg.turns.push_back(std::move(agent));
    }
    Turn user;
    user.speaker = Speaker::user;
    std::string value = a.value;
    std::string utterance;
    switch (a.kind) {
      case Assignment::request:
        utterance = question_form
                        ? render_template(pick(Templates::short_answer()), a.domain, a.slot_name, value)
                        : render_template(pick(Templates::request()), a.domain, a.slot_name, value);
        break;
      case Assignment::overwrite:
        utterance = render_template(pick(Templates::overwrite()), a.domain, a.slot_name, value);
        break;
      case Assignment::reference: {
        const std::string* src = state.get(a.src_key);
        value = src ? *src : "";
        utterance = render_template(pick(Templates::reference()), a.domain, a.slot_name, "", a.src_domain);
        break;
      }
    }
    state.set(a.slot_key, value);
    user.text = utterance;
    user.audio = vocalize(utterance, tok, config, rng);
    user.gold_state = state;
    dlg.turns.push_back(std::move(user));
  }
  return dlg;
}

}  // namespace

Corpus generate_corpus(const Ontology& ont, const GenConfig& config) {
  config.validate();
  ont.validate();
  Tokenizer tok = Tokenizer::build(ont);
  Corpus corpus;
  corpus.reserve(static_cast<size_t>(config.n_dialogues));
  for (int i = 0; i < config.n_dialogues; ++i)
    corpus.push_back(generate_dialogue(ont, tok, config, i));
  return corpus;
}

std::string sidecar_path(const std::string& corpus_path) {
  size_t dot = corpus_path.find_last_of('.');
  size_t slash = corpus_path.find_last_of('/');
  std::string base = (dot == std::string::npos || (slash != std::string::npos && dot < slash))
                         ? corpus_path
                         : corpus_path.substr(0, dot);
  return base + ".frames";
}

namespace {

constexpr char kMagic[5] = {'S', 'D', 'S', 'T', 'A'};
constexpr uint32_t kSidecarVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::string& buf, size_t pos) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
  return v;
}

uint64_t get_u64(const std::string& buf, size_t pos) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
  return v;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
  // sidecar first so the jsonl can reference block offsets
  std::string sidecar;
  sidecar.append(kMagic, sizeof(kMagic));
  put_u32(sidecar, kSidecarVersion);
  std::vector<std::vector<uint64_t>> offsets(corpus.size());
  for (size_t di = 0; di < corpus.size(); ++di) {
    for (const auto& turn : corpus[di].turns) {
      if (!turn.audio) {
        offsets[di].push_back(UINT64_MAX);
        continue;
      }
      offsets[di].push_back(sidecar.size());
      const FrameMatrix& fm = *turn.audio;
      put_u32(sidecar, static_cast<uint32_t>(fm.frames));
      put_u32(sidecar, static_cast<uint32_t>(fm.dim));
      size_t bytes = fm.data.size() * sizeof(float);
      size_t pos = sidecar.size();
      sidecar.resize(pos + bytes);
      std::memcpy(sidecar.data() + pos, fm.data.data(), bytes);
    }
  }
  put_u64(sidecar, fnv1a64(sidecar.data(), sidecar.size()));

  std::ofstream fs(sidecar_path(path), std::ios::binary | std::ios::trunc);
  if (!fs) throw std::runtime_error("cannot write " + sidecar_path(path));
  fs.write(sidecar.data(), static_cast<std::streamsize>(sidecar.size()));
  if (!fs) throw std::runtime_error("write failed: " + sidecar_path(path));
  fs.close();

  std::ofstream js(path, std::ios::binary | std::ios::trunc);
  if (!js) throw std::runtime_error("cannot write " + path);
  for (size_t di = 0; di < corpus.size(); ++di) {
    const Dialogue& d = corpus[di];
    nlohmann::ordered_json jd;
    jd["id"] = d.id;
    jd["seed"] = d.seed;
    jd["turns"] = nlohmann::ordered_json::array();
    for (size_t ti = 0; ti < d.turns.size(); ++ti) {
      const Turn& t = d.turns[ti];
      nlohmann::ordered_json jt;
      jt["speaker"] = t.speaker == Speaker::user ? "user" : "agent";
      jt["text"] = t.text ? nlohmann::ordered_json(*t.text) : nlohmann::ordered_json(nullptr);
      if (t.audio) {
        jt["audio"] = {{"offset", offsets[di][ti]}, {"frames", t.audio->frames}, {"dim", t.audio->dim}};
      } else {
        jt["audio"] = nullptr;
      }
      jt["state"] = t.gold_state ? nlohmann::ordered_json(flatten(*t.gold_state)) : nlohmann::ordered_json(nullptr);
      jd["turns"].push_back(std::move(jt));
    }
    js << jd.dump() << "\n";
  }
  if (!js) throw std::runtime_error("write failed: " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream fs(sidecar_path(path), std::ios::binary);
  if (!fs) throw std::runtime_error("cannot read " + sidecar_path(path));
  std::stringstream ss;
  ss << fs.rdbuf();
  std::string sidecar = ss.str();
  if (sidecar.size() < sizeof(kMagic) + 4 + 8) throw ChecksumMismatch("sidecar truncated: " + sidecar_path(path));
  if (std::memcmp(sidecar.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatVersionMismatch("bad magic in " + sidecar_path(path));
  uint32_t version = get_u32(sidecar, sizeof(kMagic));
  if (version != kSidecarVersion)
    throw FormatVersionMismatch("unsupported sidecar version " + std::to_string(version));
  uint64_t declared = get_u64(sidecar, sidecar.size() - 8);
  uint64_t actual = fnv1a64(sidecar.data(), sidecar.size() - 8);
  if (declared != actual) throw ChecksumMismatch("sidecar checksum mismatch: " + sidecar_path(path));

  std::map<uint64_t, FrameMatrix> blocks;
  size_t pos = sizeof(kMagic) + 4;
  size_t end = sidecar.size() - 8;
  while (pos < end) {
    if (pos + 8 > end) throw ChecksumMismatch("sidecar block header truncated");
    uint64_t at = pos;
    FrameMatrix fm;
    fm.frames = static_cast<int>(get_u32(sidecar, pos));
    fm.dim = static_cast<int>(get_u32(sidecar, pos + 4));
    pos += 8;
    size_t count = static_cast<size_t>(fm.frames) * static_cast<size_t>(fm.dim);
    if (pos + count * sizeof(float) > end) throw ChecksumMismatch("sidecar block data truncated");
    fm.data.resize(count);
    std::memcpy(fm.data.data(), sidecar.data() + pos, count * sizeof(float));
    pos += count * sizeof(float);
    blocks.emplace(at, std::move(fm));
  }

  std::ifstream js(path, std::ios::binary);
  if (!js) throw std::runtime_error("cannot read " + path);
  Corpus corpus;
  std::string line;
  while (std::getline(js, line)) {
    if (line.empty()) continue;
    nlohmann::json jd = nlohmann::json::parse(line);
    Dialogue d;
    d.id = jd.at("id").get<std::string>();
    d.seed = jd.at("seed").get<uint64_t>();
    for (const auto& jt : jd.at("turns")) {
      Turn t;
      t.speaker = jt.at("speaker").get<std::string>() == "user" ? Speaker::user : Speaker::agent;
      if (!jt.at("text").is_null()) t.text = jt.at("text").get<std::string>();
      if (!jt.at("audio").is_null()) {
        uint64_t off = jt.at("audio").at("offset").get<uint64_t>();
        auto it = blocks.find(off);
        if (it == blocks.end()) throw std::runtime_error("audio offset not found in sidecar");
        if (it->second.frames != jt.at("audio").at("frames").get<int>() ||
            it->second.dim != jt.at("audio").at("dim").get<int>())
          throw std::runtime_error("audio block shape mismatch");
        t.audio = it->second;
      }
      if (!jt.at("state").is_null()) {
        ParseResult pr = parse_state(jt.at("state").get<std::string>());
        if (!pr.warnings.empty()) throw std::runtime_error("corrupt state string in " + d.id);
        t.gold_state = std::move(pr.state);
      }
      d.turns.push_back(std::move(t));
    }
    validate_dialogue(d);
    corpus.push_back(std::move(d));
  }
  return corpus;
}

std::vector<ContextNecessityPair> find_context_necessity_pairs(const Corpus& corpus, size_t max_pairs) {
  struct Entry {
    size_t dialogue, ordinal;
    std::string ctx, gold;
  };
  std::map<std::string, std::vector<Entry>> groups;
  for (size_t di = 0; di < corpus.size(); ++di) {
    const Dialogue& d = corpus[di];
    auto users = d.user_turn_indices();
    for (size_t u = 1; u < users.size(); ++u) {
      const Turn& user = d.turns[users[u]];
      const Turn& agent = d.turns[users[u] - 1];
      if (!user.text || !agent.text) continue;
      std::string key = *agent.text + "\x1f" + *user.text;
      groups[key].push_back({di, u + 1, flatten(*d.turns[users[u - 1]].gold_state),
                             flatten(*user.gold_state)});
    }
  }
  std::vector<ContextNecessityPair> pairs;
  for (const auto& [key, entries] : groups) {
    for (size_t j = 1; j < entries.size(); ++j) {
      const Entry& a = entries[j - 1];
      const Entry& b = entries[j];
      if (a.ctx != b.ctx && a.gold != b.gold) {
        pairs.push_back({a.dialogue, a.ordinal, b.dialogue, b.ordinal});
        if (max_pairs && pairs.size() >= max_pairs) return pairs;
      }
    }
  }
  return pairs;
}

}  // namespace sdst
