#include "sdst/models.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace sdst {

const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::e2e: return "e2e";
    case ModelKind::asr: return "asr";
    case ModelKind::cascade: return "cascade";
  }
  return "?";
}

E2EModel E2EModel::init(const nn::BlockConfig& cfg, Tokenizer tok, AgentModality modality, uint64_t seed) {
  cfg.validate();
  if (cfg.vocab_size != tok.vocab_size()) throw ConfigMismatch("vocab size does not match tokenizer");
  Rng rng = Rng::derive(seed, "e2e-init");
  E2EModel m{cfg,
             std::move(tok),
             modality,
             nn::TextEncoder<float>(cfg, rng),
             nn::AudioEncoder<float>(cfg, rng),
             nn::ConvDownsampler<float>(cfg, rng),
             nn::FusionLayer<float>(cfg, rng),
             nn::TransformerDecoder<float>(cfg, rng),
             {}};
  m.meta.seed = seed;
  return m;
}

void E2EModel::visit_params(const nn::ParamVisitor<float>& fn) {
  text_enc.visit("text_enc", fn);
  audio_enc.visit("audio_enc", fn);
  downsampler.visit("downsampler", fn);
  fusion.visit("fusion", fn);
  decoder.visit("decoder", fn);
}

std::vector<ag::Tensor<float>*> E2EModel::params() {
  std::vector<ag::Tensor<float>*> out;
  visit_params([&out](const std::string&, ag::Tensor<float>& t) { out.push_back(&t); });
  return out;
}

std::vector<int> E2EModel::context_ids(const DialogueState& context, const Turn* agent_turn) const {
  std::vector<int> ids = {Tokenizer::kBosState};
  if (!context.empty()) {
    std::vector<int> ctx = tokenizer.encode(flatten(context));
    ids.insert(ids.end(), ctx.begin(), ctx.end());
  }
  if (agent_modality == AgentModality::text && agent_turn && agent_turn->text && !agent_turn->text->empty()) {
    ids.push_back(Tokenizer::kSep);
    std::vector<int> at = tokenizer.encode(*agent_turn->text);
    ids.insert(ids.end(), at.begin(), at.end());
  }
  return ids;
}

FrameMatrix E2EModel::turn_frames(const Turn* agent_turn, const Turn& user_turn) const {
  if (!user_turn.audio) throw std::invalid_argument("e2e: user turn has no audio");
  if (agent_modality == AgentModality::audio && agent_turn && agent_turn->audio) {
    const FrameMatrix& a = *agent_turn->audio;
    const FrameMatrix& u = *user_turn.audio;
    if (a.dim != u.dim) throw nn::DimMismatch("agent/user frame dim mismatch");
    FrameMatrix out;
    out.dim = a.dim;
    out.frames = a.frames + u.frames;
    out.data = a.data;
    out.data.insert(out.data.end(), u.data.begin(), u.data.end());
    return out;
  }
  return *user_turn.audio;
}

ag::Tensor<float> E2EModel::encode(const std::vector<int>& ctx_ids, const FrameMatrix& frames) const {
  ag::Tensor<float> h_state = text_enc.forward(ctx_ids);
  ag::Tensor<float> h_turns = downsampler.forward(audio_enc.forward(frames));
  return fusion.forward(h_state, h_turns);
}

PredictOutcome e2e_predict(const E2EModel& model, const DialogueState& context,
                           const Turn* agent_turn, const Turn& user_turn) {
  ag::NoGradGuard no_grad;
  std::vector<int> ids = model.context_ids(context, agent_turn);
  FrameMatrix frames = model.turn_frames(agent_turn, user_turn);
  ag::Tensor<float> h = model.encode(ids, frames);
  nn::DecodeResult dr = model.decoder.decode_greedy(h, Tokenizer::kBos, Tokenizer::kEos,
                                                    model.config.max_decode_len);
  std::string raw = model.tokenizer.decode(dr.ids);
  ParseResult pr = parse_state(raw);
  return {std::move(pr.state), std::move(raw), std::move(pr.warnings)};
}

CascadeModel CascadeModel::init(const nn::BlockConfig& cfg, Tokenizer tok, AgentModality modality, uint64_t seed) {
  cfg.validate();
  if (cfg.vocab_size != tok.vocab_size()) throw ConfigMismatch("vocab size does not match tokenizer");
  Rng rng = Rng::derive(seed, "cascade-init");
  CascadeModel m{cfg,
                 std::move(tok),
                 modality,
                 nn::AudioEncoder<float>(cfg, rng),
                 nn::Linear<float>(cfg.model_dim, cfg.model_dim, rng),
                 nn::Linear<float>(cfg.model_dim, cfg.vocab_size, rng),
                 nn::TextEncoder<float>(cfg, rng),
                 nn::TransformerDecoder<float>(cfg, rng),
                 {}};
  m.meta.seed = seed;
  return m;
}

void CascadeModel::reinit_nlu(uint64_t seed) {
  Rng rng = Rng::derive(seed, "cascade-nlu-init");
  nlu_enc = nn::TextEncoder<float>(config, rng);
  nlu_dec = nn::TransformerDecoder<float>(config, rng);
}

void CascadeModel::visit_asr_params(const nn::ParamVisitor<float>& fn) {
  asr_enc.visit("asr.enc", fn);
  asr_head1.visit("asr.head1", fn);
  asr_head2.visit("asr.head2", fn);
}

void CascadeModel::visit_nlu_params(const nn::ParamVisitor<float>& fn) {
  nlu_enc.visit("nlu.enc", fn);
  nlu_dec.visit("nlu.dec", fn);
}

void CascadeModel::visit_params(const nn::ParamVisitor<float>& fn) {
  visit_asr_params(fn);
  visit_nlu_params(fn);
}

std::vector<ag::Tensor<float>*> CascadeModel::asr_params() {
  std::vector<ag::Tensor<float>*> out;
  visit_asr_params([&out](const std::string&, ag::Tensor<float>& t) { out.push_back(&t); });
  return out;
}

std::vector<ag::Tensor<float>*> CascadeModel::nlu_params() {
  std::vector<ag::Tensor<float>*> out;
  visit_nlu_params([&out](const std::string&, ag::Tensor<float>& t) { out.push_back(&t); });
  return out;
}

ag::Tensor<float> CascadeModel::asr_logits(const FrameMatrix& frames) const {
  ag::Tensor<float> enc = asr_enc.forward(frames);
  return asr_head2.forward(ag::gelu(asr_head1.forward(enc)));
}

std::string asr_transcribe(const CascadeModel& model, const FrameMatrix& frames) {
  ag::NoGradGuard no_grad;
  ag::Tensor<float> logits = model.asr_logits(frames);
  return model.tokenizer.decode(ag::ctc_greedy_decode(logits));
}

std::vector<int> CascadeModel::nlu_input_ids(const DialogueState& context, const std::string& agent_text,
                                             const std::string& user_text) const {
  std::vector<int> ids = tokenizer.encode(flatten(context));
  ids.push_back(Tokenizer::kSep);
  std::vector<int> at = tokenizer.encode(agent_text);
  ids.insert(ids.end(), at.begin(), at.end());
  ids.push_back(Tokenizer::kSep);
  std::vector<int> ut = tokenizer.encode(user_text);
  ids.insert(ids.end(), ut.begin(), ut.end());
  return ids;
}

PredictOutcome cascade_predict(const CascadeModel& model, const DialogueState& context,
                               const Turn* agent_turn, const Turn& user_turn, CascadeMode mode) {
  ag::NoGradGuard no_grad;
  std::string agent_text, user_text;
  if (mode == CascadeMode::ground_truth_text) {
    if (!user_turn.text) throw MissingGroundTruthText("user turn has no ground-truth text");
    user_text = *user_turn.text;
    if (agent_turn && agent_turn->text) agent_text = *agent_turn->text;
  } else {
    if (!user_turn.audio) throw std::invalid_argument("cascade asr mode: user turn has no audio");
    user_text = asr_transcribe(model, *user_turn.audio);
    if (agent_turn) {
      if (model.agent_modality == AgentModality::audio && agent_turn->audio)
        agent_text = asr_transcribe(model, *agent_turn->audio);
      else if (agent_turn->text)
        agent_text = *agent_turn->text;
    }
  }
  std::vector<int> ids = model.nlu_input_ids(context, agent_text, user_text);
  ag::Tensor<float> memory = model.nlu_enc.forward(ids);
  nn::DecodeResult dr = model.nlu_dec.decode_greedy(memory, Tokenizer::kBos, Tokenizer::kEos,
                                                    model.config.max_decode_len);
  std::string raw = model.tokenizer.decode(dr.ids);
  ParseResult pr = parse_state(raw);
  return {std::move(pr.state), std::move(raw), std::move(pr.warnings)};
}

// ---- checkpoint io ----

namespace {

constexpr char kMagic[4] = {'M', 'D', 'S', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

void put_u16(std::string& buf, uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  void need(size_t n) const {
    if (pos + n > buf.size()) throw ChecksumMismatch("checkpoint truncated");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(static_cast<unsigned char>(buf[pos]) |
                                       (static_cast<unsigned char>(buf[pos + 1]) << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
    pos += 8;
    return v;
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf[pos++]);
  }
  std::string str(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

void append_config(std::string& buf, ModelKind kind, const nn::BlockConfig& cfg,
                   AgentModality modality, const TrainMeta& meta) {
  buf.push_back(static_cast<char>(kind));
  buf.push_back(static_cast<char>(modality));
  put_u32(buf, static_cast<uint32_t>(cfg.model_dim));
  put_u32(buf, static_cast<uint32_t>(cfg.heads));
  put_u32(buf, static_cast<uint32_t>(cfg.enc_layers));
  put_u32(buf, static_cast<uint32_t>(cfg.dec_layers));
  put_u32(buf, static_cast<uint32_t>(cfg.ffn_dim));
  put_u32(buf, static_cast<uint32_t>(cfg.vocab_size));
  put_u32(buf, static_cast<uint32_t>(cfg.max_decode_len));
  put_u32(buf, static_cast<uint32_t>(cfg.audio_dim));
  put_u64(buf, meta.seed);
  put_u32(buf, meta.epochs);
  put_u64(buf, meta.corpus_checksum);
}

void append_tokenizer(std::string& buf, const Tokenizer& tok) {
  put_u32(buf, static_cast<uint32_t>(tok.tokens().size()));
  for (const auto& t : tok.tokens()) {
    put_u16(buf, static_cast<uint16_t>(t.size()));
    buf += t;
  }
}

void append_tensors(std::string& buf, std::vector<std::pair<std::string, ag::Tensor<float>*>>& named) {
  put_u32(buf, static_cast<uint32_t>(named.size()));
  for (auto& [name, t] : named) {
    put_u16(buf, static_cast<uint16_t>(name.size()));
    buf += name;
    buf.push_back(static_cast<char>(t->rank()));
    for (int i = 0; i < t->rank(); ++i) put_u32(buf, static_cast<uint32_t>(t->dim(i)));
    size_t pos = buf.size();
    size_t bytes = t->size() * sizeof(float);
    buf.resize(pos + bytes);
    std::memcpy(buf.data() + pos, t->values().data(), bytes);
  }
}

void write_file(const std::string& path, std::string& buf) {
  put_u64(buf, fnv1a64(buf.data(), buf.size()));
  std::ofstream fs(path, std::ios::binary | std::ios::trunc);
  if (!fs) throw std::runtime_error("cannot write " + path);
  fs.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!fs) throw std::runtime_error("write failed: " + path);
}

template <class Visit>
std::vector<std::pair<std::string, ag::Tensor<float>*>> collect(Visit&& visit) {
  std::vector<std::pair<std::string, ag::Tensor<float>*>> named;
  visit([&named](const std::string& name, ag::Tensor<float>& t) { named.push_back({name, &t}); });
  return named;
}

}  // namespace

void save_checkpoint(const E2EModel& model, const std::string& path) {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put_u32(buf, kCheckpointVersion);
  append_config(buf, ModelKind::e2e, model.config, model.agent_modality, model.meta);
  append_tokenizer(buf, model.tokenizer);
  auto named = collect([&model](const nn::ParamVisitor<float>& fn) {
    const_cast<E2EModel&>(model).visit_params(fn);
  });
  append_tensors(buf, named);
  write_file(path, buf);
}

void save_checkpoint(const CascadeModel& model, const std::string& path, ModelKind kind) {
  if (kind != ModelKind::asr && kind != ModelKind::cascade)
    throw ConfigMismatch("cascade checkpoint kind must be asr or cascade");
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put_u32(buf, kCheckpointVersion);
  append_config(buf, kind, model.config, model.agent_modality, model.meta);
  append_tokenizer(buf, model.tokenizer);
  auto& m = const_cast<CascadeModel&>(model);
  auto named = collect([&m, kind](const nn::ParamVisitor<float>& fn) {
    if (kind == ModelKind::asr) m.visit_asr_params(fn);
    else m.visit_params(fn);
  });
  append_tensors(buf, named);
  write_file(path, buf);
}

LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream fs(path, std::ios::binary);
  if (!fs) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << fs.rdbuf();
  std::string buf = ss.str();
  if (buf.size() < sizeof(kMagic) + 4 + 8) throw ChecksumMismatch("checkpoint truncated: " + path);
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatVersionMismatch("bad checkpoint magic in " + path);
  uint64_t declared = 0;
  for (int i = 0; i < 8; ++i)
    declared |= static_cast<uint64_t>(static_cast<unsigned char>(buf[buf.size() - 8 + static_cast<size_t>(i)])) << (8 * i);
  if (declared != fnv1a64(buf.data(), buf.size() - 8))
    throw ChecksumMismatch("checkpoint checksum mismatch: " + path);

  Reader r{buf, sizeof(kMagic)};
  uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatVersionMismatch("unsupported checkpoint version " + std::to_string(version));
  ModelKind kind = static_cast<ModelKind>(r.u8());
  AgentModality modality = static_cast<AgentModality>(r.u8());
  nn::BlockConfig cfg;
  cfg.model_dim = static_cast<int>(r.u32());
  cfg.heads = static_cast<int>(r.u32());
  cfg.enc_layers = static_cast<int>(r.u32());
  cfg.dec_layers = static_cast<int>(r.u32());
  cfg.ffn_dim = static_cast<int>(r.u32());
  cfg.vocab_size = static_cast<int>(r.u32());
  cfg.max_decode_len = static_cast<int>(r.u32());
  cfg.audio_dim = static_cast<int>(r.u32());
  TrainMeta meta;
  meta.seed = r.u64();
  meta.epochs = r.u32();
  meta.corpus_checksum = r.u64();

  uint32_t n_tokens = r.u32();
  std::vector<std::string> tokens;
  tokens.reserve(n_tokens);
  for (uint32_t i = 0; i < n_tokens; ++i) {
    uint16_t len = r.u16();
    tokens.push_back(r.str(len));
  }
  Tokenizer tok = Tokenizer::from_tokens(std::move(tokens));

  std::map<std::string, std::pair<ag::Shape, std::vector<float>>> tensors;
  uint32_t n_tensors = r.u32();
  for (uint32_t i = 0; i < n_tensors; ++i) {
    uint16_t nlen = r.u16();
    std::string name = r.str(nlen);
    uint8_t rank = r.u8();
    ag::Shape shape;
    for (uint8_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.u32()));
    size_t count = ag::numel(shape);
    r.need(count * sizeof(float));
    std::vector<float> vals(count);
    std::memcpy(vals.data(), buf.data() + r.pos, count * sizeof(float));
    r.pos += count * sizeof(float);
    tensors[name] = {std::move(shape), std::move(vals)};
  }

  auto apply = [&tensors, &path](const std::string& name, ag::Tensor<float>& t) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigMismatch("checkpoint " + path + " missing tensor " + name);
    if (it->second.first != t.shape()) throw ConfigMismatch("checkpoint tensor shape mismatch: " + name);
    t.values() = it->second.second;
    tensors.erase(it);
  };

  LoadedModel out;
  out.kind = kind;
  if (kind == ModelKind::e2e) {
    E2EModel m = E2EModel::init(cfg, tok, modality, meta.seed);
    m.meta = meta;
    m.visit_params(apply);
    if (!tensors.empty()) throw ConfigMismatch("checkpoint has unexpected tensors");
    out.e2e = std::move(m);
  } else {
    CascadeModel m = CascadeModel::init(cfg, tok, modality, meta.seed);
    m.meta = meta;
    if (kind == ModelKind::asr) m.visit_asr_params(apply);
    else m.visit_params(apply);
    if (!tensors.empty()) throw ConfigMismatch("checkpoint has unexpected tensors");
    out.cascade = std::move(m);
  }
  return out;
}

}  // namespace sdst
