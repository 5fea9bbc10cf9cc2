#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sdst/blocks.hpp"
#include "sdst/corpus.hpp"
#include "sdst/state.hpp"
#include "sdst/tokenizer.hpp"

namespace sdst {

struct ConfigMismatch : std::runtime_error {
  explicit ConfigMismatch(const std::string& what) : std::runtime_error(what) {}
};
struct MissingGroundTruthText : std::runtime_error {
  explicit MissingGroundTruthText(const std::string& what) : std::runtime_error(what) {}
};

enum class ModelKind { e2e, asr, cascade };
const char* model_kind_name(ModelKind k);

struct PredictOutcome {
  DialogueState state;
  std::string raw;
  std::vector<std::string> warnings;
};

struct TrainMeta {
  uint64_t seed = 0;
  uint32_t epochs = 0;
  uint64_t corpus_checksum = 0;
  bool operator==(const TrainMeta&) const = default;
};

// Completely neural path: both encoders fused in embedding space, decoder
// conditioned on the fusion output.
struct E2EModel {
  nn::BlockConfig config;
  Tokenizer tokenizer;
  AgentModality agent_modality = AgentModality::text;
  nn::TextEncoder<float> text_enc;
  nn::AudioEncoder<float> audio_enc;
  nn::ConvDownsampler<float> downsampler;
  nn::FusionLayer<float> fusion;
  nn::TransformerDecoder<float> decoder;
  TrainMeta meta;

  static E2EModel init(const nn::BlockConfig& cfg, Tokenizer tok, AgentModality modality, uint64_t seed);

  void visit_params(const nn::ParamVisitor<float>& fn);
  std::vector<ag::Tensor<float>*> params();

  // [<bos_state>] + flattened context tokens (+ <sep> + agent tokens when
  // the agent turn arrives as text). The empty t=0 context encodes as the
  // single <bos_state> token.
  std::vector<int> context_ids(const DialogueState& context, const Turn* agent_turn) const;

  // Turn-audio assembly: agent frames precede user frames in audio mode.
  FrameMatrix turn_frames(const Turn* agent_turn, const Turn& user_turn) const;

  // h = fuse(encode_text(ids), conv_downsample(encode_audio(frames)))
  ag::Tensor<float> encode(const std::vector<int>& ctx_ids, const FrameMatrix& frames) const;
};

PredictOutcome e2e_predict(const E2EModel& model, const DialogueState& context,
                           const Turn* agent_turn, const Turn& user_turn);

// ASR (audio encoder + two linear layers + CTC) feeding a text NLU
// encoder-decoder over "context <sep> agent <sep> user".
struct CascadeModel {
  nn::BlockConfig config;
  Tokenizer tokenizer;
  AgentModality agent_modality = AgentModality::text;
  nn::AudioEncoder<float> asr_enc;
  nn::Linear<float> asr_head1;  // d -> d
  nn::Linear<float> asr_head2;  // d -> vocab (blank = id 0)
  nn::TextEncoder<float> nlu_enc;
  nn::TransformerDecoder<float> nlu_dec;
  TrainMeta meta;

  static CascadeModel init(const nn::BlockConfig& cfg, Tokenizer tok, AgentModality modality, uint64_t seed);
  // Fresh NLU parameters (new seed) on top of an already-trained ASR.
  void reinit_nlu(uint64_t seed);

  void visit_asr_params(const nn::ParamVisitor<float>& fn);
  void visit_nlu_params(const nn::ParamVisitor<float>& fn);
  void visit_params(const nn::ParamVisitor<float>& fn);
  std::vector<ag::Tensor<float>*> asr_params();
  std::vector<ag::Tensor<float>*> nlu_params();

  // Frame-level token logits for CTC (graph-recording; used in training).
  ag::Tensor<float> asr_logits(const FrameMatrix& frames) const;

  std::vector<int> nlu_input_ids(const DialogueState& context, const std::string& agent_text,
                                 const std::string& user_text) const;
};

enum class CascadeMode { asr, ground_truth_text };

std::string asr_transcribe(const CascadeModel& model, const FrameMatrix& frames);

PredictOutcome cascade_predict(const CascadeModel& model, const DialogueState& context,
                               const Turn* agent_turn, const Turn& user_turn, CascadeMode mode);

// Checkpoint file: magic "MDST", version, kind/config/meta block, tokenizer
// block, named tensors, trailing 64-bit checksum.
void save_checkpoint(const E2EModel& model, const std::string& path);
void save_checkpoint(const CascadeModel& model, const std::string& path, ModelKind kind);

struct LoadedModel {
  ModelKind kind = ModelKind::e2e;
  std::optional<E2EModel> e2e;
  std::optional<CascadeModel> cascade;  // kind asr: NLU params are untrained

  E2EModel& as_e2e() {
    if (kind != ModelKind::e2e || !e2e)
      throw ConfigMismatch(std::string("checkpoint holds a ") + model_kind_name(kind) + " model, not e2e");
    return *e2e;
  }
  CascadeModel& as_cascade() {
    if (kind != ModelKind::cascade || !cascade)
      throw ConfigMismatch(std::string("checkpoint holds a ") + model_kind_name(kind) +
                           " model, not a full cascade");
    return *cascade;
  }
};

LoadedModel load_checkpoint(const std::string& path);

}  // namespace sdst
