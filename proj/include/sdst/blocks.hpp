#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sdst/ctc.hpp"
#include "sdst/state.hpp"
#include "sdst/tensor.hpp"

namespace sdst::nn {

using ag::Tensor;

struct DimMismatch : std::runtime_error {
  explicit DimMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct BlockConfig {
  int model_dim = 64;
  int heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int ffn_dim = 128;
  int vocab_size = 0;
  int max_decode_len = 96;
  int audio_dim = 16;

  void validate() const {
    if (model_dim < 1 || heads < 1 || enc_layers < 1 || dec_layers < 1 || ffn_dim < 1 ||
        vocab_size < 1 || max_decode_len < 1 || audio_dim < 1)
      throw DimMismatch("block config: all counts must be >= 1");
    if (model_dim % heads != 0) throw DimMismatch("block config: model_dim must divide by heads");
  }
  bool operator==(const BlockConfig&) const = default;
};

template <class S>
using ParamVisitor = std::function<void(const std::string&, Tensor<S>&)>;

// Sinusoidal positional encodings, returned as a constant (no-grad) tensor.
template <class S>
Tensor<S> sinusoidal_pe(int len, int dim) {
  std::vector<S> v(static_cast<size_t>(len) * dim);
  for (int pos = 0; pos < len; ++pos)
    for (int i = 0; i < dim; ++i) {
      double exponent = static_cast<double>(2 * (i / 2)) / dim;
      double angle = pos / std::pow(10000.0, exponent);
      v[static_cast<size_t>(pos) * dim + i] = static_cast<S>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return Tensor<S>({len, dim}, std::move(v));
}

template <class S>
struct Linear {
  Tensor<S> w, b;

  Linear() = default;
  Linear(int in, int out, Rng& rng)
      : w(Tensor<S>::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)), true)),
        b(Tensor<S>::zeros({out}, true)) {}

  Tensor<S> forward(const Tensor<S>& x) const { return ag::add_row(ag::matmul(x, w), b); }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + ".w", w);
    fn(prefix + ".b", b);
  }
};

template <class S>
struct LayerNorm {
  Tensor<S> gain, bias;

  LayerNorm() = default;
  explicit LayerNorm(int dim)
      : gain(Tensor<S>::full({dim}, S(1), true)), bias(Tensor<S>::zeros({dim}, true)) {}

  Tensor<S> forward(const Tensor<S>& x) const { return ag::layer_norm(x, gain, bias); }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + ".gain", gain);
    fn(prefix + ".bias", bias);
  }
};

template <class S>
struct MultiHeadAttention {
  int heads = 1;
  Linear<S> wq, wk, wv, wo;

  MultiHeadAttention() = default;
  MultiHeadAttention(int dim, int n_heads, Rng& rng)
      : heads(n_heads), wq(dim, dim, rng), wk(dim, dim, rng), wv(dim, dim, rng), wo(dim, dim, rng) {}

  // mask: optional additive [Lq, Lkv] tensor (use -1e9 for blocked slots)
  Tensor<S> forward(const Tensor<S>& query_in, const Tensor<S>& kv_in, const Tensor<S>* mask = nullptr) const {
    int d = query_in.dim(1);
    if (kv_in.dim(1) != d) throw DimMismatch("attention: query/kv width mismatch");
    int dh = d / heads;
    Tensor<S> q = wq.forward(query_in);
    Tensor<S> k = wk.forward(kv_in);
    Tensor<S> v = wv.forward(kv_in);
    Tensor<S> merged;
    for (int h = 0; h < heads; ++h) {
      Tensor<S> qh = heads == 1 ? q : ag::slice(q, 1, h * dh, dh);
      Tensor<S> kh = heads == 1 ? k : ag::slice(k, 1, h * dh, dh);
      Tensor<S> vh = heads == 1 ? v : ag::slice(v, 1, h * dh, dh);
      Tensor<S> scores = ag::scale(ag::matmul(qh, ag::transpose(kh)), static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
      if (mask) scores = ag::add(scores, *mask);
      Tensor<S> weights = ag::softmax(scores, 1);
      Tensor<S> oh = ag::matmul(weights, vh);
      merged = h == 0 ? oh : ag::concat(merged, oh, 1);
    }
    return wo.forward(merged);
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    wq.visit(prefix + ".wq", fn);
    wk.visit(prefix + ".wk", fn);
    wv.visit(prefix + ".wv", fn);
    wo.visit(prefix + ".wo", fn);
  }
};

template <class S>
struct FeedForward {
  Linear<S> up, down;

  FeedForward() = default;
  FeedForward(int dim, int hidden, Rng& rng) : up(dim, hidden, rng), down(hidden, dim, rng) {}

  Tensor<S> forward(const Tensor<S>& x) const { return down.forward(ag::gelu(up.forward(x))); }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    up.visit(prefix + ".up", fn);
    down.visit(prefix + ".down", fn);
  }
};

// Pre-norm encoder layer: x += attn(ln1(x)); x += ffn(ln2(x)).
template <class S>
struct EncoderLayer {
  MultiHeadAttention<S> attn;
  FeedForward<S> ffn;
  LayerNorm<S> ln1, ln2;

  EncoderLayer() = default;
  EncoderLayer(const BlockConfig& cfg, Rng& rng)
      : attn(cfg.model_dim, cfg.heads, rng), ffn(cfg.model_dim, cfg.ffn_dim, rng),
        ln1(cfg.model_dim), ln2(cfg.model_dim) {}

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> h = ln1.forward(x);
    Tensor<S> y = ag::add(x, attn.forward(h, h));
    return ag::add(y, ffn.forward(ln2.forward(y)));
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    attn.visit(prefix + ".attn", fn);
    ffn.visit(prefix + ".ffn", fn);
    ln1.visit(prefix + ".ln1", fn);
    ln2.visit(prefix + ".ln2", fn);
  }
};

template <class S>
struct TransformerEncoder {
  std::vector<EncoderLayer<S>> layers;
  LayerNorm<S> ln_final;

  TransformerEncoder() = default;
  TransformerEncoder(int n_layers, const BlockConfig& cfg, Rng& rng) : ln_final(cfg.model_dim) {
    for (int i = 0; i < n_layers; ++i) layers.emplace_back(cfg, rng);
  }

  Tensor<S> forward(Tensor<S> x) const {
    for (const auto& layer : layers) x = layer.forward(x);
    return ln_final.forward(x);
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    for (size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
    ln_final.visit(prefix + ".ln_final", fn);
  }
};

// Token embedding + positional encodings + encoder stack.
template <class S>
struct TextEncoder {
  Tensor<S> emb;  // [vocab, d]
  TransformerEncoder<S> enc;

  TextEncoder() = default;
  TextEncoder(const BlockConfig& cfg, Rng& rng)
      : emb(Tensor<S>::randn({cfg.vocab_size, cfg.model_dim}, rng,
                             1.0 / std::sqrt(static_cast<double>(cfg.model_dim)), true)),
        enc(cfg.enc_layers, cfg, rng) {}

  Tensor<S> forward(const std::vector<int>& ids) const {
    if (ids.empty()) throw DimMismatch("encode_text: empty token sequence");
    Tensor<S> x = ag::embedding(emb, ids);
    x = ag::add(x, sinusoidal_pe<S>(x.dim(0), x.dim(1)));
    return enc.forward(x);
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + ".emb", emb);
    enc.visit(prefix + ".enc", fn);
  }
};

// Linear input projection audio_dim -> d, then encoder stack; length
// preserved. Positional encodings are optional: a CTC frame classifier
// wants position-equivariant features, the fusion path wants order.
template <class S>
struct AudioEncoder {
  Linear<S> in_proj;
  TransformerEncoder<S> enc;
  bool positional = true;

  AudioEncoder() = default;
  AudioEncoder(const BlockConfig& cfg, Rng& rng, bool use_positional = true)
      : in_proj(cfg.audio_dim, cfg.model_dim, rng), enc(cfg.enc_layers, cfg, rng),
        positional(use_positional) {}

  Tensor<S> forward(const FrameMatrix& frames) const {
    if (frames.frames < 1) throw DimMismatch("encode_audio: need at least one frame");
    if (frames.dim != in_proj.w.dim(0))
      throw DimMismatch("encode_audio: frame dim " + std::to_string(frames.dim) + " != audio_dim " +
                        std::to_string(in_proj.w.dim(0)));
    std::vector<S> data(frames.data.size());
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<S>(frames.data[i]);
    Tensor<S> x({frames.frames, frames.dim}, std::move(data));
    x = in_proj.forward(x);
    if (positional) x = ag::add(x, sinusoidal_pe<S>(x.dim(0), x.dim(1)));
    return enc.forward(x);
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    in_proj.visit(prefix + ".in_proj", fn);
    enc.visit(prefix + ".enc", fn);
  }
};

// Two conv1d layers (stride 3, kernel 9, padding 4) with a nonlinearity
// between them; sequence length goes L -> ceil(L/3) -> ceil(ceil(L/3)/3).
template <class S>
struct ConvDownsampler {
  static constexpr int kStride = 3;
  static constexpr int kKernel = 9;
  static constexpr int kPadding = 4;
  Tensor<S> w1, b1, w2, b2;

  ConvDownsampler() = default;
  ConvDownsampler(const BlockConfig& cfg, Rng& rng)
      : w1(Tensor<S>::randn({cfg.model_dim, kKernel, cfg.model_dim}, rng,
                            1.0 / std::sqrt(static_cast<double>(kKernel * cfg.model_dim)), true)),
        b1(Tensor<S>::zeros({cfg.model_dim}, true)),
        w2(Tensor<S>::randn({cfg.model_dim, kKernel, cfg.model_dim}, rng,
                            1.0 / std::sqrt(static_cast<double>(kKernel * cfg.model_dim)), true)),
        b2(Tensor<S>::zeros({cfg.model_dim}, true)) {}

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> h = ag::gelu(ag::conv1d(x, w1, b1, kStride, kPadding));
    return ag::conv1d(h, w2, b2, kStride, kPadding);
  }

  static int output_length(int len) {
    auto once = [](int l) { return (l + 2 * kPadding - kKernel) / kStride + 1; };
    return once(once(len));
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
  }
};

struct FusionOptions {
  bool use_positional = true;
  bool use_segment = true;
  bool residual = true;
  bool norm = true;
};

// Concatenate both encodings along the sequence axis and run one
// multi-head self-attention layer over the result. Fresh positional
// encodings plus a learned segment embedding mark which positions came
// from the state encoder and which from the turn encoder.
template <class S>
struct FusionLayer {
  MultiHeadAttention<S> attn;
  LayerNorm<S> ln;
  Tensor<S> segment;  // [2, d]
  FusionOptions options;

  FusionLayer() = default;
  FusionLayer(const BlockConfig& cfg, Rng& rng)
      : attn(cfg.model_dim, cfg.heads, rng), ln(cfg.model_dim),
        segment(Tensor<S>::randn({2, cfg.model_dim}, rng,
                                 1.0 / std::sqrt(static_cast<double>(cfg.model_dim)), true)) {}

  Tensor<S> forward(const Tensor<S>& h_state, const Tensor<S>& h_turns) const {
    if (h_state.dim(1) != h_turns.dim(1)) throw DimMismatch("fuse: width mismatch");
    Tensor<S> x = ag::concat(h_state, h_turns, 0);
    if (options.use_positional) x = ag::add(x, sinusoidal_pe<S>(x.dim(0), x.dim(1)));
    if (options.use_segment) {
      std::vector<int> seg(static_cast<size_t>(x.dim(0)), 1);
      for (int i = 0; i < h_state.dim(0); ++i) seg[static_cast<size_t>(i)] = 0;
      x = ag::add(x, ag::embedding(segment, seg));
    }
    Tensor<S> a = attn.forward(x, x);
    Tensor<S> out = options.residual ? ag::add(x, a) : a;
    return options.norm ? ln.forward(out) : out;
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    attn.visit(prefix + ".attn", fn);
    ln.visit(prefix + ".ln", fn);
    fn(prefix + ".segment", segment);
  }
};

// Pre-norm decoder layer: causal self-attention, cross-attention over the
// encoder memory, feed-forward.
template <class S>
struct DecoderLayer {
  MultiHeadAttention<S> self_attn, cross_attn;
  FeedForward<S> ffn;
  LayerNorm<S> ln1, ln2, ln3;

  DecoderLayer() = default;
  DecoderLayer(const BlockConfig& cfg, Rng& rng)
      : self_attn(cfg.model_dim, cfg.heads, rng), cross_attn(cfg.model_dim, cfg.heads, rng),
        ffn(cfg.model_dim, cfg.ffn_dim, rng), ln1(cfg.model_dim), ln2(cfg.model_dim), ln3(cfg.model_dim) {}

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    self_attn.visit(prefix + ".self_attn", fn);
    cross_attn.visit(prefix + ".cross_attn", fn);
    ffn.visit(prefix + ".ffn", fn);
    ln1.visit(prefix + ".ln1", fn);
    ln2.visit(prefix + ".ln2", fn);
    ln3.visit(prefix + ".ln3", fn);
  }
};

struct DecodeResult {
  std::vector<int> ids;
  bool truncated = false;
};

template <class S>
struct TransformerDecoder {
  Tensor<S> emb;  // [vocab, d]
  std::vector<DecoderLayer<S>> layers;
  LayerNorm<S> ln_final;
  Linear<S> out;

  TransformerDecoder() = default;
  TransformerDecoder(const BlockConfig& cfg, Rng& rng)
      : emb(Tensor<S>::randn({cfg.vocab_size, cfg.model_dim}, rng,
                             1.0 / std::sqrt(static_cast<double>(cfg.model_dim)), true)),
        ln_final(cfg.model_dim), out(cfg.model_dim, cfg.vocab_size, rng) {
    for (int i = 0; i < cfg.dec_layers; ++i) layers.emplace_back(cfg, rng);
  }

  // Teacher-forced pass: logits for every position of `input_ids` with a
  // causal self-attention mask.
  Tensor<S> forward_train(const std::vector<int>& input_ids, const Tensor<S>& memory) const {
    int len = static_cast<int>(input_ids.size());
    Tensor<S> x = ag::add(ag::embedding(emb, input_ids), sinusoidal_pe<S>(len, emb.dim(1)));
    Tensor<S> mask = causal_mask(len);
    for (const auto& layer : layers) {
      Tensor<S> h = layer.ln1.forward(x);
      x = ag::add(x, layer.self_attn.forward(h, h, &mask));
      x = ag::add(x, layer.cross_attn.forward(layer.ln2.forward(x), memory));
      x = ag::add(x, layer.ffn.forward(layer.ln3.forward(x)));
    }
    return out.forward(ln_final.forward(x));
  }

  // Greedy autoregressive decode with per-layer KV growth; exact ties pick
  // the lowest token id. Stops on `eos` or after max_len tokens (the
  // truncated flag reports which).
  DecodeResult decode_greedy(const Tensor<S>& memory, int bos, int eos, int max_len) const {
    if (memory.dim(0) < 1) throw DimMismatch("decode_greedy: empty memory");
    ag::NoGradGuard no_grad;
    DecodeResult result;
    size_t n_layers = layers.size();
    std::vector<Tensor<S>> k_cache(n_layers), v_cache(n_layers);
    int step = 0;
    int token = bos;
    while (step < max_len) {
      std::vector<int> one = {token};
      Tensor<S> x = ag::add(ag::embedding(emb, one), pe_row(step));
      for (size_t li = 0; li < n_layers; ++li) {
        const DecoderLayer<S>& layer = layers[li];
        Tensor<S> h = layer.ln1.forward(x);
        Tensor<S> k_new = layer.self_attn.wk.forward(h);
        Tensor<S> v_new = layer.self_attn.wv.forward(h);
        k_cache[li] = step == 0 ? k_new : ag::concat(k_cache[li], k_new, 0);
        v_cache[li] = step == 0 ? v_new : ag::concat(v_cache[li], v_new, 0);
        x = ag::add(x, attend_row(layer.self_attn, h, k_cache[li], v_cache[li]));
        x = ag::add(x, layer.cross_attn.forward(layer.ln2.forward(x), memory));
        x = ag::add(x, layer.ffn.forward(layer.ln3.forward(x)));
      }
      Tensor<S> logits = out.forward(ln_final.forward(x));
      int next = ag::argmax_row(logits.values().data(), logits.dim(1));
      if (next == eos) return result;
      result.ids.push_back(next);
      token = next;
      ++step;
    }
    result.truncated = true;
    return result;
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + ".emb", emb);
    for (size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
    ln_final.visit(prefix + ".ln_final", fn);
    out.visit(prefix + ".out", fn);
  }

  static Tensor<S> causal_mask(int len) {
    std::vector<S> m(static_cast<size_t>(len) * len, S(0));
    for (int i = 0; i < len; ++i)
      for (int j = i + 1; j < len; ++j) m[static_cast<size_t>(i) * len + j] = S(-1e9);
    return Tensor<S>({len, len}, std::move(m));
  }

 private:
  Tensor<S> pe_row(int pos) const {
    Tensor<S> pe = sinusoidal_pe<S>(pos + 1, emb.dim(1));
    return ag::slice(pe, 0, pos, 1);
  }

  // Single-query attention against cached keys/values, reusing the
  // layer's projection weights so decode matches the training pass.
  Tensor<S> attend_row(const MultiHeadAttention<S>& attn, const Tensor<S>& q_in,
                       const Tensor<S>& k_all, const Tensor<S>& v_all) const {
    int d = q_in.dim(1);
    int dh = d / attn.heads;
    Tensor<S> q = attn.wq.forward(q_in);
    Tensor<S> merged;
    for (int h = 0; h < attn.heads; ++h) {
      Tensor<S> qh = attn.heads == 1 ? q : ag::slice(q, 1, h * dh, dh);
      Tensor<S> kh = attn.heads == 1 ? k_all : ag::slice(k_all, 1, h * dh, dh);
      Tensor<S> vh = attn.heads == 1 ? v_all : ag::slice(v_all, 1, h * dh, dh);
      Tensor<S> scores = ag::scale(ag::matmul(qh, ag::transpose(kh)),
                                   static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
      Tensor<S> weights = ag::softmax(scores, 1);
      Tensor<S> oh = ag::matmul(weights, vh);
      merged = h == 0 ? oh : ag::concat(merged, oh, 1);
    }
    return attn.wo.forward(merged);
  }
};

}  // namespace sdst::nn
