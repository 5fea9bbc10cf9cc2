#include <cmath>

#include "doctest.h"
#include "sdst/blocks.hpp"
#include "sdst/ctc.hpp"
#include "support/gradcheck.hpp"

using namespace sdst;
using ag::Tensor;
using sdst::test::gradcheck;

namespace {

nn::BlockConfig tiny_config() {
  nn::BlockConfig cfg;
  cfg.model_dim = 4;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.ffn_dim = 8;
  cfg.vocab_size = 7;
  cfg.max_decode_len = 12;
  cfg.audio_dim = 3;
  return cfg;
}

FrameMatrix random_frames(int frames, int dim, Rng& rng) {
  FrameMatrix fm;
  fm.frames = frames;
  fm.dim = dim;
  fm.data.resize(static_cast<size_t>(frames) * dim);
  for (auto& v : fm.data) v = static_cast<float>(rng.normal());
  return fm;
}

void set_identity(Tensor<double>& w) {
  REQUIRE(w.dim(0) == w.dim(1));
  for (int i = 0; i < w.dim(0); ++i)
    for (int j = 0; j < w.dim(1); ++j) w.values()[static_cast<size_t>(i) * w.dim(1) + j] = i == j ? 1.0 : 0.0;
}

void set_zero(Tensor<double>& w) { w.values().assign(w.size(), 0.0); }

// Exhaustive alignment sum: collapse repeats, drop blanks, add up path
// probabilities that map onto the target.
double ctc_brute_force(const Tensor<double>& logits, const std::vector<int>& target) {
  int T = logits.dim(0), V = logits.dim(1);
  std::vector<double> probs(logits.size());
  for (int t = 0; t < T; ++t) {
    double mx = logits.values()[static_cast<size_t>(t) * V];
    for (int k = 1; k < V; ++k) mx = std::max(mx, logits.values()[static_cast<size_t>(t) * V + k]);
    double denom = 0;
    for (int k = 0; k < V; ++k) denom += std::exp(logits.values()[static_cast<size_t>(t) * V + k] - mx);
    for (int k = 0; k < V; ++k)
      probs[static_cast<size_t>(t) * V + k] = std::exp(logits.values()[static_cast<size_t>(t) * V + k] - mx) / denom;
  }
  std::vector<int> path(static_cast<size_t>(T), 0);
  double total = 0.0;
  while (true) {
    std::vector<int> collapsed;
    for (int t = 0; t < T; ++t)
      if ((t == 0 || path[static_cast<size_t>(t)] != path[static_cast<size_t>(t - 1)]))
        collapsed.push_back(path[static_cast<size_t>(t)]);
    std::vector<int> labels;
    for (int s : collapsed)
      if (s != ag::kCtcBlank) labels.push_back(s);
    if (labels == target) {
      double p = 1.0;
      for (int t = 0; t < T; ++t) p *= probs[static_cast<size_t>(t) * V + path[static_cast<size_t>(t)]];
      total += p;
    }
    int pos = T - 1;
    while (pos >= 0 && path[static_cast<size_t>(pos)] == V - 1) path[static_cast<size_t>(pos--)] = 0;
    if (pos < 0) break;
    path[static_cast<size_t>(pos)]++;
  }
  return total;
}

}  // namespace

TEST_SUITE_BEGIN("blocks");

TEST_CASE("text encoder: shape contract and determinism") {
  nn::BlockConfig cfg = tiny_config();
  Rng rng = Rng::derive(1, "blk");
  nn::TextEncoder<double> enc(cfg, rng);
  Tensor<double> out = enc.forward({1, 2, 3, 4, 5});
  CHECK(out.dim(0) == 5);
  CHECK(out.dim(1) == cfg.model_dim);
  Tensor<double> single = enc.forward({3});
  CHECK(single.dim(0) == 1);
  Tensor<double> again = enc.forward({1, 2, 3, 4, 5});
  CHECK(out.values() == again.values());
  CHECK_THROWS_AS(enc.forward({}), nn::DimMismatch);
}

TEST_CASE("audio encoder: length preserved, dim checked") {
  nn::BlockConfig cfg = tiny_config();
  Rng rng = Rng::derive(2, "blk");
  nn::AudioEncoder<double> enc(cfg, rng);
  Rng frng = Rng::derive(3, "frames");
  FrameMatrix fm = random_frames(90, cfg.audio_dim, frng);
  Tensor<double> out = enc.forward(fm);
  CHECK(out.dim(0) == 90);
  CHECK(out.dim(1) == cfg.model_dim);
  FrameMatrix one = random_frames(1, cfg.audio_dim, frng);
  CHECK(enc.forward(one).dim(0) == 1);
  FrameMatrix bad = random_frames(4, cfg.audio_dim + 1, frng);
  CHECK_THROWS_AS(enc.forward(bad), nn::DimMismatch);
  CHECK(enc.forward(fm).values() == out.values());
}

TEST_CASE("conv downsampler: ceil(ceil(L/3)/3) for L = 1..1000") {
  nn::BlockConfig cfg = tiny_config();
  Rng rng = Rng::derive(4, "blk");
  nn::ConvDownsampler<double> down(cfg, rng);
  auto expected = [](int L) {
    auto c3 = [](int x) { return (x + 2) / 3; };
    return c3(c3(L));
  };
  for (int L = 1; L <= 1000; ++L) CHECK(nn::ConvDownsampler<double>::output_length(L) == expected(L));
  CHECK(nn::ConvDownsampler<double>::output_length(90) == 10);
  CHECK(nn::ConvDownsampler<double>::output_length(1) == 1);
  CHECK(nn::ConvDownsampler<double>::output_length(100) == 12);
  for (int L : {1, 2, 3, 9, 10, 27, 90, 100, 128}) {
    Tensor<double> x = Tensor<double>::randn({L, cfg.model_dim}, rng, 1.0);
    CHECK(down.forward(x).dim(0) == expected(L));
  }
}

TEST_CASE("fuse: length additivity over random lengths") {
  nn::BlockConfig cfg = tiny_config();
  Rng rng = Rng::derive(5, "blk");
  nn::FusionLayer<double> fuse(cfg, rng);
  Rng lens = Rng::derive(6, "lens");
  for (int rep = 0; rep < 20; ++rep) {
    int ls = lens.range_int(1, 30), lt = lens.range_int(1, 30);
    Tensor<double> hs = Tensor<double>::randn({ls, cfg.model_dim}, rng, 1.0);
    Tensor<double> ht = Tensor<double>::randn({lt, cfg.model_dim}, rng, 1.0);
    Tensor<double> out = fuse.forward(hs, ht);
    CHECK(out.dim(0) == ls + lt);
    CHECK(out.dim(1) == cfg.model_dim);
  }
}

TEST_CASE("fuse oracle: zero q/k + identity v/o with no residual averages all inputs") {
  nn::BlockConfig cfg = tiny_config();
  cfg.model_dim = 2;
  cfg.heads = 1;
  Rng rng = Rng::derive(7, "blk");
  nn::FusionLayer<double> fuse(cfg, rng);
  fuse.options = {false, false, false, false};
  set_zero(fuse.attn.wq.w);
  set_zero(fuse.attn.wq.b);
  set_zero(fuse.attn.wk.w);
  set_zero(fuse.attn.wk.b);
  set_identity(fuse.attn.wv.w);
  set_zero(fuse.attn.wv.b);
  set_identity(fuse.attn.wo.w);
  set_zero(fuse.attn.wo.b);

  Rng drng = Rng::derive(8, "data");
  Tensor<double> hs = Tensor<double>::randn({4, 2}, drng, 1.0);
  Tensor<double> ht = Tensor<double>::randn({10, 2}, drng, 1.0);
  Tensor<double> out = fuse.forward(hs, ht);
  REQUIRE(out.dim(0) == 14);

  double mean0 = 0, mean1 = 0;
  for (int i = 0; i < 4; ++i) {
    mean0 += hs.values()[static_cast<size_t>(i) * 2];
    mean1 += hs.values()[static_cast<size_t>(i) * 2 + 1];
  }
  for (int i = 0; i < 10; ++i) {
    mean0 += ht.values()[static_cast<size_t>(i) * 2];
    mean1 += ht.values()[static_cast<size_t>(i) * 2 + 1];
  }
  mean0 /= 14;
  mean1 /= 14;
  for (int i = 0; i < 14; ++i) {
    CHECK(out.values()[static_cast<size_t>(i) * 2] == doctest::Approx(mean0).epsilon(1e-9));
    CHECK(out.values()[static_cast<size_t>(i) * 2 + 1] == doctest::Approx(mean1).epsilon(1e-9));
  }
}

TEST_CASE("fuse is position-aware: permuting h_turns rows changes the output") {
  nn::BlockConfig cfg = tiny_config();
  Rng rng = Rng::derive(9, "blk");
  nn::FusionLayer<double> fuse(cfg, rng);
  Rng drng = Rng::derive(10, "data");
  Tensor<double> hs = Tensor<double>::randn({3, cfg.model_dim}, drng, 1.0);
  Tensor<double> ht = Tensor<double>::randn({5, cfg.model_dim}, drng, 1.0);
  Tensor<double> out1 = fuse.forward(hs, ht);

  // swap first two rows of h_turns
  Tensor<double> ht2({5, cfg.model_dim}, ht.values());
  for (int j = 0; j < cfg.model_dim; ++j)
    std::swap(ht2.values()[static_cast<size_t>(j)], ht2.values()[static_cast<size_t>(cfg.model_dim + j)]);
  Tensor<double> out2 = fuse.forward(hs, ht2);
  double diff = 0;
  for (size_t i = 0; i < out1.size(); ++i) diff += std::abs(out1.values()[i] - out2.values()[i]);
  CHECK(diff > 1e-6);
}

TEST_CASE("decode_greedy: rigged EOS at step one gives the empty sequence") {
  nn::BlockConfig cfg = tiny_config();
  Rng rng = Rng::derive(11, "blk");
  nn::TransformerDecoder<double> dec(cfg, rng);
  dec.out.b.values().assign(dec.out.b.size(), 0.0);
  dec.out.b.values()[2] = 100.0;  // kEos
  Tensor<double> memory = Tensor<double>::randn({3, cfg.model_dim}, rng, 1.0);
  nn::DecodeResult dr = dec.decode_greedy(memory, 1, 2, cfg.max_decode_len);
  CHECK(dr.ids.empty());
  CHECK_FALSE(dr.truncated);
}

TEST_CASE("decode_greedy: exact ties resolve toward the lowest id") {
  std::vector<double> row = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 1.25, 0.0, 0.0, 0.0, 0.0, 1.25};
  CHECK(ag::argmax_row(row.data(), static_cast<int>(row.size())) == 7);

  // an all-zero decoder ties every logit; id 0 wins every step
  nn::BlockConfig cfg = tiny_config();
  Rng rng = Rng::derive(12, "blk");
  nn::TransformerDecoder<double> dec(cfg, rng);
  auto zero_all = [&dec] {
    dec.visit("d", [](const std::string&, Tensor<double>& t) { t.values().assign(t.size(), 0.0); });
  };
  zero_all();
  Tensor<double> memory = Tensor<double>::zeros({2, cfg.model_dim});
  nn::DecodeResult dr = dec.decode_greedy(memory, 1, 2, 8);
  CHECK(dr.ids == std::vector<int>(8, 0));
  CHECK(dr.truncated);  // max_len reached without EOS
}

TEST_CASE("decode_greedy agrees with the teacher-forced causal pass") {
  nn::BlockConfig cfg = tiny_config();
  Rng rng = Rng::derive(13, "blk");
  nn::TransformerDecoder<double> dec(cfg, rng);
  Tensor<double> memory = Tensor<double>::randn({4, cfg.model_dim}, rng, 1.0);
  nn::DecodeResult dr = dec.decode_greedy(memory, 1, 2, 6);

  std::vector<int> dec_in = {1};
  dec_in.insert(dec_in.end(), dr.ids.begin(), dr.ids.end());
  Tensor<double> logits = dec.forward_train(dec_in, memory);
  for (size_t i = 0; i < dr.ids.size(); ++i) {
    int pick = ag::argmax_row(logits.values().data() + i * static_cast<size_t>(cfg.vocab_size), cfg.vocab_size);
    CHECK(pick == dr.ids[i]);
  }
  if (!dr.truncated) {
    int last = ag::argmax_row(logits.values().data() + dr.ids.size() * static_cast<size_t>(cfg.vocab_size),
                              cfg.vocab_size);
    CHECK(last == 2);  // EOS
  }
  nn::DecodeResult dr2 = dec.decode_greedy(memory, 1, 2, 6);
  CHECK(dr.ids == dr2.ids);
}

TEST_CASE("ctc_loss analytic examples") {
  // vocab {blank, a, b}; uniform logits
  Tensor<double> uniform1({1, 3}, {0.0, 0.0, 0.0});
  CHECK(ag::ctc_loss(uniform1, {1}).item() == doctest::Approx(std::log(3.0)).epsilon(1e-9));

  Tensor<double> uniform2({2, 3}, {0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
  // paths {aa, a-, -a}: p = 3/9
  CHECK(ag::ctc_loss(uniform2, {1}).item() == doctest::Approx(std::log(3.0)).epsilon(1e-9));

  CHECK_THROWS_AS(ag::ctc_loss(uniform1, {1, 2}), ag::ImpossibleAlignment);
  CHECK_THROWS_AS(ag::ctc_loss(uniform2, {1, 1}), ag::ImpossibleAlignment);  // repeat needs a blank
  CHECK_THROWS_AS(ag::ctc_loss(uniform1, {0}), ag::ShapeMismatch);           // blank in target
}

TEST_CASE("ctc_loss matches brute-force enumeration for T<=6, |y|<=3, vocab<=3") {
  Rng rng = Rng::derive(14, "ctc");
  int checked = 0;
  for (int T = 1; T <= 6; ++T)
    for (int vocab = 1; vocab <= 3; ++vocab)
      for (int ylen = 0; ylen <= 3; ++ylen)
        for (int rep = 0; rep < 3; ++rep) {
          int V = vocab + 1;
          Tensor<double> logits = Tensor<double>::randn({T, V}, rng, 1.5);
          std::vector<int> target;
          for (int i = 0; i < ylen; ++i) target.push_back(rng.range_int(1, vocab));
          if (ag::ctc_min_frames(target) > T) {
            CHECK_THROWS_AS(ag::ctc_loss(logits, target), ag::ImpossibleAlignment);
            continue;
          }
          double expected = -std::log(ctc_brute_force(logits, target));
          double actual = ag::ctc_loss(logits, target).item();
          CHECK(actual == doctest::Approx(expected).epsilon(1e-6));
          ++checked;
        }
  CHECK(checked > 100);
}

TEST_CASE("ctc_loss gradient passes finite differences") {
  Rng rng = Rng::derive(15, "ctc");
  for (int rep = 0; rep < 5; ++rep) {
    int T = rng.range_int(3, 6);
    Tensor<double> logits = Tensor<double>::randn({T, 4}, rng, 1.0, true);
    std::vector<int> target = {rng.range_int(1, 3), rng.range_int(1, 3)};
    if (ag::ctc_min_frames(target) > T) continue;
    auto r = gradcheck([&] { return ag::ctc_loss(logits, target); }, {&logits});
    CAPTURE(r.detail);
    CHECK(r.ok);
  }
}

TEST_CASE("ctc_greedy_decode collapse rules") {
  auto logits_for = [](const std::vector<int>& argmaxes, int V) {
    Tensor<double> t = Tensor<double>::zeros({static_cast<int>(argmaxes.size()), V});
    for (size_t i = 0; i < argmaxes.size(); ++i)
      t.values()[i * static_cast<size_t>(V) + static_cast<size_t>(argmaxes[i])] = 5.0;
    return t;
  };
  CHECK(ag::ctc_greedy_decode(logits_for({1, 1, 0, 2}, 3)) == std::vector<int>{1, 2});
  CHECK(ag::ctc_greedy_decode(logits_for({0, 0, 0}, 3)) == std::vector<int>{});
  CHECK(ag::ctc_greedy_decode(logits_for({1, 0, 1}, 3)) == std::vector<int>{1, 1});
}

TEST_CASE("gradcheck: encoder layer and decoder teacher-forced pass") {
  nn::BlockConfig cfg = tiny_config();
  cfg.model_dim = 4;
  cfg.ffn_dim = 6;
  cfg.vocab_size = 5;
  Rng rng = Rng::derive(16, "blk");

  for (int rep = 0; rep < 3; ++rep) {
    int len = rng.range_int(1, 4);
    nn::EncoderLayer<double> layer(cfg, rng);
    Tensor<double> x = Tensor<double>::randn({len, cfg.model_dim}, rng, 1.0, true);
    std::vector<Tensor<double>*> inputs = {&x};
    layer.visit("enc", [&inputs](const std::string&, Tensor<double>& t) { inputs.push_back(&t); });
    auto r = gradcheck([&] { return ag::mean(ag::mul(layer.forward(x), layer.forward(x))); }, inputs,
                       1e-5, 2e-4, 1e-6);
    CAPTURE(r.detail);
    CHECK(r.ok);
  }

  for (int rep = 0; rep < 2; ++rep) {
    nn::TransformerDecoder<double> dec(cfg, rng);
    Tensor<double> memory = Tensor<double>::randn({3, cfg.model_dim}, rng, 1.0, true);
    std::vector<int> dec_in = {1, 3, 4};
    std::vector<int> dec_out = {3, 4, 2};
    std::vector<Tensor<double>*> inputs = {&memory};
    dec.visit("dec", [&inputs](const std::string&, Tensor<double>& t) { inputs.push_back(&t); });
    auto r = gradcheck([&] { return ag::cross_entropy(dec.forward_train(dec_in, memory), dec_out); },
                       inputs, 1e-5, 2e-4, 1e-6);
    CAPTURE(r.detail);
    CHECK(r.ok);
  }
}

TEST_CASE("gradcheck: composite loss through fuse . conv_downsample . encode_audio") {
  nn::BlockConfig cfg = tiny_config();
  cfg.model_dim = 4;
  cfg.heads = 2;
  cfg.ffn_dim = 6;
  cfg.vocab_size = 6;
  cfg.audio_dim = 3;
  Rng rng = Rng::derive(17, "blk");

  nn::TextEncoder<double> text_enc(cfg, rng);
  nn::AudioEncoder<double> audio_enc(cfg, rng);
  nn::ConvDownsampler<double> down(cfg, rng);
  nn::FusionLayer<double> fuse(cfg, rng);

  Rng frng = Rng::derive(18, "frames");
  FrameMatrix frames = random_frames(7, cfg.audio_dim, frng);
  std::vector<int> ids = {3, 1, 4};

  std::vector<Tensor<double>*> inputs;
  auto add = [&inputs](const std::string&, Tensor<double>& t) { inputs.push_back(&t); };
  text_enc.visit("t", add);
  audio_enc.visit("a", add);
  down.visit("d", add);
  fuse.visit("f", add);

  auto forward = [&] {
    Tensor<double> hs = text_enc.forward(ids);
    Tensor<double> ht = down.forward(audio_enc.forward(frames));
    Tensor<double> h = fuse.forward(hs, ht);
    return ag::mean(ag::mul(h, h));
  };
  auto r = gradcheck(forward, inputs, 1e-5, 3e-4, 1e-6);
  CAPTURE(r.detail);
  CHECK(r.ok);
}

TEST_SUITE_END();
