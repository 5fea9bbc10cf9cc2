#include <cmath>

#include "doctest.h"
#include "sdst/optim.hpp"
#include "sdst/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace sdst;
using ag::Tensor;
using sdst::test::gradcheck;

namespace {

Tensor<double> randt(ag::Shape shape, Rng& rng, bool rg = true) {
  return Tensor<double>::randn(std::move(shape), rng, 1.0, rg);
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape bookkeeping and construction errors") {
  CHECK_THROWS_AS(Tensor<float>({2, 3}, {1.f, 2.f}), ag::ShapeMismatch);
  Tensor<float> t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(t.item(), ag::ShapeMismatch);
}

TEST_CASE("matmul forward matches hand computation") {
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> b({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor<double> c = ag::matmul(a, b);
  CHECK(c.values() == std::vector<double>{58, 64, 139, 154});
  CHECK_THROWS_AS(ag::matmul(a, a), ag::ShapeMismatch);
}

TEST_CASE("softmax rows: symmetry and normalization") {
  Tensor<double> x({1, 3}, {1.0, 1.0, 1.0});
  Tensor<double> y = ag::softmax(x, 1);
  for (double v : y.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Rng rng(2);
  Tensor<double> z = randt({5, 7}, rng, false);
  Tensor<double> sz = ag::softmax(z, 1);
  for (int i = 0; i < 5; ++i) {
    double s = 0;
    for (int j = 0; j < 7; ++j) s += sz.values()[static_cast<size_t>(i) * 7 + j];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("layer_norm output statistics") {
  Rng rng(3);
  Tensor<double> x = randt({6, 16}, rng, false);
  Tensor<double> g = Tensor<double>::full({16}, 1.0);
  Tensor<double> b = Tensor<double>::zeros({16});
  Tensor<double> y = ag::layer_norm(x, g, b);
  for (int i = 0; i < 6; ++i) {
    double mean = 0, var = 0;
    for (int j = 0; j < 16; ++j) mean += y.values()[static_cast<size_t>(i) * 16 + j];
    mean /= 16;
    for (int j = 0; j < 16; ++j) {
      double d = y.values()[static_cast<size_t>(i) * 16 + j] - mean;
      var += d * d;
    }
    var /= 16;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("cross_entropy on uniform logits is ln(vocab)") {
  Tensor<double> logits({1, 3}, {0.5, 0.5, 0.5});
  for (int target = 0; target < 3; ++target) {
    Tensor<double> loss = ag::cross_entropy(logits, {target});
    CHECK(loss.item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }
}

TEST_CASE("conv1d output length formula") {
  Rng rng(4);
  auto length_of = [&rng](int L, int kernel, int stride, int padding) {
    Tensor<double> x = randt({L, 2}, rng, false);
    Tensor<double> w = randt({3, kernel, 2}, rng, false);
    Tensor<double> b = Tensor<double>::zeros({3});
    return ag::conv1d(x, w, b, stride, padding).dim(0);
  };
  CHECK(length_of(90, 9, 3, 4) == 30);
  CHECK(length_of(1, 9, 3, 4) == 1);
  CHECK(length_of(100, 9, 3, 4) == 34);
  CHECK(length_of(10, 3, 1, 0) == 8);
}

TEST_CASE("backward: sum of squares and disconnected leaves") {
  Tensor<double> x({3}, {1, 2, 3}, true);
  Tensor<double> y({3}, {5, 5, 5}, true);
  Tensor<double> loss = ag::sum(ag::mul(x, x));
  ag::backward(loss);
  CHECK(x.grad() == std::vector<double>{2, 4, 6});
  CHECK(y.grad() == std::vector<double>{0, 0, 0});  // disconnected: zero, not an error

  Tensor<double> vec({2}, {1, 2}, true);
  CHECK_THROWS_AS(ag::backward(ag::mul(vec, vec)), ag::DisconnectedLoss);
}

TEST_CASE("backward visits shared subgraphs once; leaf grads accumulate") {
  Tensor<double> x({2}, {3, 4}, true);
  Tensor<double> shared = ag::mul(x, x);
  Tensor<double> loss = ag::sum(ag::add(shared, shared));  // d/dx = 4x
  ag::backward(loss);
  CHECK(x.grad() == std::vector<double>{12, 16});
  // second backward accumulates into the leaf
  ag::backward(loss);
  CHECK(x.grad() == std::vector<double>{24, 32});
}

TEST_CASE("debug mode flags non-finite values") {
  ag::set_debug_checks(true);
  Tensor<double> big({1, 2}, {1e308, 1e308}, true);
  CHECK_THROWS_AS(ag::mul(big, big), ag::NonFinite);
  ag::set_debug_checks(false);
  CHECK_NOTHROW(ag::mul(big, big));
}

TEST_CASE("gradcheck: every op on 10 random shapes") {
  Rng rng(1234);
  int shapes_per_op = 10;

  for (int rep = 0; rep < shapes_per_op; ++rep) {
    int m = rng.range_int(1, 5), k = rng.range_int(1, 5), n = rng.range_int(1, 5);

    {
      Tensor<double> a = randt({m, k}, rng);
      Tensor<double> b = randt({k, n}, rng);
      auto r = gradcheck([&] { return ag::sum(ag::matmul(a, b)); }, {&a, &b});
      CAPTURE(r.detail);
      CHECK(r.ok);
    }
    {
      Tensor<double> a = randt({m, n}, rng);
      Tensor<double> b = randt({m, n}, rng);
      auto r = gradcheck([&] { return ag::sum(ag::mul(ag::add(a, b), b)); }, {&a, &b});
      CHECK(r.ok);
    }
    {
      Tensor<double> a = randt({m, n}, rng);
      Tensor<double> row = randt({n}, rng);
      auto r = gradcheck([&] { return ag::sum(ag::add_row(a, row)); }, {&a, &row});
      CHECK(r.ok);
    }
    {
      // keep relu inputs away from the kink
      Tensor<double> a = randt({m, n}, rng);
      for (auto& v : a.values())
        if (std::abs(v) < 0.05) v += 0.1;
      auto r = gradcheck([&] { return ag::sum(ag::relu(a)); }, {&a});
      CHECK(r.ok);
    }
    {
      Tensor<double> a = randt({m, n}, rng);
      auto r = gradcheck([&] { return ag::sum(ag::gelu(a)); }, {&a});
      CHECK(r.ok);
    }
    {
      Tensor<double> a = randt({m, n}, rng);
      Tensor<double> w = randt({m, n}, rng, false);
      auto r = gradcheck([&] { return ag::sum(ag::mul(ag::softmax(a, 1), w)); }, {&a});
      CHECK(r.ok);
    }
    {
      Tensor<double> a = randt({m, n}, rng);
      auto r = gradcheck([&] { return ag::sum(ag::logsumexp(a, 1)); }, {&a});
      CHECK(r.ok);
    }
    {
      int w = std::max(2, n);
      Tensor<double> a = randt({m, w}, rng);
      Tensor<double> gain = randt({w}, rng);
      Tensor<double> bias = randt({w}, rng);
      auto r = gradcheck([&] {
        Tensor<double> mixer = Tensor<double>::full({m, w}, 0.0);
        for (size_t i = 0; i < mixer.size(); ++i) mixer.values()[i] = 0.1 * static_cast<double>(i % 7);
        return ag::sum(ag::mul(ag::layer_norm(a, gain, bias), mixer));
      }, {&a, &gain, &bias});
      CAPTURE(r.detail);
      CHECK(r.ok);
    }
    {
      Tensor<double> a = randt({m, n}, rng);
      Tensor<double> b = randt({k, n}, rng);
      auto r = gradcheck([&] { return ag::sum(ag::concat(a, b, 0)); }, {&a, &b});
      CHECK(r.ok);
      Tensor<double> c = randt({m, k}, rng);
      auto r2 = gradcheck([&] { return ag::sum(ag::mul(ag::concat(a, c, 1), ag::concat(a, c, 1))); }, {&a, &c});
      CHECK(r2.ok);
    }
    {
      int rows = m + 2;
      Tensor<double> a = randt({rows, n}, rng);
      int start = rng.range_int(0, rows - 1);
      int len = rng.range_int(1, rows - start);
      auto r = gradcheck([&] { return ag::sum(ag::mul(ag::slice(a, 0, start, len), ag::slice(a, 0, start, len))); }, {&a});
      CHECK(r.ok);
    }
    {
      Tensor<double> a = randt({m, n}, rng);
      auto r = gradcheck([&] { return ag::sum(ag::mul(ag::transpose(a), ag::transpose(a))); }, {&a});
      CHECK(r.ok);
    }
    {
      int L = rng.range_int(1, 12);
      int cin = rng.range_int(1, 3), cout = rng.range_int(1, 3);
      int kernel = rng.range_int(1, std::min(5, L + 2));
      int stride = rng.range_int(1, 3);
      int padding = rng.range_int(0, 2);
      if ((L + 2 * padding - kernel) < 0) padding = kernel;  // keep output non-empty
      Tensor<double> x = randt({L, cin}, rng);
      Tensor<double> w = randt({cout, kernel, cin}, rng);
      Tensor<double> b = randt({cout}, rng);
      auto r = gradcheck([&] { return ag::sum(ag::conv1d(x, w, b, stride, padding)); }, {&x, &w, &b});
      CAPTURE(r.detail);
      CHECK(r.ok);
    }
    {
      int vocab = rng.range_int(2, 6);
      Tensor<double> table = randt({vocab, n}, rng);
      std::vector<int> ids;
      for (int i = 0; i < m; ++i) ids.push_back(rng.range_int(0, vocab - 1));
      auto r = gradcheck([&] { return ag::sum(ag::mul(ag::embedding(table, ids), ag::embedding(table, ids))); }, {&table});
      CHECK(r.ok);
    }
    {
      int vocab = rng.range_int(2, 6);
      Tensor<double> logits = randt({m, vocab}, rng);
      std::vector<int> targets;
      for (int i = 0; i < m; ++i) targets.push_back(rng.range_int(0, vocab - 1));
      auto r = gradcheck([&] { return ag::cross_entropy(logits, targets); }, {&logits});
      CHECK(r.ok);
    }
  }
}

TEST_CASE("gradcheck: random composite graph") {
  Rng rng(99);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor<double> a = randt({3, 4}, rng);
    Tensor<double> b = randt({4, 4}, rng);
    Tensor<double> gain = randt({4}, rng);
    Tensor<double> bias = randt({4}, rng);
    auto forward = [&] {
      Tensor<double> h = ag::gelu(ag::matmul(a, b));
      h = ag::layer_norm(h, gain, bias);
      h = ag::softmax(ag::matmul(h, ag::transpose(h)), 1);
      return ag::mean(h);
    };
    auto r = gradcheck(forward, {&a, &b, &gain, &bias});
    CAPTURE(r.detail);
    CHECK(r.ok);
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor<float> p({3}, {1.f, 2.f, 3.f}, true);
  p.grad().assign(3, 0.f);
  ag::Adam<float> adam({0.1});
  adam.step({&p});
  CHECK(p.values() == std::vector<float>{1.f, 2.f, 3.f});
}

TEST_CASE("adam: single-step bias-corrected update") {
  Tensor<double> p({1}, {1.0}, true);
  p.grad()[0] = 1.0;
  ag::Adam<double> adam({0.1});
  adam.step({&p});
  // mhat = 1, vhat = 1 -> step = lr / (1 + eps)
  CHECK(p.values()[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-10));
}

TEST_CASE("adam: identical parameter sets update identically") {
  Rng rng(7);
  Tensor<float> p1 = Tensor<float>::randn({4, 4}, rng, 1.0, true);
  Tensor<float> p2({4, 4}, p1.values(), true);
  for (size_t i = 0; i < p1.size(); ++i) {
    p1.grad()[i] = static_cast<float>(i) * 0.01f;
    p2.grad()[i] = static_cast<float>(i) * 0.01f;
  }
  ag::Adam<float> a1, a2;
  for (int s = 0; s < 3; ++s) {
    a1.step({&p1});
    a2.step({&p2});
  }
  CHECK(p1.values() == p2.values());
}

TEST_CASE("determinism: identical inputs give bitwise-identical forward values") {
  Rng rng1(55), rng2(55);
  Tensor<float> a1 = Tensor<float>::randn({7, 9}, rng1, 1.0);
  Tensor<float> b1 = Tensor<float>::randn({9, 5}, rng1, 1.0);
  Tensor<float> a2 = Tensor<float>::randn({7, 9}, rng2, 1.0);
  Tensor<float> b2 = Tensor<float>::randn({9, 5}, rng2, 1.0);
  Tensor<float> c1 = ag::softmax(ag::matmul(a1, b1), 1);
  Tensor<float> c2 = ag::softmax(ag::matmul(a2, b2), 1);
  CHECK(c1.values() == c2.values());
}

TEST_SUITE_END();
