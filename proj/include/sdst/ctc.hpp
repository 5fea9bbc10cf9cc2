#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

#include "sdst/tensor.hpp"

namespace sdst::ag {

struct ImpossibleAlignment : std::runtime_error {
  explicit ImpossibleAlignment(const std::string& what) : std::runtime_error(what) {}
};

constexpr int kCtcBlank = 0;

// Shortest frame sequence that can align to the target: one frame per
// label plus a separating blank between equal neighbours.
inline int ctc_min_frames(const std::vector<int>& target) {
  int n = static_cast<int>(target.size());
  for (size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

namespace detail {
inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = a > b ? a : b;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}
}  // namespace detail

// Negative log of the total probability over all CTC alignments of
// `target` in softmax(logits). logits: [T, vocab] with blank at id 0;
// target must not contain the blank. The forward/backward dynamic
// programs run in 64-bit regardless of S.
template <class S>
Tensor<S> ctc_loss(const Tensor<S>& logits, const std::vector<int>& target) {
  if (logits.rank() != 2) throw ShapeMismatch("ctc_loss: logits must be rank-2");
  const int T = logits.dim(0), V = logits.dim(1);
  for (int y : target)
    if (y <= 0 || y >= V) throw ShapeMismatch("ctc_loss: target id out of range");
  if (T < ctc_min_frames(target))
    throw ImpossibleAlignment("ctc_loss: " + std::to_string(T) + " frames cannot align " +
                              std::to_string(target.size()) + " labels");

  const double ninf = -std::numeric_limits<double>::infinity();
  const int U = static_cast<int>(target.size());
  const int M = 2 * U + 1;
  std::vector<int> ext(static_cast<size_t>(M), kCtcBlank);
  for (int u = 0; u < U; ++u) ext[static_cast<size_t>(2 * u + 1)] = target[static_cast<size_t>(u)];

  // log softmax rows in double
  std::vector<double> lp(static_cast<size_t>(T) * V);
  std::vector<double> prob(static_cast<size_t>(T) * V);
  for (int t = 0; t < T; ++t) {
    double mx = static_cast<double>(logits.values()[static_cast<size_t>(t) * V]);
    for (int k = 1; k < V; ++k)
      mx = std::max(mx, static_cast<double>(logits.values()[static_cast<size_t>(t) * V + k]));
    double denom = 0;
    for (int k = 0; k < V; ++k)
      denom += std::exp(static_cast<double>(logits.values()[static_cast<size_t>(t) * V + k]) - mx);
    double logz = mx + std::log(denom);
    for (int k = 0; k < V; ++k) {
      lp[static_cast<size_t>(t) * V + k] = static_cast<double>(logits.values()[static_cast<size_t>(t) * V + k]) - logz;
      prob[static_cast<size_t>(t) * V + k] = std::exp(lp[static_cast<size_t>(t) * V + k]);
    }
  }

  auto allow_skip = [&ext](int j) {
    return j >= 2 && ext[static_cast<size_t>(j)] != kCtcBlank && ext[static_cast<size_t>(j)] != ext[static_cast<size_t>(j - 2)];
  };

  std::vector<double> alpha(static_cast<size_t>(T) * M, ninf);
  alpha[0] = lp[kCtcBlank];
  if (M > 1) alpha[1] = lp[static_cast<size_t>(ext[1])];
  for (int t = 1; t < T; ++t)
    for (int j = 0; j < M; ++j) {
      double best = alpha[static_cast<size_t>(t - 1) * M + j];
      if (j >= 1) best = detail::log_add(best, alpha[static_cast<size_t>(t - 1) * M + j - 1]);
      if (allow_skip(j)) best = detail::log_add(best, alpha[static_cast<size_t>(t - 1) * M + j - 2]);
      alpha[static_cast<size_t>(t) * M + j] = best + lp[static_cast<size_t>(t) * V + ext[static_cast<size_t>(j)]];
    }

  double log_p = alpha[static_cast<size_t>(T - 1) * M + (M - 1)];
  if (M > 1) log_p = detail::log_add(log_p, alpha[static_cast<size_t>(T - 1) * M + (M - 2)]);
  if (log_p == ninf) throw ImpossibleAlignment("ctc_loss: no feasible alignment");

  // beta'[t][j]: suffix mass from t+1 onward given state j at time t
  std::vector<double> beta(static_cast<size_t>(T) * M, ninf);
  beta[static_cast<size_t>(T - 1) * M + (M - 1)] = 0;
  if (M > 1) beta[static_cast<size_t>(T - 1) * M + (M - 2)] = 0;
  for (int t = T - 2; t >= 0; --t)
    for (int j = 0; j < M; ++j) {
      double acc = beta[static_cast<size_t>(t + 1) * M + j] + lp[static_cast<size_t>(t + 1) * V + ext[static_cast<size_t>(j)]];
      if (j + 1 < M)
        acc = detail::log_add(acc, beta[static_cast<size_t>(t + 1) * M + j + 1] +
                                       lp[static_cast<size_t>(t + 1) * V + ext[static_cast<size_t>(j + 1)]]);
      if (j + 2 < M && allow_skip(j + 2))
        acc = detail::log_add(acc, beta[static_cast<size_t>(t + 1) * M + j + 2] +
                                       lp[static_cast<size_t>(t + 1) * V + ext[static_cast<size_t>(j + 2)]]);
      beta[static_cast<size_t>(t) * M + j] = acc;
    }

  // gamma[t][k]: posterior of emitting k at t; grad = prob - gamma
  std::vector<double> grad_base(static_cast<size_t>(T) * V);
  for (int t = 0; t < T; ++t) {
    std::vector<double> gamma(static_cast<size_t>(V), ninf);
    for (int j = 0; j < M; ++j) {
      double c = alpha[static_cast<size_t>(t) * M + j] + beta[static_cast<size_t>(t) * M + j] - log_p;
      int k = ext[static_cast<size_t>(j)];
      gamma[static_cast<size_t>(k)] = detail::log_add(gamma[static_cast<size_t>(k)], c);
    }
    for (int k = 0; k < V; ++k) {
      double g = gamma[static_cast<size_t>(k)] == ninf ? 0.0 : std::exp(gamma[static_cast<size_t>(k)]);
      grad_base[static_cast<size_t>(t) * V + k] = prob[static_cast<size_t>(t) * V + k] - g;
    }
  }

  auto pl = logits.node();
  return detail::make_op<S>("ctc_loss", {1}, {static_cast<S>(-log_p)}, {pl},
                            [pl, grad_base = std::move(grad_base)](Node<S>& nd) mutable {
    pl->ensure_grad();
    for (size_t i = 0; i < grad_base.size(); ++i)
      pl->grad[i] += static_cast<S>(grad_base[i] * static_cast<double>(nd.grad[0]));
  });
}

// First maximum wins, so exact ties resolve toward the lowest id.
template <class S>
int argmax_row(const S* row, int n) {
  int best = 0;
  for (int j = 1; j < n; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

// Per-step argmax, collapse repeats, drop blanks.
template <class S>
std::vector<int> ctc_greedy_decode(const Tensor<S>& logits) {
  if (logits.rank() != 2) throw ShapeMismatch("ctc_greedy_decode: logits must be rank-2");
  int T = logits.dim(0), V = logits.dim(1);
  std::vector<int> out;
  int prev = -1;
  for (int t = 0; t < T; ++t) {
    int k = argmax_row(logits.values().data() + static_cast<size_t>(t) * V, V);
    if (k != prev && k != kCtcBlank) out.push_back(k);
    prev = k;
  }
  return out;
}

}  // namespace sdst::ag
