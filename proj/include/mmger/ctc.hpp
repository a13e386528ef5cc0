// CTC head, log-space CTC loss with analytic gradient, greedy frame
// decoding and the collapse rule (drop repeats, then blanks).
#pragma once

#include "mmger/nn.hpp"

#include <limits>
#include <vector>

namespace mmger {

constexpr int kBlankId = 0;

struct Hypothesis {
  std::vector<int> frame_labels;    // length T', blanks and repeats kept
  std::vector<int> regular_tokens;  // collapsed, blank-free
};

// Collapse consecutive duplicates, then delete blanks.
inline std::vector<int> regularize(const std::vector<int>& frame_labels, int blank_id = kBlankId) {
  std::vector<int> out;
  int prev = -1;
  for (int v : frame_labels) {
    if (v != prev && v != blank_id) out.push_back(v);
    prev = v;
  }
  return out;
}

// Per-frame argmax; ties break toward the lowest id.
template <typename S>
std::vector<int> greedy_frame_labels(const Mat<S>& logits) {
  std::vector<int> out(size_t(logits.rows()));
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    int best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(t, k) > logits(t, best)) best = int(k);
    }
    out[size_t(t)] = best;
  }
  return out;
}

template <typename S>
Hypothesis decode_hypothesis(const Mat<S>& logits) {
  Hypothesis h;
  h.frame_labels = greedy_frame_labels(logits);
  h.regular_tokens = regularize(h.frame_labels);
  return h;
}

// Linear projection from encoder features to per-frame symbol logits
// (column 0 = blank).
template <typename S>
struct CtcHead {
  LinearLayer<S> proj;

  static CtcHead create(ParamStore<S>& ps, const std::string& prefix, Eigen::Index enc_dim,
                        Eigen::Index vocab_size, std::mt19937_64& rng) {
    return CtcHead{LinearLayer<S>::create(ps, prefix + ".proj", enc_dim, vocab_size, rng)};
  }

  Var<S> forward(Tape<S>& t, Var<S> hidden) const { return proj.forward(t, hidden); }
};

namespace detail {
template <typename S>
S log_add(S a, S b) {
  const S ninf = -std::numeric_limits<S>::infinity();
  if (a == ninf) return b;
  if (b == ninf) return a;
  S m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}
}  // namespace detail

// -log P(target | logits) marginalized over blank-augmented alignments.
// Infeasible targets yield +infinity (and backprop is a no-op).
template <typename S>
Var<S> ctc_loss(Tape<S>& t, Var<S> logits, const std::vector<int>& target) {
  const S ninf = -std::numeric_limits<S>::infinity();
  const Mat<S>& a = logits.val();
  const Eigen::Index T = a.rows(), V = a.cols();
  for (int y : target) {
    if (y <= 0 || y >= V) throw std::invalid_argument("ctc_loss: target symbol out of range");
  }

  // per-frame log softmax
  Mat<S> logp(T, V);
  for (Eigen::Index r = 0; r < T; ++r) {
    S m = a.row(r).maxCoeff();
    S lse = std::log((a.row(r).array() - m).exp().sum()) + m;
    logp.row(r) = a.row(r).array() - lse;
  }

  const Eigen::Index L = Eigen::Index(target.size());
  const Eigen::Index E = 2 * L + 1;  // blank-interleaved targets
  std::vector<int> ext(size_t(E), kBlankId);
  for (Eigen::Index i = 0; i < L; ++i) ext[size_t(2 * i + 1)] = target[size_t(i)];

  Mat<S> alpha = Mat<S>::Constant(T, E, ninf);
  alpha(0, 0) = logp(0, kBlankId);
  if (E > 1) alpha(0, 1) = logp(0, ext[1]);
  for (Eigen::Index ti = 1; ti < T; ++ti) {
    for (Eigen::Index s = 0; s < E; ++s) {
      S acc = alpha(ti - 1, s);
      if (s >= 1) acc = detail::log_add(acc, alpha(ti - 1, s - 1));
      if (s >= 2 && ext[size_t(s)] != kBlankId && ext[size_t(s)] != ext[size_t(s - 2)]) {
        acc = detail::log_add(acc, alpha(ti - 1, s - 2));
      }
      alpha(ti, s) = acc + logp(ti, ext[size_t(s)]);
    }
  }
  S log_total = alpha(T - 1, E - 1);
  if (E > 1) log_total = detail::log_add(log_total, alpha(T - 1, E - 2));

  Mat<S> out(1, 1);
  out(0, 0) = -log_total;
  int il = logits.id;
  if (log_total == ninf) {
    // no feasible alignment: +inf sentinel, nothing to differentiate
    return {&t, t.push(std::move(out))};
  }

  int id = t.push(std::move(out), [il, logp, alpha, ext, log_total, T, V, E,
                                   ninf](Tape<S>& t, const Mat<S>& g) {
    // beta excludes the emission at t, so alpha+beta covers each path once
    Mat<S> beta = Mat<S>::Constant(T, E, ninf);
    beta(T - 1, E - 1) = S(0);
    if (E > 1) beta(T - 1, E - 2) = S(0);
    for (Eigen::Index ti = T - 2; ti >= 0; --ti) {
      for (Eigen::Index s = 0; s < E; ++s) {
        S acc = logp(ti + 1, ext[size_t(s)]) + beta(ti + 1, s);
        if (s + 1 < E) {
          acc = detail::log_add(acc, logp(ti + 1, ext[size_t(s + 1)]) + beta(ti + 1, s + 1));
        }
        if (s + 2 < E && ext[size_t(s + 2)] != kBlankId && ext[size_t(s + 2)] != ext[size_t(s)]) {
          acc = detail::log_add(acc, logp(ti + 1, ext[size_t(s + 2)]) + beta(ti + 1, s + 2));
        }
        beta(ti, s) = acc;
      }
    }
    Mat<S> grad(T, V);
    for (Eigen::Index ti = 0; ti < T; ++ti) {
      std::vector<S> occ(size_t(V), ninf);
      for (Eigen::Index s = 0; s < E; ++s) {
        S v = alpha(ti, s) + beta(ti, s);
        occ[size_t(ext[size_t(s)])] = detail::log_add(occ[size_t(ext[size_t(s)])], v);
      }
      for (Eigen::Index k = 0; k < V; ++k) {
        S posterior = occ[size_t(k)] == ninf ? S(0) : std::exp(occ[size_t(k)] - log_total);
        grad(ti, k) = (std::exp(logp(ti, k)) - posterior) * g(0, 0);
      }
    }
    t.accumulate(il, grad);
  });
  return {&t, id};
}

}  // namespace mmger
