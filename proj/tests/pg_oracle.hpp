#pragma once
// Enumeration oracle for the policy-gradient estimator on a model small
// enough to list every output sequence: |V| = 3 emittable symbols (UNK, EOS,
// one token) and at most 3 decode steps.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dualstyle/dualrl.hpp"

namespace dualstyle::oracle {

struct PgCheck {
  std::size_t coords = 0;       // coordinates with nonzero spread
  std::size_t outside_3sigma = 0;
  double max_z = 0.0;           // max |mean - exact| / stderr
  double bound = 0.0;           // family-wise 3-sigma bound on max_z
  double max_z_biased = 0.0;    // same statistic against 0.75 * exact
  double mass = 0.0;            // enumerated probability mass
  std::int64_t samples = 0;
  bool exact_zero_ok = true;    // zero-spread coordinates match exactly
};

inline std::vector<std::vector<int>> enumerate_sequences(const std::vector<int>& alphabet, int max_len) {
  std::vector<std::vector<int>> out, frontier{{}};
  for (int t = 0; t < max_len; ++t) {
    std::vector<std::vector<int>> next;
    for (const auto& p : frontier)
      for (int tok : alphabet) {
        auto q = p;
        q.push_back(tok);
        (tok == kEos || t + 1 == max_len ? out : next).push_back(std::move(q));
      }
    frontier = std::move(next);
  }
  return out;
}

// Two-sided normal quantile for tail mass `alpha`, by bisection on erfc.
inline double normal_quantile_two_sided(double alpha) {
  double lo = 0.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (std::erfc(mid / std::sqrt(2.0)) > alpha ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline std::vector<double> flatten(const Gradients& g) {
  std::vector<double> out;
  for (const auto& m : g) out.insert(out.end(), m.data(), m.data() + m.size());
  return out;
}

inline PgCheck check_policy_gradient(BaselineMode mode, int k, std::int64_t samples, std::uint64_t seed) {
  constexpr int kVocab = 5, kDim = 3, kMaxLen = 3;
  Seq2Seq policy(Seq2SeqConfig{kVocab, kDim, kDim}, "f", seed);
  Seq2Seq opposite(Seq2SeqConfig{kVocab, kDim, kDim}, "g", seed + 1);
  // Larger output weights than the default init so the sequence distribution is far from uniform.
  Rng init(seed + 2);
  for (const char* name : {"out.w", "out.b"}) {
    auto& v = policy.params()[policy.params().find(name)].value;
    v = uniform_matrix(v.rows(), v.cols(), 1.5, init);
  }
  StyleClassifier clf(ClassifierConfig{kVocab, 4, {1, 2}, 3}, seed + 3);
  for (auto& p : clf.params()) p.value = uniform_matrix(p.value.rows(), p.value.cols(), 1.0, init);
  clf.freeze();

  RewardContext ctx;
  ctx.classifier = &clf;
  ctx.opposite = &opposite;
  ctx.target = Style::Y;
  ctx.config.k = k;

  Sentence x;
  x.ids = {kReservedIds, kEos};
  const Sentence* one[] = {&x};

  // Exact gradient: sum_y P(y) R(y) grad log P(y).
  const auto outcomes = enumerate_sequences({kUnk, kEos, kReservedIds}, kMaxLen);
  std::vector<const Sentence*> srcs(outcomes.size(), &x);
  std::vector<Sentence> tg(outcomes.size());
  std::vector<const Sentence*> tgp;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    tg[i].ids = outcomes[i];
    tgp.push_back(&tg[i]);
  }
  std::vector<bool> degenerate;
  const auto rewards = score_samples(ctx, outcomes, srcs, 1, degenerate);
  PgCheck out;
  Tape exact_tape;
  Var lp = sequence_log_probs(exact_tape, policy, srcs, tgp);
  Matrix w(static_cast<Eigen::Index>(outcomes.size()), 1);
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const double p = std::exp(lp.value()(static_cast<Eigen::Index>(i), 0));
    out.mass += p;
    w(static_cast<Eigen::Index>(i), 0) = p * rewards[i].r_total;
  }
  exact_tape.backward(masked_sum(lp, w));
  const auto exact = flatten(exact_tape.gradients(policy.params()));

  // Monte Carlo: each group of K samples from one source is an i.i.d. unit.
  const std::int64_t groups = samples / k;
  std::vector<double> sum(exact.size(), 0.0), sq(exact.size(), 0.0);
  Rng rng(seed + 4);
  for (std::int64_t j = 0; j < groups; ++j) {
    Tape tape;
    auto [loss, batch] = rl_surrogate(tape, policy, ctx, one, mode, 1.0, rng, kMaxLen);
    tape.backward(loss);
    const auto g = flatten(tape.gradients(policy.params()));
    for (std::size_t c = 0; c < g.size(); ++c) {
      const double v = -g[c];  // the surrogate is a loss
      sum[c] += v;
      sq[c] += v * v;
    }
  }
  out.samples = groups * k;
  const double n = static_cast<double>(groups);
  std::vector<double> zs;
  for (std::size_t c = 0; c < exact.size(); ++c) {
    const double mean = sum[c] / n;
    const double var = std::max(0.0, sq[c] / n - mean * mean) * n / (n - 1.0);
    const double se = std::sqrt(var / n);
    if (se == 0.0) {
      out.exact_zero_ok = out.exact_zero_ok && std::abs(mean - exact[c]) <= 1e-12;
      continue;
    }
    ++out.coords;
    const double z = std::abs(mean - exact[c]) / se;
    out.max_z = std::max(out.max_z, z);
    out.max_z_biased = std::max(out.max_z_biased, std::abs(mean - 0.75 * exact[c]) / se);
    if (z > 3.0) ++out.outside_3sigma;
  }
  // 3 sigma two-sided tail mass, shared across all coordinates.
  out.bound = normal_quantile_two_sided(std::erfc(3.0 / std::sqrt(2.0)) / static_cast<double>(std::max<std::size_t>(1, out.coords)));
  return out;
}

}  // namespace dualstyle::oracle
