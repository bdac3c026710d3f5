#include <gtest/gtest.h>

#include <algorithm>

#include <cmath>
#include <filesystem>
#include <map>
#include <vector>

#include "dualstyle/seq2seq.hpp"

using namespace dualstyle;

namespace {

// |V| = 5: the decoder can emit UNK, EOS and one ordinary token.
constexpr int kTok = kReservedIds;
const std::vector<int> kAlphabet = {kUnk, kEos, kTok};

Sentence ids_of(std::vector<int> ids) {
  Sentence s;
  s.ids = std::move(ids);
  return s;
}

Seq2Seq tiny_model(std::uint64_t seed, int vocab = 5, int dim = 6) {
  return Seq2Seq(Seq2SeqConfig{vocab, dim, dim}, "f", seed);
}

// Every outcome of decoding up to `max_len` steps, stopping at the first EOS.
std::vector<std::vector<int>> enumerate_outcomes(int max_len) {
  std::vector<std::vector<int>> out, frontier{{}};
  for (int t = 0; t < max_len; ++t) {
    std::vector<std::vector<int>> next;
    for (const auto& p : frontier)
      for (int tok : kAlphabet) {
        auto q = p;
        q.push_back(tok);
        if (tok == kEos || t + 1 == max_len)
          out.push_back(q);
        else
          next.push_back(q);
      }
    frontier = std::move(next);
  }
  return out;
}

// Log-softmax of each decoder step, recomputed outside the tape ops.
double manual_log_prob(const Seq2Seq& m, const Sentence& src, const Sentence& tgt) {
  Tape tape(false);
  const std::vector<int>* s[] = {&src.ids};
  auto enc = m.encode(tape, s);
  auto state = enc.initial;
  int prev = kBos;
  double total = 0.0;
  for (int tok : tgt.ids) {
    const int p[] = {prev};
    const Matrix& l = m.step(enc, state, p).value();
    const double mx = l.maxCoeff();
    const double lse = mx + std::log((l.array() - mx).exp().sum());
    total += l(0, tok) - lse;
    prev = tok;
  }
  return total;
}

}  // namespace

TEST(LogProb, EnumeratedSequenceMassSumsToOne) {
  const auto outcomes = enumerate_outcomes(3);
  ASSERT_EQ(outcomes.size(), 1u + 2u + 4u + 8u);
  for (std::uint64_t seed : {1, 2, 3}) {
    auto m = tiny_model(seed);
    for (const auto& src : {ids_of({kTok, kEos}), ids_of({kTok, kUnk, kTok, kEos})}) {
      double mass = 0.0;
      for (const auto& o : outcomes) mass += std::exp(log_prob(m, src, ids_of(o)));
      EXPECT_NEAR(mass, 1.0, 1e-6);
    }
  }
}

TEST(LogProb, EqualsSumOfStepLogSoftmax) {
  auto m = tiny_model(4, 9, 8);
  const auto src = ids_of({5, 6, 7, kEos});
  for (const auto& tgt : {ids_of({8, kEos}), ids_of({4, 5, 6, 7, 8, kEos}), ids_of({kEos})}) {
    const double lp = log_prob(m, src, tgt);
    EXPECT_LE(lp, 0.0);
    EXPECT_NEAR(lp, manual_log_prob(m, src, tgt), 1e-10);
  }
}

TEST(LogProb, InvariantToBatchPadding) {
  auto m = tiny_model(5, 9, 8);
  const auto s1 = ids_of({5, kEos}), t1 = ids_of({6, kEos});
  const auto s2 = ids_of({5, 6, 7, 8, 4, kEos}), t2 = ids_of({8, 7, 6, 5, 4, kEos});
  const Sentence* src[] = {&s1, &s2};
  const Sentence* tgt[] = {&t1, &t2};
  auto batch = log_prob_batch(m, src, tgt);
  EXPECT_NEAR(batch[0], log_prob(m, s1, t1), 1e-12);
  EXPECT_NEAR(batch[1], log_prob(m, s2, t2), 1e-12);
}

TEST(LogProb, EmptySequencesAreRejected) {
  auto m = tiny_model(6);
  try {
    log_prob(m, ids_of({}), ids_of({kEos}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySequence);
  }
}

TEST(Step, OutputDistributionsAreValid) {
  auto m = tiny_model(7, 12, 8);
  Tape tape(false);
  std::vector<int> a = {5, 6, kEos}, b = {7, 8, 9, 10, kEos};
  const std::vector<int>* src[] = {&a, &b};
  auto enc = m.encode(tape, src);
  auto state = enc.initial;
  std::vector<int> prev = {kBos, kBos};
  for (int t = 0; t < 4; ++t) {
    Var p = softmax(m.step(enc, state, prev));
    for (Eigen::Index r = 0; r < 2; ++r) {
      EXPECT_NEAR(p.value().row(r).sum(), 1.0, 1e-12);
      EXPECT_LT(p.value()(r, kPad), 1e-300);
      EXPECT_LT(p.value()(r, kBos), 1e-300);
    }
    prev = {9, 10};
  }
}

TEST(Sample, ReportedLogProbsMatchRecomputation) {
  auto m = tiny_model(8, 9, 8);
  const auto src = ids_of({5, 6, kEos});
  DecodeConfig cfg;
  cfg.mode = DecodeConfig::Mode::Sample;
  cfg.seed = 11;
  auto batch = sample(m, src, 64, cfg);
  ASSERT_EQ(batch.samples.size(), 64u);
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    const auto& s = batch.samples[i];
    ASSERT_FALSE(s.ids.empty());
    EXPECT_TRUE(s.ids.back() == kEos || static_cast<int>(s.ids.size()) == resolve_max_len(cfg, src.length()));
    EXPECT_LE(batch.log_probs[i], 0.0);
    EXPECT_NEAR(batch.log_probs[i], log_prob(m, src, s), 1e-10);
  }
}

TEST(Sample, DeterministicGivenSeed) {
  auto m = tiny_model(9, 9, 8);
  const auto src = ids_of({5, 6, kEos});
  DecodeConfig cfg;
  cfg.mode = DecodeConfig::Mode::Sample;
  cfg.seed = 5;
  auto a = sample(m, src, 16, cfg), b = sample(m, src, 16, cfg);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(a.samples[i].ids, b.samples[i].ids);
  cfg.seed = 6;
  auto c = sample(m, src, 16, cfg);
  bool differs = false;
  for (std::size_t i = 0; i < 16; ++i) differs |= a.samples[i].ids != c.samples[i].ids;
  EXPECT_TRUE(differs);
}

TEST(Sample, FrequenciesMatchEnumeratedProbabilities) {
  auto m = tiny_model(10);
  const auto src = ids_of({kTok, kEos});
  DecodeConfig cfg;
  cfg.mode = DecodeConfig::Mode::Sample;
  cfg.max_len = 3;
  std::map<std::vector<int>, int> counts;
  const int chunks = 5, per = 20000;
  for (int c = 0; c < chunks; ++c) {
    cfg.seed = 100 + static_cast<std::uint64_t>(c);
    for (const auto& s : sample(m, src, per, cfg).samples) ++counts[s.ids];
  }
  const double n = chunks * per;
  int seen = 0;
  for (const auto& o : enumerate_outcomes(3)) {
    const double p = std::exp(log_prob(m, src, ids_of(o)));
    const double sigma = std::sqrt(n * p * (1 - p));
    const double c = counts.count(o) ? counts[o] : 0;
    seen += static_cast<int>(c);
    EXPECT_LE(std::abs(c - n * p), 3 * sigma + 1e-9) << "outcome of length " << o.size();
  }
  EXPECT_EQ(seen, static_cast<int>(n));
}

TEST(Sample, ColdTemperatureGivesTheGreedyDecode) {
  auto m = tiny_model(12, 9, 8);
  const auto src = ids_of({5, 6, 7, kEos});
  DecodeConfig cfg;
  cfg.mode = DecodeConfig::Mode::Sample;
  cfg.temperature = 1e-6;
  const auto greedy = greedy_decode(m, src);
  for (const auto& s : sample(m, src, 20, cfg).samples) EXPECT_EQ(s.ids, greedy.ids);
}

TEST(Greedy, HaltsAtMaxLenWhenEosNeverWins) {
  auto m = tiny_model(13, 9, 8);
  m.params()[m.params().find("out.b")].value(0, kEos) = -100.0;
  DecodeConfig cfg;
  cfg.max_len = 4;
  const auto out = greedy_decode(m, ids_of({5, kEos}), cfg);
  EXPECT_EQ(out.ids.size(), 4u);
  EXPECT_NE(out.ids.back(), kEos);
  EXPECT_EQ(resolve_max_len(DecodeConfig{}, 3), 8);
  EXPECT_EQ(resolve_max_len(DecodeConfig{}, 40), 32);
}

TEST(Greedy, DeterministicAndBatchConsistent) {
  auto m = tiny_model(14, 9, 8);
  const auto a = ids_of({5, 6, kEos}), b = ids_of({7, 8, 4, 5, kEos});
  const Sentence* src[] = {&a, &b};
  auto batch = greedy_decode_batch(m, src);
  EXPECT_EQ(batch[0].ids, greedy_decode(m, a).ids);
  EXPECT_EQ(batch[1].ids, greedy_decode(m, b).ids);
  EXPECT_EQ(greedy_decode(m, a).ids, greedy_decode(m, a).ids);
}

TEST(Mle, LossGradientPassesGradCheck) {
  auto m = tiny_model(15, 8, 5);
  std::vector<SentencePair> pairs = {{ids_of({4, 5, kEos}), ids_of({6, kEos})},
                                     {ids_of({7, kEos}), ids_of({5, 6, 4, kEos})}};
  ScalarFn fn = [&](Tape& t, const ParamSet&) { return mle_loss(t, m, pairs); };
  GradCheckOptions opt;
  opt.max_coords = 400;
  opt.seed = 3;
  EXPECT_LT(grad_check(fn, m.params(), opt), 1e-4);
}

TEST(Mle, PadPositionsDoNotContribute) {
  auto m = tiny_model(16, 8, 5);
  const SentencePair shortp{ids_of({4, kEos}), ids_of({5, kEos})};
  const SentencePair longp{ids_of({4, 5, 6, 7, kEos}), ids_of({7, 6, 5, 4, 6, kEos})};
  Tape t1(false), t2(false);
  std::vector<SentencePair> one = {shortp}, both = {shortp, longp};
  const double l1 = mle_loss(t1, m, one).value()(0, 0);
  const double l2 = mle_loss(t2, m, both).value()(0, 0);
  // Mean over non-PAD positions: 2 target tokens + 6 target tokens.
  const double lp_short = -log_prob(m, shortp.source, shortp.target);
  const double lp_long = -log_prob(m, longp.source, longp.target);
  EXPECT_NEAR(l1, lp_short / 2.0, 1e-10);
  EXPECT_NEAR(l2, (lp_short + lp_long) / 8.0, 1e-10);
}

TEST(Mle, MemorizationLossDecreases) {
  auto m = tiny_model(17, 12, 16);
  std::vector<SentencePair> pairs;
  for (int i = 0; i < 10; ++i)
    pairs.push_back({ids_of({4 + i % 8, 4 + (i * 3) % 8, kEos}), ids_of({4 + (i * 5) % 8, 4 + i % 7, kEos})});
  auto opt = make_adam(m.params(), AdamConfig{.lr = 3e-3});
  std::vector<double> losses;
  for (int step = 0; step < 200; ++step) losses.push_back(mle_step(m, pairs, opt));
  // Adam wobbles once the loss is small; the early descent is strict.
  for (std::size_t i = 1; i < 60; ++i) EXPECT_LT(losses[i], losses[i - 1]) << "step " << i;
  EXPECT_LT(*std::min_element(losses.end() - 10, losses.end()), 0.25 * losses.front());
}

TEST(Greedy, IdentityTrainingReproducesHeldOutSentences) {
  // Copy task over 6 ordinary tokens, lengths 2..4; every 5th sentence is held out.
  std::vector<std::vector<int>> all;
  for (int len = 2; len <= 4; ++len) {
    std::vector<int> idx(static_cast<std::size_t>(len), 0);
    while (true) {
      std::vector<int> s;
      for (int v : idx) s.push_back(kReservedIds + v);
      s.push_back(kEos);
      all.push_back(s);
      int k = len - 1;
      while (k >= 0 && ++idx[static_cast<std::size_t>(k)] == 6) idx[static_cast<std::size_t>(k--)] = 0;
      if (k < 0) break;
    }
  }
  std::vector<SentencePair> train;
  std::vector<Sentence> held;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (i % 5 == 0)
      held.push_back(ids_of(all[i]));
    else
      train.push_back({ids_of(all[i]), ids_of(all[i])});
  }
  auto m = Seq2Seq(Seq2SeqConfig{kReservedIds + 6, 16, 32}, "f", 18);
  auto opt = make_adam(m.params(), AdamConfig{.lr = 5e-3});
  Rng rng(1);
  for (int step = 0; step < 1500; ++step) {
    std::vector<SentencePair> batch;
    for (int b = 0; b < 32; ++b) batch.push_back(train[rng() % train.size()]);
    mle_step(m, batch, opt);
  }
  int exact = 0;
  for (const auto& s : held) exact += greedy_decode(m, s).ids == s.ids;
  EXPECT_GE(exact, static_cast<int>(0.9 * static_cast<double>(held.size()))) << exact << "/" << held.size();
}

TEST(Checkpoint, SaveLoadPreservesScores) {
  auto m = tiny_model(19, 9, 8);
  const auto path = std::filesystem::temp_directory_path() / "dualstyle_s2s.bin";
  m.save(path, 1234);
  auto back = Seq2Seq::load(path);
  EXPECT_EQ(back.direction(), "f");
  EXPECT_EQ(back.config().hidden_dim, 8);
  EXPECT_TRUE(back.params() == m.params());
  const auto s = ids_of({5, 6, kEos}), t = ids_of({7, kEos});
  EXPECT_EQ(log_prob(back, s, t), log_prob(m, s, t));
  std::filesystem::remove(path);
}
