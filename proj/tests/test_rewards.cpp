#include <gtest/gtest.h>

#include <cmath>

#include "dualstyle/eval.hpp"
#include "dualstyle/rewards.hpp"

using namespace dualstyle;

namespace {

Sentence ids_of(std::vector<int> ids) {
  Sentence s;
  s.ids = std::move(ids);
  return s;
}

ClassifierConfig clf_config() {
  ClassifierConfig c;
  c.vocab_size = 10;
  c.embed_dim = 4;
  c.channels = 2;
  return c;
}

// Output layer zeroed: every step is uniform over UNK, EOS and token 4.
Seq2Seq uniform_model() {
  Seq2Seq m(Seq2SeqConfig{5, 4, 4}, "g", 1);
  m.params()[m.params().find("out.w")].value.setZero();
  m.params()[m.params().find("out.b")].value.setZero();
  return m;
}

}  // namespace

TEST(StyleReward, ZeroClassifierGivesOneHalf) {
  auto clf = StyleClassifier::zeros(clf_config());
  EXPECT_EQ(style_reward(clf, ids_of({4, kEos}), Style::Y), 0.5);
}

TEST(StyleReward, LogitsTwoAndZero) {
  auto clf = StyleClassifier::zeros(clf_config());
  clf.params()[clf.params().find("out.b")].value(0, 0) = 2.0;
  const auto s = ids_of({4, 5, kEos});
  EXPECT_NEAR(style_reward(clf, s, Style::X), 0.881, 5e-4);
  EXPECT_NEAR(style_reward(clf, s, Style::X) + style_reward(clf, s, Style::Y), 1.0, 1e-12);
}

TEST(ContentReward, UniformDecoderOverThreeTokens) {
  auto g = uniform_model();
  const auto y = ids_of({4, kEos}), x = ids_of({4, kEos});
  RewardConfig raw;
  raw.length_normalize_content = false;
  RewardConfig norm;
  EXPECT_NEAR(content_reward(g, y, x, raw), 1.0 / 9.0, 1e-12);
  EXPECT_NEAR(content_reward(g, y, x, norm), 1.0 / 3.0, 1e-12);
}

TEST(ContentReward, DeterministicDecoderGivesOne) {
  auto g = uniform_model();
  g.params()[g.params().find("out.b")].value(0, kEos) = 200.0;
  const auto y = ids_of({4, 4, kEos}), x = ids_of({kEos});
  RewardConfig raw;
  raw.length_normalize_content = false;
  EXPECT_NEAR(content_reward(g, y, x, raw), 1.0, 1e-12);
  EXPECT_NEAR(content_reward(g, y, x, RewardConfig{}), 1.0, 1e-12);
}

TEST(ContentReward, ImpossibleTokenGivesZero) {
  auto g = uniform_model();
  // BOS is never emitted by the decoder.
  EXPECT_EQ(content_reward(g, ids_of({4, kEos}), ids_of({4, kBos, kEos}), RewardConfig{}), 0.0);
}

TEST(ContentReward, EmptyTargetIsAnError) {
  EXPECT_THROW(content_reward_from_log_prob(-1.0, 0, true), Error);
}

TEST(Combine, DirectEvaluation) {
  EXPECT_NEAR(combine(0.4, 0.8, 0.5), 1.25 * 0.32 / (0.2 + 0.4), 1e-15);
  EXPECT_NEAR(combine(0.4, 0.8, 0.5), 0.6667, 1e-4);
  EXPECT_NEAR(combine(0.4, 0.8, 0.5), 2.0 / 3.0, 1e-6);
}

TEST(Combine, EqualInputsAreFixedPoints) {
  for (double v : {0.0, 0.25, 0.5, 1.0})
    for (double beta : {0.5, 1.0, 2.0}) EXPECT_NEAR(combine(v, v, beta), v, 1e-15) << v << " " << beta;
}

TEST(Combine, AnnihilationAtZero) {
  for (double beta : {0.5, 1.0, 2.0}) {
    EXPECT_EQ(combine(0.0, 0.7, beta), 0.0);
    EXPECT_EQ(combine(0.7, 0.0, beta), 0.0);
    EXPECT_EQ(combine(0.0, 0.0, beta), 0.0);
  }
}

TEST(Combine, BoundsAndBetaSymmetry) {
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0), lb(-2.0, 2.0);
  for (int i = 0; i < 2000; ++i) {
    const double rs = u(rng), rc = u(rng), beta = std::exp(lb(rng));
    const double r = combine(rs, rc, beta);
    EXPECT_GE(r, std::min(rs, rc) - 1e-12);
    EXPECT_LE(r, std::max(rs, rc) + 1e-12);
    EXPECT_NEAR(r, combine(rc, rs, 1.0 / beta), 1e-12);
  }
}

TEST(RewardConfig, Validation) {
  RewardConfig c;
  c.validate();
  c.beta = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c.beta = 0.5;
  c.k = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(BleuContentReward, HandCountedFiveTokenCase) {
  // p1 = 4/5; smoothed p2 = 4/5, p3 = 3/4, p4 = 2/3; no brevity penalty.
  const Tokens x = {"a", "b", "c", "d", "e"};
  const Tokens x2 = {"a", "b", "c", "d", "f"};
  const double hand = std::pow(0.8 * 0.8 * 0.75 * (2.0 / 3.0), 0.25);
  const Tokens refs[] = {x};
  EXPECT_NEAR(smoothed_sentence_bleu(x2, refs), hand, 1e-12);
  EXPECT_NEAR(hand, 0.7521, 1e-4);
}

TEST(BleuContentReward, ExactAndEmptyBackTransfers) {
  Vocabulary vocab = Vocabulary::from_tokens({"<pad>", "<unk>", "<s>", "</s>", "a", "b", "c"});
  Sentence x = to_ids(tokenize("a b c"), vocab);
  Sentence y = to_ids(tokenize("c b"), vocab);

  Seq2Seq g(Seq2SeqConfig{vocab.size(), 8, 8}, "g", 2);
  auto opt = make_adam(g.params(), AdamConfig{.lr = 2e-2});
  const std::vector<SentencePair> pair = {{y, x}};
  for (int i = 0; i < 200 && greedy_decode(g, y).ids != x.ids; ++i) mle_step(g, pair, opt);
  ASSERT_EQ(greedy_decode(g, y).ids, x.ids);
  EXPECT_NEAR(bleu_content_reward(g, y, x, vocab), 1.0, 1e-12);

  g.params()[g.params().find("out.b")].value(0, kEos) = 500.0;
  EXPECT_NEAR(bleu_content_reward(g, y, x, vocab), 0.0, 1e-12);
}
