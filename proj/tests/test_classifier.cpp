#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "dualstyle/classifier.hpp"

using namespace dualstyle;

namespace {

ClassifierConfig small_config(int vocab) {
  ClassifierConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 8;
  c.channels = 4;
  return c;
}

Sentence ids_of(std::vector<int> ids) {
  Sentence s;
  s.ids = std::move(ids);
  return s;
}

struct Task {
  SyntheticTask task;
  Vocabulary vocab;
};

Task indexed_task() {
  SyntheticTaskSpec spec;
  spec.train_per_style = 600;
  spec.dev_per_style = 100;
  spec.test_per_style = 20;
  Task t{generate_synthetic(spec), {}};
  t.vocab = Vocabulary::build(t.task.corpus, 1);
  index_corpus(t.task.corpus, t.vocab);
  return t;
}

ClassifierTrainConfig train_config(int vocab) {
  ClassifierTrainConfig c;
  c.epochs = 3;
  c.model.vocab_size = vocab;
  return c;
}

}  // namespace

TEST(ClassifyProb, ZeroClassifierIsUniform) {
  auto clf = StyleClassifier::zeros(small_config(10));
  for (const auto& s : {ids_of({4, kEos}), ids_of({5, 6, 7, 8, 9, kEos})}) {
    auto p = classify_prob(clf, s);
    EXPECT_EQ(p[0], 0.5);
    EXPECT_EQ(p[1], 0.5);
  }
}

TEST(ClassifyProb, SoftmaxOfLogitsTwoAndZero) {
  auto clf = StyleClassifier::zeros(small_config(10));
  auto& b = clf.params()[clf.params().find("out.b")].value;
  b(0, 0) = 2.0;
  auto p = classify_prob(clf, ids_of({4, 5, kEos}));
  EXPECT_NEAR(p[0], std::exp(2.0) / (std::exp(2.0) + 1.0), 1e-12);
  EXPECT_NEAR(p[0], 0.881, 5e-4);
  EXPECT_NEAR(p[1], 0.119, 5e-4);
}

TEST(ClassifyProb, RandomInputsGiveValidDistributions) {
  StyleClassifier clf(small_config(20), 3);
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Sentence s;
    const int n = 1 + static_cast<int>(rng() % 10);
    for (int i = 0; i < n; ++i) s.ids.push_back(kReservedIds + static_cast<int>(rng() % 16));
    s.ids.push_back(kEos);
    auto p = classify_prob(clf, s);
    EXPECT_GT(p[0], 0.0);
    EXPECT_GT(p[1], 0.0);
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
  }
}

TEST(ClassifyProb, BatchAgreesWithSingleAndIgnoresTrailingIds) {
  StyleClassifier clf(small_config(20), 5);
  const auto a = ids_of({4, 5, kEos}), b = ids_of({6, 7, 8, 9, 10, 11, kEos});
  const Sentence* both[] = {&a, &b};
  auto batch = classify_prob_batch(clf, both);
  EXPECT_NEAR(batch[0][0], classify_prob(clf, a)[0], 1e-12);
  EXPECT_NEAR(batch[1][0], classify_prob(clf, b)[0], 1e-12);
  EXPECT_NEAR(classify_prob(clf, ids_of({4, 5, kEos, 9, 9}))[0], classify_prob(clf, a)[0], 1e-12);
}

TEST(ClassifyProb, EmptySentenceIsRejected) {
  auto clf = StyleClassifier::zeros(small_config(10));
  try {
    classify_prob(clf, ids_of({kEos}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySequence);
  }
}

TEST(StyleAccuracy, ZeroClassifierTiesResolveToX) {
  auto clf = StyleClassifier::zeros(small_config(10));
  std::vector<Sentence> s = {ids_of({4, kEos}), ids_of({5, 6, kEos})};
  EXPECT_EQ(style_accuracy(clf, s, Style::X), 1.0);
  EXPECT_EQ(style_accuracy(clf, s, Style::Y), 0.0);
  EXPECT_EQ(predicted_style({0.5, 0.5}), Style::X);
}

TEST(StyleAccuracy, EmptyListIsAnError) {
  auto clf = StyleClassifier::zeros(small_config(10));
  try {
    style_accuracy(clf, std::vector<Sentence>{}, Style::X);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyList);
  }
}

TEST(TrainClassifier, SeparableSyntheticTaskAndOracleAgreement) {
  auto t = indexed_task();
  auto result = train_classifier(t.task.corpus, train_config(t.vocab.size()));
  EXPECT_TRUE(result.classifier.frozen());
  EXPECT_GE(result.dev_accuracy, 0.98);

  std::size_t agree = 0, total = 0;
  for (Style s : {Style::X, Style::Y})
    for (const auto& sent : t.task.corpus.side(s)[Split::Dev]) {
      agree += predicted_style(classify_prob(result.classifier, sent)) == t.task.oracle_style(sent.surface);
      ++total;
    }
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(total), 0.98);

  // Three X sentences and one Y sentence scored against X.
  const auto& dx = t.task.corpus.side(Style::X)[Split::Dev];
  const auto& dy = t.task.corpus.side(Style::Y)[Split::Dev];
  std::vector<Sentence> mixed = {dx[0], dx[1], dx[2], dy[0]};
  for (const auto& s : mixed) ASSERT_EQ(predicted_style(classify_prob(result.classifier, s)), t.task.oracle_style(s.surface));
  EXPECT_DOUBLE_EQ(style_accuracy(result.classifier, mixed, Style::X), 0.75);
}

TEST(TrainClassifier, IdenticalCorporaGiveChanceAccuracy) {
  auto t = indexed_task();
  auto& c = t.task.corpus;
  for (Split sp : kSplits) c.side(Style::Y)[sp] = c.side(Style::X)[sp];
  auto result = train_classifier(c, train_config(t.vocab.size()));
  EXPECT_NEAR(result.dev_accuracy, 0.5, 0.05);
}

TEST(TrainClassifier, DeterministicGivenSeed) {
  auto t = indexed_task();
  auto cfg = train_config(t.vocab.size());
  cfg.epochs = 1;
  auto a = train_classifier(t.task.corpus, cfg);
  auto b = train_classifier(t.task.corpus, cfg);
  EXPECT_EQ(hash_params(a.classifier.params()), hash_params(b.classifier.params()));
}

TEST(Checkpoint, RoundTripKeepsFrozenFlagAndHash) {
  StyleClassifier clf(small_config(12), 6);
  clf.freeze();
  const auto path = std::filesystem::temp_directory_path() / "dualstyle_cls.bin";
  clf.save(path, 77);
  auto back = StyleClassifier::load(path);
  EXPECT_TRUE(back.frozen());
  EXPECT_EQ(hash_params(back.params()), hash_params(clf.params()));
  EXPECT_EQ(back.config().widths, clf.config().widths);
  std::filesystem::remove(path);
}
