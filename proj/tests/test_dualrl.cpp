#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dualstyle/dualrl.hpp"
#include "pg_oracle.hpp"

using namespace dualstyle;

namespace {

Sentence ids_of(std::vector<int> ids) {
  Sentence s;
  s.ids = std::move(ids);
  return s;
}

RewardBreakdown reward(double r) { return RewardBreakdown{r, r, r}; }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A small indexed task with a frozen classifier and pre-trained f, g.
struct Fixture {
  SyntheticTask task;
  Vocabulary vocab;
  StyleClassifier clf;
  Seq2Seq f, g;
  TrainConfig cfg;
};

Fixture make_fixture() {
  SyntheticTaskSpec spec;
  spec.train_per_style = 120;
  spec.dev_per_style = 12;
  spec.test_per_style = 4;
  spec.seed = 3;
  Fixture fx{generate_synthetic(spec), {}, {}, {}, {}, {}};
  fx.vocab = Vocabulary::build(fx.task.corpus, 1);
  index_corpus(fx.task.corpus, fx.vocab);
  ClassifierTrainConfig cc;
  cc.epochs = 2;
  cc.model.vocab_size = fx.vocab.size();
  fx.clf = train_classifier(fx.task.corpus, cc).classifier;
  const Seq2SeqConfig mc{fx.vocab.size(), 8, 8};
  fx.f = Seq2Seq(mc, "f", 5);
  fx.g = Seq2Seq(mc, "g", 6);
  fx.cfg.pretrain_epochs = 1;
  fx.cfg.pretrain_batch = 16;
  fx.cfg.max_dual_epochs = 2;
  fx.cfg.iterations_per_epoch = 2;
  fx.cfg.dual_batch = 6;
  fx.cfg.dual_lr = 1e-3;
  fx.cfg.reward.k = 2;
  fx.cfg.patience = 5;
  fx.cfg.dev_limit = 6;
  auto pairs = make_pretrain_pairs(fx.task.corpus, build_style_lexicon(fx.task.corpus), fx.vocab);
  pretrain(fx.f, fx.g, pairs, fx.cfg);
  return fx;
}

// Replays the schedule from iteration 0 and counts triggers in [from, to).
int expected_tf_updates(const TrainConfig& cfg, std::int64_t from, std::int64_t to) {
  TrainState st;
  int n = 0;
  for (st.iteration = 0; st.iteration < to; ++st.iteration) {
    st.interval = anneal_interval(st.iteration, cfg.schedule);
    for (Direction d : {Direction::XtoY, Direction::YtoX})
      if (should_teacher_force(st, d) && st.iteration >= from) ++n;
  }
  return n;
}

}  // namespace

TEST(Anneal, ScheduleValues) {
  const AnnealSchedule s;
  EXPECT_EQ(anneal_interval(0, s), 1.0);
  double prev = 0.0;
  std::int64_t first_cap = -1;
  for (std::int64_t i = 0; i <= 60000; ++i) {
    const double p = anneal_interval(i, s);
    EXPECT_GE(p, prev);
    prev = p;
    if (first_cap < 0 && p >= s.p_max) first_cap = i;
  }
  const double solved = s.gap * std::log(s.p_max / s.p0) / std::log(s.rate);
  EXPECT_NEAR(solved, 48318.0, 1.0);
  EXPECT_NEAR(static_cast<double>(first_cap), solved, 1.0);
  EXPECT_NEAR(anneal_interval(48318, s), 100.0, 0.05);
  EXPECT_EQ(anneal_interval(10'000'000, s), 100.0);
}

TEST(TeacherForcing, UnitIntervalFiresEveryIteration) {
  TrainState st;
  for (std::int64_t i = 0; i < 20; ++i) {
    st.iteration = i;
    st.interval = 1.0;
    EXPECT_TRUE(should_teacher_force(st, Direction::XtoY));
    EXPECT_TRUE(should_teacher_force(st, Direction::YtoX));
  }
}

TEST(TeacherForcing, FractionalIntervalSpacing) {
  TrainState st;
  std::vector<std::int64_t> fired;
  for (std::int64_t i = 0; i < 10; ++i) {
    st.iteration = i;
    st.interval = 2.5;
    if (should_teacher_force(st, Direction::XtoY)) fired.push_back(i);
  }
  EXPECT_EQ(fired, (std::vector<std::int64_t>{0, 3, 6, 9}));
}

TEST(TeacherForcing, CapAllowsOneTriggerPerHundred) {
  TrainState st;
  int fired = 0;
  for (std::int64_t i = 0; i < 1000; ++i) {
    st.iteration = i;
    st.interval = 100.0;
    fired += should_teacher_force(st, Direction::YtoX);
  }
  EXPECT_EQ(fired, 10);
}

TEST(Advantages, EqualRewardsGiveZero) {
  std::vector<RewardBreakdown> r(8, reward(0.6));
  std::vector<bool> deg(8, false);
  for (double a : advantages(r, deg, 2, 4, BaselineMode::LeaveOneOut)) EXPECT_EQ(a, 0.0);
}

TEST(Advantages, LeaveOneOutValues) {
  std::vector<RewardBreakdown> r = {reward(1.0), reward(0.0), reward(0.5), reward(0.3)};
  std::vector<bool> deg(4, false);
  auto a = advantages(r, deg, 1, 4, BaselineMode::LeaveOneOut);
  EXPECT_NEAR(a[0], (1.0 - (0.0 + 0.5 + 0.3) / 3) / 4, 1e-15);
  EXPECT_NEAR(a[1], (0.0 - (1.0 + 0.5 + 0.3) / 3) / 4, 1e-15);
  auto none = advantages(r, deg, 1, 4, BaselineMode::None);
  EXPECT_NEAR(none[2], 0.5 / 4, 1e-15);
}

TEST(Advantages, SingleSampleReducesToPlainReinforce) {
  std::vector<RewardBreakdown> r = {reward(0.7), reward(0.2)};
  std::vector<bool> deg(2, false);
  auto a = advantages(r, deg, 2, 1, BaselineMode::LeaveOneOut);
  EXPECT_NEAR(a[0], 0.7 / 2, 1e-15);
  EXPECT_NEAR(a[1], 0.2 / 2, 1e-15);
}

TEST(Advantages, DegenerateSamplesStayOutOfBaselines) {
  // Sample 1 is degenerate: reward 0, excluded from the others' baselines.
  std::vector<RewardBreakdown> r = {reward(0.9), reward(0.0), reward(0.3)};
  std::vector<bool> deg = {false, true, false};
  auto a = advantages(r, deg, 1, 3, BaselineMode::LeaveOneOut);
  EXPECT_NEAR(a[0], (0.9 - 0.3) / 3, 1e-15);
  EXPECT_NEAR(a[2], (0.3 - 0.9) / 3, 1e-15);
  EXPECT_NEAR(a[1], (0.0 - 0.6) / 3, 1e-15);
}

TEST(RlStep, EqualRewardsLeaveParametersUnchanged) {
  constexpr int V = 8;
  Seq2Seq policy(Seq2SeqConfig{V, 6, 6}, "f", 1);
  policy.params()[policy.params().find("out.b")].value(0, kEos) = -50.0;  // no empty outputs
  Seq2Seq opposite(Seq2SeqConfig{V, 6, 6}, "g", 2);
  opposite.params()[opposite.params().find("out.w")].value.setZero();
  opposite.params()[opposite.params().find("out.b")].value.setZero();
  auto clf = StyleClassifier::zeros(ClassifierConfig{V, 4, {1}, 2});
  clf.freeze();
  RewardContext ctx{&clf, &opposite, nullptr, Style::Y, RewardConfig{}};
  const auto a = ids_of({4, 5, kEos}), b = ids_of({6, kEos});
  const Sentence* src[] = {&a, &b};
  const ParamSet before = policy.params();
  auto opt = make_adam(policy.params(), AdamConfig{.lr = 1e-2});
  Rng rng(3);
  auto st = rl_step(policy, ctx, src, BaselineMode::LeaveOneOut, 1.0, opt, rng);
  EXPECT_FALSE(st.updated);
  EXPECT_EQ(st.degenerate, 0);
  EXPECT_NEAR(st.mean_style, 0.5, 1e-12);
  EXPECT_TRUE(policy.params() == before);
}

TEST(RlStep, ScoresMatchRewardFunctions) {
  constexpr int V = 8;
  Seq2Seq policy(Seq2SeqConfig{V, 6, 6}, "f", 4);
  Seq2Seq opposite(Seq2SeqConfig{V, 6, 6}, "g", 5);
  StyleClassifier clf(ClassifierConfig{V, 4, {1, 2}, 3}, 6);
  clf.freeze();
  RewardContext ctx{&clf, &opposite, nullptr, Style::Y, RewardConfig{}};
  const auto x = ids_of({4, 5, 6, kEos});
  const Sentence* src[] = {&x};
  Tape tape;
  Rng rng(7);
  auto [loss, batch] = rl_surrogate(tape, policy, ctx, src, BaselineMode::LeaveOneOut, 1.0, rng);
  ASSERT_EQ(batch.rewards.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    if (batch.degenerate[i]) {
      EXPECT_EQ(batch.rewards[i].r_total, 0.0);
      continue;
    }
    const auto y = ids_of(batch.sample_ids[i]);
    EXPECT_NEAR(batch.rewards[i].r_style, style_reward(clf, y, Style::Y), 1e-12);
    EXPECT_NEAR(batch.rewards[i].r_content, content_reward(opposite, y, x, ctx.config), 1e-12);
    EXPECT_NEAR(batch.rewards[i].r_total,
                combine(batch.rewards[i].r_style, batch.rewards[i].r_content, ctx.config.beta), 1e-12);
  }
}

TEST(RlStep, MonteCarloGradientMatchesEnumeration) {
  for (auto mode : {BaselineMode::LeaveOneOut, BaselineMode::None}) {
    auto r = oracle::check_policy_gradient(mode, 4, 40000, 11);
    EXPECT_NEAR(r.mass, 1.0, 1e-9);
    EXPECT_TRUE(r.exact_zero_ok);
    EXPECT_GT(r.coords, 10u);
    EXPECT_LE(r.max_z, r.bound) << baseline_name(mode);
    // A 25% shrunk gradient is detected, so the check has power.
    EXPECT_GT(r.max_z_biased, r.bound) << baseline_name(mode);
  }
}

TEST(TeacherForcingStep, TrainsOnBackTranslatedPairs) {
  Vocabulary vocab = Vocabulary::from_tokens({"<pad>", "<unk>", "<s>", "</s>", "a", "b", "c"});
  Seq2Seq model(Seq2SeqConfig{vocab.size(), 6, 6}, "f", 1);
  Seq2Seq opposite(Seq2SeqConfig{vocab.size(), 6, 6}, "g", 2);
  const auto s1 = to_ids(tokenize("a b"), vocab), s2 = to_ids(tokenize("c a b"), vocab);
  const Sentence* batch[] = {&s1, &s2};
  const auto pairs = as_training_pairs(back_translate_batch(opposite, batch, 0, vocab));
  for (const auto& p : pairs) EXPECT_TRUE(p.target == s1 || p.target == s2);
  Tape t(false);
  const double expect = mle_loss(t, model, pairs).value()(0, 0);
  auto opt = make_adam(model.params(), AdamConfig{});
  const ParamSet before = model.params();
  EXPECT_NEAR(teacher_forcing_step(model, opposite, batch, 0, vocab, opt), expect, 1e-12);
  EXPECT_FALSE(model.params() == before);
}

TEST(Pretrain, ZeroEpochsAndDeterminism) {
  SyntheticTaskSpec spec;
  spec.train_per_style = 60;
  spec.dev_per_style = 8;
  spec.test_per_style = 4;
  auto task = generate_synthetic(spec);
  Vocabulary vocab = Vocabulary::build(task.corpus, 1);
  auto pairs = make_pretrain_pairs(task.corpus, build_style_lexicon(task.corpus), vocab);
  const Seq2SeqConfig mc{vocab.size(), 8, 8};
  TrainConfig cfg;
  cfg.pretrain_epochs = 0;
  Seq2Seq f(mc, "f", 1), g(mc, "g", 2);
  const auto f0 = f.params(), g0 = g.params();
  pretrain(f, g, pairs, cfg);
  EXPECT_TRUE(f.params() == f0);
  EXPECT_TRUE(g.params() == g0);

  cfg.pretrain_epochs = 2;
  cfg.pretrain_batch = 8;
  cfg.pretrain_lr = 3e-3;
  Seq2Seq f1(mc, "f", 1), g1(mc, "g", 2), f2(mc, "f", 1), g2(mc, "g", 2);
  auto rep = pretrain(f1, g1, pairs, cfg, &pairs);
  pretrain(f2, g2, pairs, cfg);
  EXPECT_TRUE(f1.params() == f2.params());
  EXPECT_TRUE(g1.params() == g2.params());
  for (int d = 0; d < 2; ++d) EXPECT_LT(rep.dev_loss_after[d], rep.dev_loss_before[d]);
}

TEST(TrainConfig, Validation) {
  TrainConfig ok;
  ok.validate();
  auto bad = ok;
  bad.schedule.rate = 1.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = ok;
  bad.schedule.p0 = 200.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = ok;
  bad.dual_lr = 0.0;
  EXPECT_THROW(bad.validate(), Error);
  EXPECT_EQ(parse_ablation("rl_only"), Ablation::RlOnly);
  EXPECT_EQ(parse_baseline("none"), BaselineMode::None);
  EXPECT_THROW(parse_ablation("both"), Error);
}

TEST(Train, RequiresFrozenClassifier) {
  auto fx = make_fixture();
  StyleClassifier thawed(fx.clf.config(), fx.clf.params(), false);
  EXPECT_THROW(train(fx.f, fx.g, thawed, fx.task.corpus, fx.vocab, fx.cfg), Error);
}

TEST(Train, DeterministicFrozenAndResumable) {
  auto fx = make_fixture();
  const auto clf_hash = hash_params(fx.clf.params());
  const auto root = std::filesystem::temp_directory_path() / "dualstyle_train";
  std::filesystem::remove_all(root);

  auto a = train(fx.f, fx.g, fx.clf, fx.task.corpus, fx.vocab, fx.cfg, RunFiles{root / "a", false});
  auto b = train(fx.f, fx.g, fx.clf, fx.task.corpus, fx.vocab, fx.cfg, RunFiles{root / "b", false});
  EXPECT_EQ(hash_params(fx.clf.params()), clf_hash);
  ASSERT_EQ(a.state.history.size(), 2u);
  EXPECT_EQ(slurp(root / "a" / "history.csv"), slurp(root / "b" / "history.csv"));
  EXPECT_EQ(slurp(root / "a" / "checkpoints" / "last.f.bin"), slurp(root / "b" / "checkpoints" / "last.f.bin"));
  EXPECT_TRUE(a.f.params() == b.f.params());
  EXPECT_EQ(slurp(root / "a" / "history.csv"), history_csv(a.state.history));

  // Teacher-forcing counts follow the annealed spacing rule for both directions.
  for (const auto& rec : a.state.history)
    EXPECT_EQ(rec.teacher_forcing_updates, expected_tf_updates(fx.cfg, rec.iteration - fx.cfg.iterations_per_epoch, rec.iteration));

  // Best checkpoint is the max-score epoch.
  int best = 0;
  for (std::size_t e = 0; e < a.state.history.size(); ++e)
    if (a.state.history[e].dev_score > a.state.history[static_cast<std::size_t>(best)].dev_score) best = static_cast<int>(e);
  EXPECT_EQ(a.state.best_epoch, best + 1);
  EXPECT_TRUE(Seq2Seq::load(root / "a" / "checkpoints" / "best.f.bin").params() == a.f.params());

  // One epoch, then resume to two.
  auto one = fx.cfg;
  one.max_dual_epochs = 1;
  train(fx.f, fx.g, fx.clf, fx.task.corpus, fx.vocab, one, RunFiles{root / "c", false});
  auto c = train(fx.f, fx.g, fx.clf, fx.task.corpus, fx.vocab, fx.cfg, RunFiles{root / "c", true});
  EXPECT_EQ(slurp(root / "c" / "history.csv"), slurp(root / "a" / "history.csv"));
  EXPECT_EQ(slurp(root / "c" / "checkpoints" / "last.g.bin"), slurp(root / "a" / "checkpoints" / "last.g.bin"));
  EXPECT_TRUE(c.g.params() == a.g.params());
  std::filesystem::remove_all(root);
}

TEST(Train, AblationsSkipTheirHalf) {
  auto fx = make_fixture();
  auto cfg = fx.cfg;
  cfg.max_dual_epochs = 1;
  cfg.ablation = Ablation::RlOnly;
  auto rl = train(fx.f, fx.g, fx.clf, fx.task.corpus, fx.vocab, cfg);
  EXPECT_EQ(rl.state.history[0].teacher_forcing_updates, 0);
  EXPECT_GT(rl.state.history[0].mean_reward, 0.0);
  cfg.ablation = Ablation::MleOnly;
  auto mle = train(fx.f, fx.g, fx.clf, fx.task.corpus, fx.vocab, cfg);
  EXPECT_EQ(mle.state.history[0].teacher_forcing_updates, expected_tf_updates(cfg, 0, cfg.iterations_per_epoch));
  EXPECT_EQ(mle.state.history[0].mean_reward, 0.0);
}

TEST(Train, MaxIterationsStopsTheRun) {
  auto fx = make_fixture();
  auto cfg = fx.cfg;
  cfg.max_dual_epochs = 5;
  cfg.max_iterations = 3;
  auto r = train(fx.f, fx.g, fx.clf, fx.task.corpus, fx.vocab, cfg);
  EXPECT_EQ(r.state.iteration, 3);
  EXPECT_TRUE(r.state.finished);
  EXPECT_EQ(r.state.history.size(), 2u);
}
