#pragma once
// Style, content and combined rewards for a transferred sentence.

#include "dualstyle/classifier.hpp"
#include "dualstyle/corpus.hpp"
#include "dualstyle/seq2seq.hpp"

namespace dualstyle {

enum class ContentVariant { ReconstructionProb, BleuDoublePrime };

struct RewardConfig {
  double beta = 0.5;
  int k = 4;
  bool length_normalize_content = true;
  ContentVariant content_variant = ContentVariant::ReconstructionProb;

  void validate() const;  // throws BadConfig
};

struct RewardBreakdown {
  double r_style = 0.0;
  double r_content = 0.0;
  double r_total = 0.0;
};

// P(target | y'), read from the frozen classifier.
double style_reward(const StyleClassifier& clf, const Sentence& y_prime, Style target);

// P(x | y') under the backward model, optionally as the per-token geometric mean.
double content_reward(const Seq2Seq& backward, const Sentence& y_prime, const Sentence& x, const RewardConfig& cfg);
// Same from an already computed log P(x | y') over `steps` target positions.
double content_reward_from_log_prob(double log_prob, std::size_t steps, bool length_normalize);

// Weighted harmonic mean (1+b^2) Rc Rs / (b^2 Rc + Rs); 0 when both are 0.
double combine(double r_style, double r_content, double beta);

// Greedy back-transfer x'' = g(y') scored by smoothed sentence BLEU against x.
// Sentences need surface tokens; `vocab` maps the decoded ids back.
double bleu_content_reward(const Seq2Seq& backward, const Sentence& y_prime, const Sentence& x, const Vocabulary& vocab);

}  // namespace dualstyle
