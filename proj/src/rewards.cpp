#include "dualstyle/rewards.hpp"

#include <cmath>

#include "dualstyle/eval.hpp"

namespace dualstyle {

void RewardConfig::validate() const {
  if (!(beta > 0.0)) throw Error(ErrorCode::BadConfig, "beta must be > 0");
  if (k < 1) throw Error(ErrorCode::BadConfig, "sample size K must be >= 1");
}

double style_reward(const StyleClassifier& clf, const Sentence& y_prime, Style target) {
  return classify_prob(clf, y_prime)[static_cast<std::size_t>(index_of(target))];
}

double content_reward_from_log_prob(double log_prob, std::size_t steps, bool length_normalize) {
  if (steps == 0) throw Error(ErrorCode::EmptySequence, "content reward over an empty target");
  const double v = length_normalize ? std::exp(log_prob / static_cast<double>(steps)) : std::exp(log_prob);
  return std::clamp(v, 0.0, 1.0);
}

double content_reward(const Seq2Seq& backward, const Sentence& y_prime, const Sentence& x, const RewardConfig& cfg) {
  if (y_prime.ids.empty() || x.ids.empty()) throw Error(ErrorCode::EmptySequence, "content reward needs ids");
  return content_reward_from_log_prob(log_prob(backward, y_prime, x), x.ids.size(), cfg.length_normalize_content);
}

double combine(double r_style, double r_content, double beta) {
  const double b2 = beta * beta;
  const double denom = b2 * r_content + r_style;
  if (denom <= 0.0) return 0.0;
  return (1.0 + b2) * r_content * r_style / denom;
}

double bleu_content_reward(const Seq2Seq& backward, const Sentence& y_prime, const Sentence& x, const Vocabulary& vocab) {
  const Sentence back = from_ids(greedy_decode(backward, y_prime).ids, vocab);
  const Tokens refs[] = {x.surface};
  return smoothed_sentence_bleu(back.surface, refs);
}

}  // namespace dualstyle
