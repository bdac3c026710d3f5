#pragma once
// Convolutional binary style classifier (embeddings, filters of several
// widths, max-over-time pooling, linear layer to two logits).

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dualstyle/corpus.hpp"
#include "dualstyle/numerics.hpp"

namespace dualstyle {

struct ClassifierConfig {
  int vocab_size = 0;
  int embed_dim = 64;
  std::vector<int> widths{1, 2, 3};
  int channels = 32;
};

class StyleClassifier {
 public:
  StyleClassifier() = default;
  StyleClassifier(const ClassifierConfig& config, std::uint64_t seed);
  StyleClassifier(const ClassifierConfig& config, ParamSet params, bool frozen);

  // Every parameter zero: P = (0.5, 0.5) for all inputs.
  static StyleClassifier zeros(const ClassifierConfig& config);

  const ClassifierConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  // B x 2 logits. Each sentence is read up to its first EOS.
  Var logits(Tape& tape, std::span<const Sentence* const> sentences) const;

  void save(const std::filesystem::path& path, std::uint64_t vocab_hash) const;
  static StyleClassifier load(const std::filesystem::path& path);

 private:
  ClassifierConfig config_;
  ParamSet params_;
  bool frozen_ = false;
};

std::array<double, 2> classify_prob(const StyleClassifier& clf, const Sentence& sentence);
// Row i holds P(X), P(Y) for sentence i.
std::vector<std::array<double, 2>> classify_prob_batch(const StyleClassifier& clf,
                                                       std::span<const Sentence* const> sentences);

// argmax class, exact ties resolve to X.
Style predicted_style(const std::array<double, 2>& probs);

// Fraction of sentences whose argmax class is `target`. Throws EmptyList.
double style_accuracy(const StyleClassifier& clf, std::span<const Sentence> sentences, Style target);

struct ClassifierTrainConfig {
  int epochs = 5;
  int batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  ClassifierConfig model;
};

struct ClassifierTrainResult {
  StyleClassifier classifier;  // best-dev snapshot, frozen
  double dev_accuracy = 0.0;
};

// Cross-entropy training on (sentence, style) pairs from the train splits;
// keeps the snapshot with the best dev accuracy over both styles.
ClassifierTrainResult train_classifier(const StyleCorpus& corpus, const ClassifierTrainConfig& cfg);

}  // namespace dualstyle
