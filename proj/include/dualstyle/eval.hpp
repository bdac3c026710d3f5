#pragma once
// Automatic evaluation: corpus BLEU in the multi-bleu.perl convention,
// classifier accuracy, G2/H2 overall scores, reports and learning curves.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualstyle/classifier.hpp"
#include "dualstyle/corpus.hpp"

namespace dualstyle {

using Tokens = std::vector<std::string>;

// Clipped n-gram matches and candidate n-gram totals for n = 1..4, plus the
// candidate length and the closest reference length (ties to the shorter).
struct NgramStats {
  std::array<double, 4> matches{};
  std::array<double, 4> totals{};
  double candidate_length = 0.0;
  double reference_length = 0.0;

  NgramStats& operator+=(const NgramStats& other);
};

NgramStats bleu_stats(const Tokens& candidate, std::span<const Tokens> references);

// BLEU-4 with brevity penalty, as a fraction in [0,1]. Unsmoothed: zero when
// any matched count is zero. Smoothed: add-one on the n >= 2 counts.
double bleu_from_stats(const NgramStats& stats, bool smooth = false);

// Corpus-level BLEU percentage. references[i] is the reference set of
// candidates[i]. Throws LengthMismatch / MissingReference.
double corpus_bleu(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references);
double corpus_bleu(std::span<const Sentence> candidates, std::span<const std::vector<Sentence>> references);

// Sentence BLEU (fraction) with add-one smoothing on n >= 2.
double smoothed_sentence_bleu(const Tokens& candidate, std::span<const Tokens> references);

struct OverallScores {
  double g2 = 0.0;
  double h2 = 0.0;
};

// Geometric and harmonic means of two percentages; h2 is 0 when both are 0.
OverallScores g2h2(double acc, double bleu);

struct EvalRecord {
  std::string input;
  std::string output;
  std::vector<std::string> references;
  double p_target = 0.0;
  double best_ref_bleu = 0.0;  // smoothed sentence BLEU vs the best reference, percent
};

struct EvalReport {
  double acc = 0.0;
  double bleu = 0.0;
  double g2 = 0.0;
  double h2 = 0.0;
  std::size_t n_sentences = 0;
  std::string config_hash;
  std::vector<EvalRecord> records;

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& report_json, const std::filesystem::path& records_tsv) const;
};

// Scores outputs against line-aligned references with a frozen classifier.
// `inputs` may be empty, in which case the TSV input column is blank.
EvalReport evaluate(const std::vector<Sentence>& inputs, const std::vector<Sentence>& outputs,
                    const std::vector<std::vector<Sentence>>& references, const StyleClassifier& clf,
                    const Vocabulary& vocab, Style target, std::string config_hash = "");

// File form: outputs file, reference files (each line-aligned with outputs).
EvalReport evaluate_files(const std::filesystem::path& outputs_file,
                          const std::vector<std::filesystem::path>& reference_files, const StyleClassifier& clf,
                          const Vocabulary& vocab, Style target,
                          const std::optional<std::filesystem::path>& inputs_file = std::nullopt,
                          std::string config_hash = "");

// One row of dual-training history (one per epoch).
struct EpochRecord {
  int epoch = 0;
  std::int64_t iteration = 0;
  double mean_style_reward = 0.0;
  double mean_content_reward = 0.0;
  double mean_reward = 0.0;
  double dev_acc = 0.0;   // percent, averaged over both directions
  double dev_bleu = 0.0;  // percent, BLEU of outputs against their inputs
  double dev_score = 0.0;
  double teacher_forcing_loss = 0.0;
  int teacher_forcing_updates = 0;
};

// Epoch-indexed CSV for plotting. Throws EmptyList on empty history.
std::string emit_curves(std::span<const EpochRecord> history);

}  // namespace dualstyle
