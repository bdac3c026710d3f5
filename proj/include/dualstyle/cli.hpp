#pragma once
// Command-line composition of the library: corpus synthesis, classifier and
// model pre-training, pseudo pairs, dual training, transfer, evaluation and
// ablations. Every command reads a flat JSON config; flags override it.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualstyle/classifier.hpp"
#include "dualstyle/corpus.hpp"
#include "dualstyle/dualrl.hpp"

namespace dualstyle {

struct RunConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path run_dir = "run";
  std::uint64_t seed = 1;

  SyntheticTaskSpec synth;
  int min_count = 1;

  int embed_dim = 300;
  int hidden_dim = 256;

  ClassifierTrainConfig classifier;

  double lexicon_lambda = 1.0;
  double lexicon_gamma = 5.0;

  TrainConfig train;

  // Flat key set, defaults applied.
  nlohmann::json to_json() const;
  // Unknown keys throw BadConfig.
  static RunConfig from_json(const nlohmann::json& j);
};

// Overrides `base` with "key=value" assignments; values parse as JSON when
// they can and as strings otherwise.
nlohmann::json apply_overrides(nlohmann::json base, const std::vector<std::string>& assignments);

// Paths inside a run directory.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path vocab() const { return root / "vocab.txt"; }
  std::filesystem::path classifier() const { return root / "classifier.bin"; }
  std::filesystem::path pseudo_dir() const { return root / "pseudo"; }
  std::filesystem::path pretrained(char which) const { return root / "pretrain" / (std::string(1, which) + ".bin"); }
  std::filesystem::path train_dir(Ablation a) const;
  std::filesystem::path best(Ablation a, char which) const {
    return train_dir(a) / "checkpoints" / (std::string("best.") + which + ".bin");
  }
};

void save_vocab(const std::filesystem::path& file, const Vocabulary& vocab);
Vocabulary load_vocab(const std::filesystem::path& file);

// Reads the corpus in cfg.data_dir (labels from labels.json when present).
StyleCorpus load_corpus(const RunConfig& cfg);

// Entry point; returns the process exit status. Logs go to `log`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& log);

}  // namespace dualstyle
