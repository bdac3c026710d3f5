#pragma once
// Pseudo-parallel data: template transfer through a salience lexicon for
// pre-training, and on-the-fly back-translation pairs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dualstyle/corpus.hpp"
#include "dualstyle/seq2seq.hpp"

namespace dualstyle {

struct LexiconEntry {
  std::vector<std::string> ngram;
  double salience = 0.0;
  // Neighbour counts in the entry's own training corpus; "<s>"/"</s>" at edges.
  std::map<std::string, int> left;
  std::map<std::string, int> right;
};

struct StyleLexicon {
  double lambda = 1.0;
  double gamma = 5.0;
  std::array<std::map<std::vector<std::string>, LexiconEntry>, 2> entries;

  const LexiconEntry* find(Style s, const std::vector<std::string>& ngram) const;
};

// salience(u, s) = (count(u, D_s) + lambda) / (count(u, D_other) + lambda);
// u (n <= 2) is marked style-s iff salience >= gamma.
StyleLexicon build_style_lexicon(const StyleCorpus& corpus, double lambda = 1.0, double gamma = 5.0);
double salience(double count_own, double count_other, double lambda);

struct TemplateResult {
  std::vector<std::string> tokens;
  bool applied = false;
};

// Deletes the marked source-style n-grams and fills each site with the
// target-style entry whose neighbour counts best match the site.
TemplateResult template_transfer(const std::vector<std::string>& tokens, const StyleLexicon& lex, Style target);

enum class Provenance { Template, BackTranslation };
const char* provenance_name(Provenance p);

struct PseudoPair {
  Sentence source;
  Sentence target;
  Provenance provenance = Provenance::Template;
  std::int64_t iteration = 0;
};

struct PretrainPairs {
  std::vector<PseudoPair> forward;   // for f: X -> Y
  std::vector<PseudoPair> backward;  // for g: Y -> X
};

// One pair per training sentence; sentences without a marked n-gram become
// identity pairs. Pairs carry ids from `vocab`.
PretrainPairs make_pretrain_pairs(const StyleCorpus& corpus, const StyleLexicon& lex, const Vocabulary& vocab);

// (model(s), s): the generated sentence is the source, the corpus sentence the target.
PseudoPair back_translate_pair(const Seq2Seq& model, const Sentence& s, std::int64_t iteration,
                               const Vocabulary& vocab);
std::vector<PseudoPair> back_translate_batch(const Seq2Seq& model, std::span<const Sentence* const> sentences,
                                             std::int64_t iteration, const Vocabulary& vocab);

// source TAB target TAB provenance TAB iteration
void write_pairs_tsv(const std::filesystem::path& file, const std::vector<PseudoPair>& pairs);
std::vector<PseudoPair> read_pairs_tsv(const std::filesystem::path& file, const Vocabulary& vocab);

std::vector<SentencePair> as_training_pairs(const std::vector<PseudoPair>& pairs);

}  // namespace dualstyle
