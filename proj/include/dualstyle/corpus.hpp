#pragma once
// Tokenization, shared vocabulary, style corpora on disk, and the synthetic
// style-transfer tasks with gold references.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dualstyle/error.hpp"

namespace dualstyle {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kReservedIds = 4;

enum class Style : int { X = 0, Y = 1 };

inline Style opposite(Style s) { return s == Style::X ? Style::Y : Style::X; }
inline int index_of(Style s) { return static_cast<int>(s); }

struct StyleLabel {
  Style id = Style::X;
  std::string name;
};

struct Sentence {
  std::vector<int> ids;  // EOS-terminated unless produced by a truncated decode
  std::vector<std::string> surface;

  // Number of tokens before EOS.
  std::size_t length() const;
  bool operator==(const Sentence&) const = default;
};

enum class Split : int { Train = 0, Dev = 1, Test = 2 };
inline constexpr std::array<Split, 3> kSplits = {Split::Train, Split::Dev, Split::Test};
const char* split_name(Split s);

struct CorpusSide {
  std::array<std::vector<Sentence>, 3> splits;
  // refs[split][i] holds the gold references (opposite style) of sentence i.
  // Only dev/test carry them, and only when the source provides them.
  std::array<std::vector<std::vector<Sentence>>, 3> refs;

  std::vector<Sentence>& operator[](Split s) { return splits[static_cast<int>(s)]; }
  const std::vector<Sentence>& operator[](Split s) const { return splits[static_cast<int>(s)]; }
};

struct StyleCorpus {
  std::array<StyleLabel, 2> labels{StyleLabel{Style::X, "x"}, StyleLabel{Style::Y, "y"}};
  std::array<CorpusSide, 2> sides;

  CorpusSide& side(Style s) { return sides[static_cast<int>(s)]; }
  const CorpusSide& side(Style s) const { return sides[static_cast<int>(s)]; }
  // Throws InvalidSpec when a style has no training sentences or labels clash.
  void validate() const;
};

class Vocabulary {
 public:
  Vocabulary();

  // Frequency-descending, then lexicographic, over the training splits of both
  // styles. Tokens seen fewer than min_count times are left out (map to UNK).
  static Vocabulary build(const StyleCorpus& corpus, int min_count);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  int id(std::string_view token) const;  // UNK when absent
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::uint64_t hash() const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void insert(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Whitespace split. Throws EmptyLine when no token remains.
Sentence tokenize(std::string_view raw_line);

// Fills ids from the surface tokens and appends EOS.
Sentence to_ids(const Sentence& sentence, const Vocabulary& vocab);
// Surface tokens for the ids before the first EOS (PAD skipped).
Sentence from_ids(std::vector<int> ids, const Vocabulary& vocab);
// Assigns ids to every sentence (and reference) of the corpus.
void index_corpus(StyleCorpus& corpus, const Vocabulary& vocab);
std::string join(const std::vector<std::string>& tokens);

// ---- files ------------------------------------------------------------------
// <style>.<split>.txt, one sentence per line; <style>.<split>.ref<k>.txt hold
// line-aligned references.
void write_corpus(const StyleCorpus& corpus, const std::filesystem::path& dir);
StyleCorpus read_corpus(const std::filesystem::path& dir, const std::string& x_name, const std::string& y_name);
std::vector<Sentence> read_sentences(const std::filesystem::path& file);
void write_sentences(const std::filesystem::path& file, const std::vector<Sentence>& sentences);

// ---- synthetic tasks ----------------------------------------------------------

enum class SyntheticKind { LexiconSwap, Casing, Marker };
const char* kind_name(SyntheticKind k);
SyntheticKind parse_kind(std::string_view name);

struct SyntheticTaskSpec {
  SyntheticKind kind = SyntheticKind::LexiconSwap;
  int vocab_size = 200;        // upper bound on distinct surface tokens
  int max_len = 12;            // tokens per sentence, EOS excluded
  int pair_count = 24;         // style lexicon pairs
  int train_per_style = 4000;
  int dev_per_style = 400;
  int test_per_style = 400;
  std::uint64_t seed = 7;
};

struct SyntheticTask {
  StyleCorpus corpus;
  // Bijective gold substitution between style words (both directions).
  std::map<std::string, std::string> gold_map;
  // Style of every lexicon word.
  std::map<std::string, Style> lexicon_style;

  // Applies the gold transfer to a surface sentence.
  std::vector<std::string> transfer(const std::vector<std::string>& tokens) const;
  // Lexicon-lookup style oracle: majority of style words, ties to X.
  Style oracle_style(const std::vector<std::string>& tokens) const;
};

SyntheticTask generate_synthetic(const SyntheticTaskSpec& spec);

}  // namespace dualstyle
