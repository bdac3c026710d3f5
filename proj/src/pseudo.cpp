#include "dualstyle/pseudo.hpp"

#include <fstream>
#include <sstream>

namespace dualstyle {

namespace {

using Ngram = std::vector<std::string>;
using NgramCounts = std::map<Ngram, int>;

NgramCounts count_side(const std::vector<Sentence>& sentences) {
  NgramCounts counts;
  for (const auto& s : sentences) {
    const auto& t = s.surface;
    for (std::size_t i = 0; i < t.size(); ++i) {
      ++counts[{t[i]}];
      if (i + 1 < t.size()) ++counts[{t[i], t[i + 1]}];
    }
  }
  return counts;
}

const std::string& left_of(const std::vector<std::string>& t, std::size_t i) {
  static const std::string kStart = "<s>";
  return i == 0 ? kStart : t[i - 1];
}

const std::string& right_of(const std::vector<std::string>& t, std::size_t end) {
  static const std::string kEnd = "</s>";
  return end >= t.size() ? kEnd : t[end];
}

int lookup(const std::map<std::string, int>& m, const std::string& key) {
  auto it = m.find(key);
  return it == m.end() ? 0 : it->second;
}

}  // namespace

const LexiconEntry* StyleLexicon::find(Style s, const std::vector<std::string>& ngram) const {
  const auto& m = entries[static_cast<std::size_t>(index_of(s))];
  auto it = m.find(ngram);
  return it == m.end() ? nullptr : &it->second;
}

double salience(double count_own, double count_other, double lambda) {
  return (count_own + lambda) / (count_other + lambda);
}

StyleLexicon build_style_lexicon(const StyleCorpus& corpus, double lambda, double gamma) {
  if (!(lambda > 0.0)) throw Error(ErrorCode::BadConfig, "lambda must be > 0");
  StyleLexicon lex;
  lex.lambda = lambda;
  lex.gamma = gamma;
  const std::array<NgramCounts, 2> counts = {count_side(corpus.side(Style::X)[Split::Train]),
                                             count_side(corpus.side(Style::Y)[Split::Train])};
  for (int s = 0; s < 2; ++s) {
    const auto& own = counts[static_cast<std::size_t>(s)];
    const auto& other = counts[static_cast<std::size_t>(1 - s)];
    for (const auto& [g, c] : own) {
      auto it = other.find(g);
      const double sal = salience(c, it == other.end() ? 0.0 : it->second, lambda);
      if (sal >= gamma) lex.entries[static_cast<std::size_t>(s)][g] = LexiconEntry{g, sal, {}, {}};
    }
    auto& entries = lex.entries[static_cast<std::size_t>(s)];
    for (const auto& sent : corpus.side(static_cast<Style>(s))[Split::Train]) {
      const auto& t = sent.surface;
      for (std::size_t i = 0; i < t.size(); ++i)
        for (std::size_t n = 1; n <= 2 && i + n <= t.size(); ++n) {
          auto it = entries.find(Ngram(t.begin() + static_cast<std::ptrdiff_t>(i),
                                       t.begin() + static_cast<std::ptrdiff_t>(i + n)));
          if (it == entries.end()) continue;
          ++it->second.left[left_of(t, i)];
          ++it->second.right[right_of(t, i + n)];
        }
    }
  }
  return lex;
}

TemplateResult template_transfer(const std::vector<std::string>& tokens, const StyleLexicon& lex, Style target) {
  const Style source = opposite(target);
  const auto& candidates = lex.entries[static_cast<std::size_t>(index_of(target))];
  TemplateResult out;
  std::size_t i = 0;
  while (i < tokens.size()) {
    std::size_t len = 0;
    if (lex.find(source, {tokens[i]})) {
      len = 1;
    } else if (i + 1 < tokens.size() && !lex.find(source, {tokens[i + 1]}) &&
               lex.find(source, {tokens[i], tokens[i + 1]})) {
      len = 2;
    }
    if (len == 0 || candidates.empty()) {
      out.tokens.push_back(tokens[i]);
      ++i;
      continue;
    }
    const std::string& left = left_of(tokens, i);
    const std::string& right = right_of(tokens, i + len);
    bool same_size_exists = false;
    for (const auto& [g, e] : candidates) same_size_exists = same_size_exists || g.size() == len;
    const LexiconEntry* best = nullptr;
    int best_score = -1;
    for (const auto& [g, e] : candidates) {
      if (same_size_exists && g.size() != len) continue;
      const int score = lookup(e.left, left) + lookup(e.right, right);
      // map order is lexicographic, so strict comparisons keep the smallest on full ties
      if (!best || score > best_score || (score == best_score && e.salience > best->salience)) {
        best = &e;
        best_score = score;
      }
    }
    out.tokens.insert(out.tokens.end(), best->ngram.begin(), best->ngram.end());
    out.applied = true;
    i += len;
  }
  return out;
}

const char* provenance_name(Provenance p) { return p == Provenance::Template ? "template" : "back_translation"; }

PretrainPairs make_pretrain_pairs(const StyleCorpus& corpus, const StyleLexicon& lex, const Vocabulary& vocab) {
  PretrainPairs out;
  for (Style st : {Style::X, Style::Y}) {
    auto& dest = st == Style::X ? out.forward : out.backward;
    for (const auto& s : corpus.side(st)[Split::Train]) {
      auto tr = template_transfer(s.surface, lex, opposite(st));
      Sentence src{{}, s.surface};
      Sentence tgt{{}, tr.applied ? tr.tokens : s.surface};
      dest.push_back(PseudoPair{to_ids(src, vocab), to_ids(tgt, vocab), Provenance::Template, 0});
    }
  }
  return out;
}

PseudoPair back_translate_pair(const Seq2Seq& model, const Sentence& s, std::int64_t iteration, const Vocabulary& vocab) {
  const Sentence* one[] = {&s};
  return back_translate_batch(model, one, iteration, vocab).front();
}

std::vector<PseudoPair> back_translate_batch(const Seq2Seq& model, std::span<const Sentence* const> sentences,
                                             std::int64_t iteration, const Vocabulary& vocab) {
  auto generated = greedy_decode_batch(model, sentences);
  std::vector<PseudoPair> out;
  out.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    Sentence src = from_ids(generated[i].ids, vocab);
    // A decode that stops at once still needs a non-empty source.
    if (src.ids.empty()) src.ids.push_back(kEos);
    out.push_back(PseudoPair{std::move(src), *sentences[i], Provenance::BackTranslation, iteration});
  }
  return out;
}

void write_pairs_tsv(const std::filesystem::path& file, const std::vector<PseudoPair>& pairs) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  for (const auto& p : pairs)
    os << join(p.source.surface) << '\t' << join(p.target.surface) << '\t' << provenance_name(p.provenance) << '\t'
       << p.iteration << '\n';
}

std::vector<PseudoPair> read_pairs_tsv(const std::filesystem::path& file, const Vocabulary& vocab) {
  std::ifstream is(file);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + file.string());
  std::vector<PseudoPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 4) throw Error(ErrorCode::BadConfig, file.string() + ":" + std::to_string(lineno) + " needs 4 columns");
    PseudoPair p;
    p.source = to_ids(tokenize(cols[0]), vocab);
    p.target = to_ids(tokenize(cols[1]), vocab);
    p.provenance = cols[2] == "template" ? Provenance::Template : Provenance::BackTranslation;
    p.iteration = std::stoll(cols[3]);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<SentencePair> as_training_pairs(const std::vector<PseudoPair>& pairs) {
  std::vector<SentencePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.source, p.target});
  return out;
}

}  // namespace dualstyle
