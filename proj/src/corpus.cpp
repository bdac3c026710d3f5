#include "dualstyle/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "dualstyle/numerics.hpp"

namespace dualstyle {

std::size_t Sentence::length() const {
  auto it = std::find(ids.begin(), ids.end(), kEos);
  if (!ids.empty()) return static_cast<std::size_t>(it - ids.begin());
  return surface.size();
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

void StyleCorpus::validate() const {
  if (labels[0].name.empty() || labels[1].name.empty() || labels[0].name == labels[1].name)
    throw Error(ErrorCode::InvalidSpec, "style labels must be two distinct names");
  for (const auto& side : sides)
    if (side[Split::Train].empty()) throw Error(ErrorCode::InvalidSpec, "a style has no training sentences");
}

// ---- vocabulary ---------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<unk>", "<s>", "</s>"}) insert(t);
}

void Vocabulary::insert(const std::string& token) {
  if (index_.count(token)) return;
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const StyleCorpus& corpus, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& side : corpus.sides)
    for (const auto& s : side[Split::Train])
      for (const auto& tok : s.surface) ++counts[tok];
  std::vector<std::pair<std::string, int>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [tok, n] : ordered)
    if (n >= min_count) v.insert(tok);
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i < static_cast<std::size_t>(kReservedIds)) {
      if (tokens[i] != v.tokens_[i]) throw Error(ErrorCode::BadCheckpoint, "reserved token layout differs");
      continue;
    }
    v.insert(tokens[i]);
  }
  return v;
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end() || it->second < kReservedIds) return kUnk;
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) return tokens_[kUnk];
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const { return id(token) != kUnk; }

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  }
  return h;
}

// ---- sentences ------------------------------------------------------------------

Sentence tokenize(std::string_view raw_line) {
  Sentence s;
  std::size_t i = 0;
  while (i < raw_line.size()) {
    while (i < raw_line.size() && std::isspace(static_cast<unsigned char>(raw_line[i]))) ++i;
    std::size_t j = i;
    while (j < raw_line.size() && !std::isspace(static_cast<unsigned char>(raw_line[j]))) ++j;
    if (j > i) s.surface.emplace_back(raw_line.substr(i, j - i));
    i = j;
  }
  if (s.surface.empty()) throw Error(ErrorCode::EmptyLine, "line has no tokens");
  return s;
}

Sentence to_ids(const Sentence& sentence, const Vocabulary& vocab) {
  Sentence out;
  out.surface = sentence.surface;
  out.ids.reserve(sentence.surface.size() + 1);
  for (const auto& tok : sentence.surface) out.ids.push_back(vocab.id(tok));
  out.ids.push_back(kEos);
  return out;
}

Sentence from_ids(std::vector<int> ids, const Vocabulary& vocab) {
  Sentence out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad) continue;
    out.surface.push_back(vocab.token(id));
  }
  out.ids = std::move(ids);
  return out;
}

void index_corpus(StyleCorpus& corpus, const Vocabulary& vocab) {
  for (auto& side : corpus.sides) {
    for (auto& split : side.splits)
      for (auto& s : split) s = to_ids(s, vocab);
    for (auto& split_refs : side.refs)
      for (auto& refs : split_refs)
        for (auto& r : refs) r = to_ids(r, vocab);
  }
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ---- files ------------------------------------------------------------------

std::vector<Sentence> read_sentences(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + file.string());
  std::vector<Sentence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    try {
      out.push_back(tokenize(line));
    } catch (const Error& e) {
      throw Error(e.code(), file.string() + ":" + std::to_string(lineno) + " is empty");
    }
  }
  return out;
}

void write_sentences(const std::filesystem::path& file, const std::vector<Sentence>& sentences) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + file.string());
  for (const auto& s : sentences) out << join(s.surface) << '\n';
}

void write_corpus(const StyleCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (int st = 0; st < 2; ++st) {
    const auto& name = corpus.labels[st].name;
    const auto& side = corpus.sides[st];
    for (Split sp : kSplits) {
      const std::string stem = name + "." + split_name(sp);
      write_sentences(dir / (stem + ".txt"), side[sp]);
      const auto& refs = side.refs[static_cast<int>(sp)];
      if (refs.empty()) continue;
      std::size_t k_count = 0;
      for (const auto& r : refs) k_count = std::max(k_count, r.size());
      for (std::size_t k = 0; k < k_count; ++k) {
        std::vector<Sentence> column;
        for (const auto& r : refs) {
          if (r.size() <= k) throw Error(ErrorCode::MissingReference, "ragged reference sets");
          column.push_back(r[k]);
        }
        write_sentences(dir / (stem + ".ref" + std::to_string(k) + ".txt"), column);
      }
    }
  }
}

StyleCorpus read_corpus(const std::filesystem::path& dir, const std::string& x_name, const std::string& y_name) {
  StyleCorpus corpus;
  corpus.labels = {StyleLabel{Style::X, x_name}, StyleLabel{Style::Y, y_name}};
  for (int st = 0; st < 2; ++st) {
    auto& side = corpus.sides[st];
    const auto& name = corpus.labels[st].name;
    for (Split sp : kSplits) {
      const std::string stem = name + "." + split_name(sp);
      const auto file = dir / (stem + ".txt");
      if (!std::filesystem::exists(file)) {
        if (sp == Split::Train) throw Error(ErrorCode::Io, "missing " + file.string());
        continue;
      }
      side[sp] = read_sentences(file);
      auto& refs = side.refs[static_cast<int>(sp)];
      for (int k = 0;; ++k) {
        const auto ref_file = dir / (stem + ".ref" + std::to_string(k) + ".txt");
        if (!std::filesystem::exists(ref_file)) break;
        auto column = read_sentences(ref_file);
        if (column.size() != side[sp].size())
          throw Error(ErrorCode::LengthMismatch, ref_file.string() + " is not line-aligned");
        refs.resize(column.size());
        for (std::size_t i = 0; i < column.size(); ++i) refs[i].push_back(std::move(column[i]));
      }
    }
  }
  corpus.validate();
  return corpus;
}

// ---- synthetic tasks --------------------------------------------------------------

const char* kind_name(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::LexiconSwap: return "lexicon_swap";
    case SyntheticKind::Casing: return "casing";
    case SyntheticKind::Marker: return "marker";
  }
  return "?";
}

SyntheticKind parse_kind(std::string_view name) {
  if (name == "lexicon_swap") return SyntheticKind::LexiconSwap;
  if (name == "casing") return SyntheticKind::Casing;
  if (name == "marker") return SyntheticKind::Marker;
  throw Error(ErrorCode::InvalidSpec, "unknown synthetic kind " + std::string(name));
}

std::vector<std::string> SyntheticTask::transfer(const std::vector<std::string>& tokens) const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    auto it = gold_map.find(t);
    out.push_back(it == gold_map.end() ? t : it->second);
  }
  return out;
}

Style SyntheticTask::oracle_style(const std::vector<std::string>& tokens) const {
  int votes[2] = {0, 0};
  for (const auto& t : tokens)
    if (auto it = lexicon_style.find(t); it != lexicon_style.end()) ++votes[index_of(it->second)];
  return votes[1] > votes[0] ? Style::Y : Style::X;
}

namespace {

// Negative (X) / positive (Y) adjective pairs.
constexpr std::pair<const char*, const char*> kAdjectivePairs[] = {
    {"bland", "tasty"},     {"rude", "friendly"},   {"slow", "fast"},       {"dirty", "clean"},
    {"cold", "warm"},       {"stale", "fresh"},     {"noisy", "quiet"},     {"pricey", "cheap"},
    {"awful", "great"},     {"boring", "fun"},      {"soggy", "crispy"},    {"greasy", "light"},
    {"dull", "bright"},     {"grumpy", "cheerful"}, {"sloppy", "neat"},     {"weak", "strong"},
    {"sour", "sweet"},      {"cramped", "roomy"},   {"lazy", "helpful"},    {"gloomy", "sunny"},
    {"flat", "fizzy"},      {"burnt", "golden"},    {"mediocre", "superb"}, {"rusty", "shiny"},
    {"bitter", "mellow"},   {"shabby", "elegant"},  {"tough", "tender"},    {"weird", "lovely"},
    {"sticky", "smooth"},   {"lame", "cool"},       {"harsh", "gentle"},    {"tiny", "generous"},
};

constexpr const char* kNouns[] = {
    "pizza",  "burger", "soup",   "salad",   "waiter",  "waitress", "bus",     "cab",    "floor",   "table",
    "oven",   "stove",  "coffee", "tea",     "bread",   "bagel",    "room",    "lobby",  "bill",    "menu",
    "movie",  "show",   "fries",  "chips",   "paint",   "lamp",     "host",    "chef",   "patio",   "garden",
    "soda",   "beer",   "steak",  "toast",   "pasta",   "curry",    "booth",   "couch",  "clerk",   "cashier",
    "window", "view",   "cake",   "cookie",  "sauce",   "gravy",    "meat",    "chicken", "portion", "plate",
    "music",  "band",   "drink",  "cocktail", "fork",   "knife",    "seat",    "chair",  "staff",   "manager",
    "pie",    "muffin", "tray",   "cup",     "sink",    "mirror",   "lounge",  "bar",    "wine",    "juice",
    "rice",   "noodle", "shrimp", "fish",    "wall",    "door",     "car",     "truck",  "guide",   "driver",
};

constexpr const char* kPlaces[] = {"door", "station", "park", "mall", "bank", "school", "river", "bridge"};
constexpr const char* kFillers[] = {"rice", "beans", "water", "napkins", "lemon", "ice"};
constexpr const char* kNeutralNouns[] = {"tip", "receipt", "parking", "weather", "music", "line"};

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

struct Lexicon {
  std::vector<std::array<std::string, 2>> pairs;  // [X word, Y word]
  std::vector<std::vector<std::string>> nouns;    // nouns bound to each pair
};

Lexicon make_lexicon(const SyntheticTaskSpec& spec) {
  Lexicon lex;
  const int n_pairs = spec.kind == SyntheticKind::Marker ? 1 : spec.pair_count;
  const std::size_t nouns_per_pair = 3;
  std::set<std::string> used;
  for (const char* p : kPlaces) used.insert(p);
  for (const char* p : kFillers) used.insert(p);
  for (const char* p : kNeutralNouns) used.insert(p);
  std::size_t next_noun = 0;
  auto fresh_noun = [&](int k, std::size_t j) {
    while (next_noun < std::size(kNouns) && used.count(kNouns[next_noun])) ++next_noun;
    std::string n = next_noun < std::size(kNouns) ? kNouns[next_noun++]
                                                 : "item" + std::to_string(k) + "_" + std::to_string(j);
    used.insert(n);
    return n;
  };
  for (int k = 0; k < n_pairs; ++k) {
    std::array<std::string, 2> pair;
    if (spec.kind == SyntheticKind::Marker) {
      pair = {".", "!"};
    } else if (k < static_cast<int>(std::size(kAdjectivePairs))) {
      if (spec.kind == SyntheticKind::Casing)
        pair = {kAdjectivePairs[k].second, upper(kAdjectivePairs[k].second)};
      else
        pair = {kAdjectivePairs[k].first, kAdjectivePairs[k].second};
    } else {
      const std::string base = "adj" + std::to_string(k);
      pair = spec.kind == SyntheticKind::Casing ? std::array<std::string, 2>{base, upper(base)}
                                                : std::array<std::string, 2>{"neg" + base, "pos" + base};
    }
    lex.pairs.push_back(pair);
    std::vector<std::string> nouns;
    const std::size_t count = spec.kind == SyntheticKind::Marker ? 12 : nouns_per_pair;
    for (std::size_t j = 0; j < count; ++j) nouns.push_back(fresh_noun(k, j));
    lex.nouns.push_back(std::move(nouns));
  }
  return lex;
}

// A template token: literal, or a slot.
enum class Slot { Literal, StylePhrase, Place, Filler, Neutral, BareNoun };
struct Piece {
  Slot slot;
  const char* text;
};

using Template = std::vector<Piece>;

std::vector<Template> templates() {
  auto L = [](const char* t) { return Piece{Slot::Literal, t}; };
  const Piece S{Slot::StylePhrase, ""};
  const Piece P{Slot::Place, ""};
  const Piece F{Slot::Filler, ""};
  const Piece N{Slot::Neutral, ""};
  const Piece B{Slot::BareNoun, ""};
  return {
      {L("the"), S, L("was"), L("here"), L(".")},
      {L("we"), L("got"), L("a"), S, L("and"), L("a"), S, L(".")},
      {L("i"), L("think"), L("the"), S, L("is"), L("by"), L("the"), P, L(".")},
      {L("their"), S, L("came"), L("with"), F, L(".")},
      {L("my"), L("friend"), L("ordered"), L("the"), S, L(".")},
      {L("there"), L("is"), L("a"), S, L("near"), L("the"), P, L(".")},
      {L("the"), S, L("and"), L("the"), B, L("."),},
      {L("they"), L("said"), L("the"), N, L("and"), L("the"), S, L("were"), L("new"), L(".")},
      {L("our"), S, L("arrived"), L("after"), L("the"), S, L(".")},
      {L("you"), L("get"), L("a"), S, L("with"), L("every"), N, L(".")},
  };
}

}  // namespace

SyntheticTask generate_synthetic(const SyntheticTaskSpec& spec) {
  if (spec.max_len < 6) throw Error(ErrorCode::InvalidSpec, "max_len must be at least 6");
  if (spec.kind != SyntheticKind::Marker && spec.pair_count < 1)
    throw Error(ErrorCode::InvalidSpec, "pair_count must be positive");
  if (spec.train_per_style < 1 || spec.dev_per_style < 1 || spec.test_per_style < 1)
    throw Error(ErrorCode::InvalidSpec, "split sizes must be positive");

  const Lexicon lex = make_lexicon(spec);
  SyntheticTask task;
  task.corpus.labels = {StyleLabel{Style::X, "negative"}, StyleLabel{Style::Y, "positive"}};
  if (spec.kind == SyntheticKind::Casing) task.corpus.labels = {StyleLabel{Style::X, "lower"}, StyleLabel{Style::Y, "upper"}};
  if (spec.kind == SyntheticKind::Marker) task.corpus.labels = {StyleLabel{Style::X, "plain"}, StyleLabel{Style::Y, "excited"}};
  for (const auto& p : lex.pairs) {
    task.gold_map[p[0]] = p[1];
    task.gold_map[p[1]] = p[0];
    task.lexicon_style[p[0]] = Style::X;
    task.lexicon_style[p[1]] = Style::Y;
  }

  auto tmpls = templates();
  if (spec.kind == SyntheticKind::Marker) {
    // The style lives in the final punctuation, which every template ends with.
    for (auto& t : tmpls)
      for (auto& piece : t)
        if (piece.slot == Slot::StylePhrase) piece = Piece{Slot::BareNoun, ""};
  }
  std::erase_if(tmpls, [&](const Template& t) { return static_cast<int>(t.size()) > spec.max_len; });
  if (tmpls.empty()) throw Error(ErrorCode::InvalidSpec, "no template fits max_len");

  // Vocabulary bound: count what the templates can emit.
  std::set<std::string> surface;
  for (const auto& t : tmpls)
    for (const auto& p : t)
      if (p.slot == Slot::Literal) surface.insert(p.text);
  for (std::size_t k = 0; k < lex.pairs.size(); ++k) {
    surface.insert(lex.pairs[k][0]);
    surface.insert(lex.pairs[k][1]);
    for (const auto& n : lex.nouns[k]) surface.insert(n);
  }
  for (const char* p : kPlaces) surface.insert(p);
  for (const char* p : kFillers) surface.insert(p);
  for (const char* p : kNeutralNouns) surface.insert(p);
  if (static_cast<int>(surface.size()) > spec.vocab_size)
    throw Error(ErrorCode::InvalidSpec, "task needs " + std::to_string(surface.size()) +
                                            " surface tokens, vocab_size is " + std::to_string(spec.vocab_size));

  std::vector<std::string> all_nouns;
  for (const auto& ns : lex.nouns) all_nouns.insert(all_nouns.end(), ns.begin(), ns.end());

  Rng rng(spec.seed);
  auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

  auto make_sentence = [&](Style style) {
    const Template& t = tmpls[pick(tmpls.size())];
    std::vector<std::string> toks;
    for (const auto& p : t) {
      switch (p.slot) {
        case Slot::Literal:
          if (spec.kind == SyntheticKind::Marker && std::string_view(p.text) == ".")
            toks.push_back(lex.pairs[0][index_of(style)]);
          else
            toks.push_back(p.text);
          break;
        case Slot::StylePhrase: {
          const std::size_t k = pick(lex.pairs.size());
          toks.push_back(lex.pairs[k][index_of(style)]);
          toks.push_back(lex.nouns[k][pick(lex.nouns[k].size())]);
          break;
        }
        case Slot::Place: toks.push_back(kPlaces[pick(std::size(kPlaces))]); break;
        case Slot::Filler: toks.push_back(kFillers[pick(std::size(kFillers))]); break;
        case Slot::Neutral: toks.push_back(kNeutralNouns[pick(std::size(kNeutralNouns))]); break;
        case Slot::BareNoun: toks.push_back(all_nouns[pick(all_nouns.size())]); break;
      }
    }
    return toks;
  };

  for (Style style : {Style::X, Style::Y}) {
    auto& side = task.corpus.side(style);
    std::set<std::vector<std::string>> seen;
    const int sizes[3] = {spec.train_per_style, spec.dev_per_style, spec.test_per_style};
    for (Split sp : kSplits) {
      const int want = sizes[static_cast<int>(sp)];
      int attempts = 0;
      while (static_cast<int>(side[sp].size()) < want) {
        if (++attempts > want * 200) throw Error(ErrorCode::InvalidSpec, "template space too small for split sizes");
        auto toks = make_sentence(style);
        if (!seen.insert(toks).second) continue;
        Sentence s;
        s.surface = std::move(toks);
        if (sp != Split::Train) {
          Sentence ref;
          ref.surface = task.transfer(s.surface);
          side.refs[static_cast<int>(sp)].push_back({std::move(ref)});
        }
        side[sp].push_back(std::move(s));
      }
    }
  }
  task.corpus.validate();
  return task;
}

}  // namespace dualstyle
