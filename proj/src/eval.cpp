#include "dualstyle/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace dualstyle {

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts count_ngrams(const Tokens& tokens, std::size_t n) {
  NgramCounts out;
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++out[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                   tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

Tokens surface_of(const Sentence& s) { return s.surface; }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

NgramStats& NgramStats::operator+=(const NgramStats& other) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += other.matches[n];
    totals[n] += other.totals[n];
  }
  candidate_length += other.candidate_length;
  reference_length += other.reference_length;
  return *this;
}

NgramStats bleu_stats(const Tokens& candidate, std::span<const Tokens> references) {
  if (references.empty()) throw Error(ErrorCode::MissingReference, "empty reference set");
  NgramStats st;
  st.candidate_length = static_cast<double>(candidate.size());
  double closest = -1.0;
  double closest_diff = 0.0;
  for (const auto& r : references) {
    const double len = static_cast<double>(r.size());
    const double diff = std::abs(len - st.candidate_length);
    if (closest < 0.0 || diff < closest_diff || (diff == closest_diff && len < closest)) {
      closest = len;
      closest_diff = diff;
    }
  }
  st.reference_length = closest;
  for (std::size_t n = 1; n <= 4; ++n) {
    const NgramCounts cand = count_ngrams(candidate, n);
    NgramCounts max_ref;
    for (const auto& r : references)
      for (const auto& [g, c] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
    double matched = 0.0, total = 0.0;
    for (const auto& [g, c] : cand) {
      total += c;
      if (auto it = max_ref.find(g); it != max_ref.end()) matched += std::min(c, it->second);
    }
    st.matches[n - 1] = matched;
    st.totals[n - 1] = total;
  }
  return st;
}

double bleu_from_stats(const NgramStats& st, bool smooth) {
  if (st.candidate_length <= 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double m = st.matches[n], t = st.totals[n];
    if (smooth && n > 0) {
      m += 1.0;
      t += 1.0;
    }
    if (m <= 0.0 || t <= 0.0) return 0.0;
    log_sum += std::log(m / t);
  }
  double bp = 1.0;
  if (st.candidate_length < st.reference_length) bp = std::exp(1.0 - st.reference_length / st.candidate_length);
  return bp * std::exp(log_sum / 4.0);
}

double corpus_bleu(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references) {
  if (candidates.size() != references.size())
    throw Error(ErrorCode::LengthMismatch, std::to_string(candidates.size()) + " candidates vs " +
                                               std::to_string(references.size()) + " reference sets");
  if (candidates.empty()) throw Error(ErrorCode::EmptyList, "corpus_bleu of nothing");
  NgramStats total;
  for (std::size_t i = 0; i < candidates.size(); ++i) total += bleu_stats(candidates[i], references[i]);
  return 100.0 * bleu_from_stats(total, false);
}

double corpus_bleu(std::span<const Sentence> candidates, std::span<const std::vector<Sentence>> references) {
  std::vector<Tokens> c;
  std::vector<std::vector<Tokens>> r;
  for (const auto& s : candidates) c.push_back(surface_of(s));
  for (const auto& set : references) {
    std::vector<Tokens> rs;
    for (const auto& s : set) rs.push_back(surface_of(s));
    r.push_back(std::move(rs));
  }
  return corpus_bleu(std::span<const Tokens>(c), std::span<const std::vector<Tokens>>(r));
}

double smoothed_sentence_bleu(const Tokens& candidate, std::span<const Tokens> references) {
  return bleu_from_stats(bleu_stats(candidate, references), true);
}

OverallScores g2h2(double acc, double bleu) {
  OverallScores s;
  s.g2 = std::sqrt(acc * bleu);
  s.h2 = acc + bleu > 0.0 ? 2.0 * acc * bleu / (acc + bleu) : 0.0;
  return s;
}

nlohmann::json EvalReport::to_json() const {
  return {{"acc", acc}, {"bleu", bleu}, {"g2", g2}, {"h2", h2}, {"n_sentences", n_sentences}, {"config_hash", config_hash}};
}

void EvalReport::write(const std::filesystem::path& report_json, const std::filesystem::path& records_tsv) const {
  if (report_json.has_parent_path()) std::filesystem::create_directories(report_json.parent_path());
  {
    std::ofstream os(report_json, std::ios::trunc);
    if (!os) throw Error(ErrorCode::Io, "cannot write " + report_json.string());
    os << to_json().dump(2) << '\n';
  }
  std::ofstream os(records_tsv, std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + records_tsv.string());
  for (const auto& r : records)
    os << r.input << '\t' << r.output << '\t' << fmt(r.p_target) << '\t' << fmt(r.best_ref_bleu) << '\n';
}

EvalReport evaluate(const std::vector<Sentence>& inputs, const std::vector<Sentence>& outputs,
                    const std::vector<std::vector<Sentence>>& references, const StyleClassifier& clf,
                    const Vocabulary& vocab, Style target, std::string config_hash) {
  if (outputs.empty()) throw Error(ErrorCode::EmptyList, "nothing to evaluate");
  if (references.size() != outputs.size())
    throw Error(ErrorCode::LengthMismatch, "outputs and references are not line-aligned");
  if (!inputs.empty() && inputs.size() != outputs.size())
    throw Error(ErrorCode::LengthMismatch, "inputs and outputs are not line-aligned");
  for (const auto& set : references)
    if (set.empty()) throw Error(ErrorCode::MissingReference, "an output has no reference");

  std::vector<Sentence> indexed;
  indexed.reserve(outputs.size());
  for (const auto& o : outputs) indexed.push_back(to_ids(o, vocab));

  EvalReport rep;
  rep.n_sentences = outputs.size();
  rep.config_hash = std::move(config_hash);
  rep.acc = 100.0 * style_accuracy(clf, indexed, target);
  rep.bleu = corpus_bleu(outputs, references);
  const auto overall = g2h2(rep.acc, rep.bleu);
  rep.g2 = overall.g2;
  rep.h2 = overall.h2;

  std::vector<const Sentence*> ptrs;
  for (const auto& s : indexed) ptrs.push_back(&s);
  std::vector<std::array<double, 2>> probs;
  constexpr std::size_t kChunk = 256;
  for (std::size_t i = 0; i < ptrs.size(); i += kChunk) {
    auto part = classify_prob_batch(clf, std::span(ptrs).subspan(i, std::min(kChunk, ptrs.size() - i)));
    probs.insert(probs.end(), part.begin(), part.end());
  }
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    EvalRecord r;
    r.input = inputs.empty() ? "" : join(inputs[i].surface);
    r.output = join(outputs[i].surface);
    double best = 0.0;
    for (const auto& ref : references[i]) {
      r.references.push_back(join(ref.surface));
      const Tokens one[] = {ref.surface};
      best = std::max(best, 100.0 * smoothed_sentence_bleu(outputs[i].surface, one));
    }
    r.best_ref_bleu = best;
    r.p_target = probs[i][static_cast<std::size_t>(index_of(target))];
    rep.records.push_back(std::move(r));
  }
  return rep;
}

EvalReport evaluate_files(const std::filesystem::path& outputs_file,
                          const std::vector<std::filesystem::path>& reference_files, const StyleClassifier& clf,
                          const Vocabulary& vocab, Style target,
                          const std::optional<std::filesystem::path>& inputs_file, std::string config_hash) {
  if (reference_files.empty()) throw Error(ErrorCode::MissingReference, "no reference files given");
  auto outputs = read_sentences(outputs_file);
  std::vector<std::vector<Sentence>> refs(outputs.size());
  for (const auto& f : reference_files) {
    if (!std::filesystem::exists(f)) throw Error(ErrorCode::MissingReference, f.string() + " does not exist");
    auto column = read_sentences(f);
    if (column.size() != outputs.size())
      throw Error(ErrorCode::LengthMismatch, f.string() + " has " + std::to_string(column.size()) + " lines, outputs have " +
                                                 std::to_string(outputs.size()));
    for (std::size_t i = 0; i < column.size(); ++i) refs[i].push_back(std::move(column[i]));
  }
  std::vector<Sentence> inputs;
  if (inputs_file) inputs = read_sentences(*inputs_file);
  return evaluate(inputs, outputs, refs, clf, vocab, target, std::move(config_hash));
}

std::string emit_curves(std::span<const EpochRecord> history) {
  if (history.empty()) throw Error(ErrorCode::EmptyList, "empty training history");
  std::ostringstream os;
  os << "epoch,iteration,dev_acc,dev_bleu,dev_score,mean_style_reward,mean_content_reward,mean_reward\n";
  for (const auto& r : history)
    os << r.epoch << ',' << r.iteration << ',' << fmt(r.dev_acc) << ',' << fmt(r.dev_bleu) << ',' << fmt(r.dev_score)
       << ',' << fmt(r.mean_style_reward) << ',' << fmt(r.mean_content_reward) << ',' << fmt(r.mean_reward) << '\n';
  return os.str();
}

}  // namespace dualstyle
