#include "dualstyle/classifier.hpp"

#include <algorithm>
#include <numeric>

namespace dualstyle {

namespace {

constexpr double kEmbedStd = 0.01;
constexpr double kInitBound = 0.08;

std::string conv_name(int width, const char* part) { return "conv" + std::to_string(width) + "." + part; }

}  // namespace

StyleClassifier::StyleClassifier(const ClassifierConfig& config, std::uint64_t seed) : config_(config) {
  if (config.vocab_size <= kReservedIds || config.embed_dim <= 0 || config.channels <= 0 || config.widths.empty())
    throw Error(ErrorCode::ShapeMismatch, "invalid classifier dimensions");
  Rng rng(seed);
  params_.add("embed", normal_matrix(config.vocab_size, config.embed_dim, kEmbedStd, rng));
  for (int w : config.widths) {
    params_.add(conv_name(w, "w"), uniform_matrix(w * config.embed_dim, config.channels, kInitBound, rng));
    params_.add(conv_name(w, "b"), Matrix::Zero(1, config.channels));
  }
  const auto features = static_cast<Eigen::Index>(config.widths.size()) * config.channels;
  params_.add("out.w", uniform_matrix(features, 2, kInitBound, rng));
  params_.add("out.b", Matrix::Zero(1, 2));
}

StyleClassifier::StyleClassifier(const ClassifierConfig& config, ParamSet params, bool frozen)
    : config_(config), params_(std::move(params)), frozen_(frozen) {
  params_.find("embed");
  params_.find("out.w");
  for (int w : config_.widths) params_.find(conv_name(w, "w"));
}

StyleClassifier StyleClassifier::zeros(const ClassifierConfig& config) {
  StyleClassifier clf(config, 0);
  for (auto& p : clf.params_) p.value.setZero();
  return clf;
}

Var StyleClassifier::logits(Tape& tape, std::span<const Sentence* const> sentences) const {
  if (sentences.empty()) throw Error(ErrorCode::EmptyList, "no sentences to classify");
  const int widest = *std::max_element(config_.widths.begin(), config_.widths.end());
  std::vector<int> lengths;
  int steps = widest;
  for (const auto* s : sentences) {
    const int n = static_cast<int>(s->length());
    if (n == 0) throw Error(ErrorCode::EmptySequence, "cannot classify an empty sentence");
    lengths.push_back(n);
    steps = std::max(steps, n);
  }
  std::vector<int> ids;
  ids.reserve(sentences.size() * static_cast<std::size_t>(steps));
  for (std::size_t b = 0; b < sentences.size(); ++b)
    for (int t = 0; t < steps; ++t) ids.push_back(t < lengths[b] ? sentences[b]->ids[static_cast<std::size_t>(t)] : kPad);
  Var x = embedding(tape.param(params_, params_.find("embed")), ids);
  std::vector<Var> pooled;
  for (int w : config_.widths) {
    Var z = tanh(conv1d(x, steps, tape.param(params_, params_.find(conv_name(w, "w"))),
                        tape.param(params_, params_.find(conv_name(w, "b"))), w));
    std::vector<int> valid;
    for (int n : lengths) valid.push_back(std::max(1, n - w + 1));
    pooled.push_back(max_over_time(z, steps - w + 1, valid));
  }
  Var features = concat_cols(pooled);
  return add(matmul(features, tape.param(params_, params_.find("out.w"))), tape.param(params_, params_.find("out.b")));
}

void StyleClassifier::save(const std::filesystem::path& path, std::uint64_t vocab_hash) const {
  nlohmann::json meta = {{"kind", "cls"},
                         {"vocab_hash", std::to_string(vocab_hash)},
                         {"vocab_size", config_.vocab_size},
                         {"embed_dim", config_.embed_dim},
                         {"widths", config_.widths},
                         {"channels", config_.channels},
                         {"frozen", frozen_}};
  save_checkpoint(path, params_, meta);
}

StyleClassifier StyleClassifier::load(const std::filesystem::path& path) {
  auto [params, meta] = load_checkpoint(path);
  if (meta.value("kind", "") != "cls") throw Error(ErrorCode::BadCheckpoint, path.string() + " is not a classifier checkpoint");
  ClassifierConfig cfg;
  cfg.vocab_size = meta.at("vocab_size").get<int>();
  cfg.embed_dim = meta.at("embed_dim").get<int>();
  cfg.widths = meta.at("widths").get<std::vector<int>>();
  cfg.channels = meta.at("channels").get<int>();
  return StyleClassifier(cfg, std::move(params), meta.value("frozen", false));
}

std::array<double, 2> classify_prob(const StyleClassifier& clf, const Sentence& sentence) {
  const Sentence* s[] = {&sentence};
  return classify_prob_batch(clf, s).front();
}

std::vector<std::array<double, 2>> classify_prob_batch(const StyleClassifier& clf,
                                                       std::span<const Sentence* const> sentences) {
  Tape tape(false);
  Var p = softmax(clf.logits(tape, sentences));
  std::vector<std::array<double, 2>> out;
  out.reserve(sentences.size());
  for (Eigen::Index r = 0; r < p.rows(); ++r) out.push_back({p.value()(r, 0), p.value()(r, 1)});
  return out;
}

Style predicted_style(const std::array<double, 2>& probs) { return probs[1] > probs[0] ? Style::Y : Style::X; }

double style_accuracy(const StyleClassifier& clf, std::span<const Sentence> sentences, Style target) {
  if (sentences.empty()) throw Error(ErrorCode::EmptyList, "style_accuracy of an empty list");
  std::vector<const Sentence*> ptrs;
  for (const auto& s : sentences) ptrs.push_back(&s);
  std::size_t hits = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t i = 0; i < ptrs.size(); i += kChunk) {
    const std::size_t n = std::min(kChunk, ptrs.size() - i);
    for (const auto& p : classify_prob_batch(clf, std::span(ptrs).subspan(i, n)))
      if (predicted_style(p) == target) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(sentences.size());
}

ClassifierTrainResult train_classifier(const StyleCorpus& corpus, const ClassifierTrainConfig& cfg) {
  struct Item {
    const Sentence* s;
    int label;
  };
  std::vector<Item> train;
  for (Style st : {Style::X, Style::Y})
    for (const auto& s : corpus.side(st)[Split::Train]) train.push_back({&s, index_of(st)});
  if (corpus.side(Style::X)[Split::Dev].empty() || corpus.side(Style::Y)[Split::Dev].empty())
    throw Error(ErrorCode::EmptyList, "classifier training needs dev splits for both styles");

  auto dev_accuracy = [&corpus](const StyleClassifier& clf) {
    const auto& dx = corpus.side(Style::X)[Split::Dev];
    const auto& dy = corpus.side(Style::Y)[Split::Dev];
    const double hits = style_accuracy(clf, dx, Style::X) * static_cast<double>(dx.size()) +
                        style_accuracy(clf, dy, Style::Y) * static_cast<double>(dy.size());
    return hits / static_cast<double>(dx.size() + dy.size());
  };

  StyleClassifier clf(cfg.model, cfg.seed);
  AdamConfig ac;
  ac.lr = cfg.lr;
  AdamState opt = make_adam(clf.params(), ac);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  ClassifierTrainResult best{clf, -1.0};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t i = 0; i < train.size(); i += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t n = std::min(static_cast<std::size_t>(cfg.batch), train.size() - i);
      std::vector<const Sentence*> batch;
      std::vector<int> labels;
      for (std::size_t j = 0; j < n; ++j) {
        batch.push_back(train[i + j].s);
        labels.push_back(train[i + j].label);
      }
      Tape tape;
      Var loss = masked_mean(cross_entropy(clf.logits(tape, batch), labels),
                             Matrix::Ones(static_cast<Eigen::Index>(n), 1));
      tape.backward(loss);
      adam_step(clf.params(), tape.gradients(clf.params()), opt);
    }
    const double acc = dev_accuracy(clf);
    if (acc > best.dev_accuracy) best = {clf, acc};
  }
  if (cfg.epochs <= 0) best.dev_accuracy = dev_accuracy(clf);
  best.classifier.freeze();
  return best;
}

}  // namespace dualstyle
