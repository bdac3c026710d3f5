#include "dualstyle/seq2seq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dualstyle {

namespace {

constexpr double kInitBound = 0.08;
constexpr double kEmbedStd = 0.1;
constexpr double kBlocked = -1e9;

Matrix output_mask_row(int vocab) {
  Matrix m = Matrix::Zero(1, vocab);
  m(0, kPad) = kBlocked;
  m(0, kBos) = kBlocked;
  return m;
}

// Gate layout is [input, forget, cell, output]; the forget gate starts open.
Matrix forget_bias(int hidden) {
  Matrix b = Matrix::Zero(1, 4 * hidden);
  b.middleCols(hidden, hidden).setOnes();
  return b;
}

int argmax_row(const Matrix& m, Eigen::Index r) {
  Eigen::Index best = 0;
  m.row(r).maxCoeff(&best);
  return static_cast<int>(best);
}

std::vector<const Sentence*> pointers(std::span<const SentencePair> pairs, bool source) {
  std::vector<const Sentence*> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(source ? &p.source : &p.target);
  return out;
}

void require_nonempty(const Sentence& s, const char* what) {
  if (s.ids.empty()) throw Error(ErrorCode::EmptySequence, std::string(what) + " has no ids");
}

}  // namespace

Seq2Seq::Seq2Seq(const Seq2SeqConfig& config, std::string direction, std::uint64_t seed)
    : config_(config), direction_(std::move(direction)) {
  if (config.vocab_size <= kReservedIds || config.embed_dim <= 0 || config.hidden_dim <= 0)
    throw Error(ErrorCode::ShapeMismatch, "invalid seq2seq dimensions");
  Rng rng(seed);
  const int V = config.vocab_size, E = config.embed_dim, H = config.hidden_dim;
  embed_ = params_.add("embed", normal_matrix(V, E, kEmbedStd, rng));
  enc_w_ = params_.add("enc.w", uniform_matrix(E + H, 4 * H, kInitBound, rng));
  enc_b_ = params_.add("enc.b", forget_bias(H));
  encr_w_ = params_.add("encr.w", uniform_matrix(E + H, 4 * H, kInitBound, rng));
  encr_b_ = params_.add("encr.b", forget_bias(H));
  init_w_ = params_.add("init.w", uniform_matrix(2 * H, H, kInitBound, rng));
  init_b_ = params_.add("init.b", Matrix::Zero(1, H));
  dec_w_ = params_.add("dec.w", uniform_matrix(E + 2 * H, 4 * H, kInitBound, rng));
  dec_b_ = params_.add("dec.b", forget_bias(H));
  att_w_ = params_.add("att.w", uniform_matrix(H, 2 * H, kInitBound, rng));
  comb_w_ = params_.add("comb.w", uniform_matrix(3 * H, H, kInitBound, rng));
  comb_b_ = params_.add("comb.b", Matrix::Zero(1, H));
  out_w_ = params_.add("out.w", uniform_matrix(H, V, kInitBound, rng));
  out_b_ = params_.add("out.b", Matrix::Zero(1, V));
}

Seq2Seq::Seq2Seq(const Seq2SeqConfig& config, std::string direction, ParamSet params)
    : config_(config), direction_(std::move(direction)), params_(std::move(params)) {
  embed_ = params_.find("embed");
  enc_w_ = params_.find("enc.w");
  enc_b_ = params_.find("enc.b");
  encr_w_ = params_.find("encr.w");
  encr_b_ = params_.find("encr.b");
  init_w_ = params_.find("init.w");
  init_b_ = params_.find("init.b");
  dec_w_ = params_.find("dec.w");
  dec_b_ = params_.find("dec.b");
  att_w_ = params_.find("att.w");
  comb_w_ = params_.find("comb.w");
  comb_b_ = params_.find("comb.b");
  out_w_ = params_.find("out.w");
  out_b_ = params_.find("out.b");
  const auto H = config.hidden_dim;
  if (params_[embed_].value.rows() != config.vocab_size || params_[embed_].value.cols() != config.embed_dim ||
      params_[enc_w_].value.cols() != 4 * H || params_[out_w_].value.cols() != config.vocab_size)
    throw Error(ErrorCode::BadCheckpoint, "seq2seq parameter shapes disagree with metadata");
}

void Seq2Seq::lstm(Var x, Var& h, Var& c, std::size_t w, std::size_t b) const {
  Tape& tape = *x.tape;
  const Eigen::Index H = config_.hidden_dim;
  const Var parts[] = {x, h};
  Var gates = add(matmul(concat_cols(parts), tape.param(params_, w)), tape.param(params_, b));
  Var in = sigmoid(slice_cols(gates, 0, H));
  Var forget = sigmoid(slice_cols(gates, H, H));
  Var cell = tanh(slice_cols(gates, 2 * H, H));
  Var out = sigmoid(slice_cols(gates, 3 * H, H));
  c = add(mul(forget, c), mul(in, cell));
  h = mul(out, tanh(c));
}

// States per time step. Rows past their length keep the previous state, so
// the reverse pass starts from zeros at each row's last token.
std::vector<Var> Seq2Seq::run_encoder(Tape& tape, std::span<const std::vector<int>* const> sources, bool reverse,
                                      std::size_t w, std::size_t b) const {
  const auto B = static_cast<Eigen::Index>(sources.size());
  std::size_t steps = 0;
  for (const auto* s : sources) steps = std::max(steps, s->size());
  const Eigen::Index H = config_.hidden_dim;
  Var h = tape.constant(Matrix::Zero(B, H));
  Var c = tape.constant(Matrix::Zero(B, H));
  Var table = tape.param(params_, embed_);
  std::vector<Var> outputs(steps);
  std::vector<int> ids(sources.size());
  std::vector<double> live(sources.size());
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t t = reverse ? steps - 1 - i : i;
    bool all_live = true;
    for (std::size_t r = 0; r < sources.size(); ++r) {
      const bool in = t < sources[r]->size();
      ids[r] = in ? (*sources[r])[t] : kPad;
      live[r] = in ? 1.0 : 0.0;
      all_live = all_live && in;
    }
    Var x = embedding(table, ids);
    Var h_new = h, c_new = c;
    lstm(x, h_new, c_new, w, b);
    if (all_live) {
      h = h_new;
      c = c_new;
    } else {
      h = row_blend(h_new, h, live);
      c = row_blend(c_new, c, live);
    }
    outputs[t] = h;
  }
  return outputs;
}

Seq2Seq::Encoded Seq2Seq::encode(Tape& tape, std::span<const std::vector<int>* const> sources) const {
  if (sources.empty()) throw Error(ErrorCode::EmptySequence, "empty source batch");
  const auto B = static_cast<Eigen::Index>(sources.size());
  Encoded enc;
  enc.lengths.reserve(sources.size());
  for (const auto* s : sources) {
    if (s->empty()) throw Error(ErrorCode::EmptySequence, "empty source sentence");
    enc.lengths.push_back(static_cast<int>(s->size()));
  }
  const auto fwd = run_encoder(tape, sources, false, enc_w_, enc_b_);
  const auto bwd = run_encoder(tape, sources, true, encr_w_, encr_b_);
  enc.steps = static_cast<Eigen::Index>(fwd.size());
  std::vector<Var> both;
  both.reserve(fwd.size());
  for (std::size_t t = 0; t < fwd.size(); ++t) {
    const Var parts[] = {fwd[t], bwd[t]};
    both.push_back(concat_cols(parts));
  }
  enc.memory = stack_time(both);
  // fwd.back() holds every row's final state; bwd[0] its first-token state
  const Var ends[] = {fwd.back(), bwd.front()};
  const Eigen::Index H = config_.hidden_dim;
  enc.initial.h = tanh(add(matmul(concat_cols(ends), tape.param(params_, init_w_)), tape.param(params_, init_b_)));
  enc.initial.c = tape.constant(Matrix::Zero(B, H));
  enc.initial.feed = tape.constant(Matrix::Zero(B, H));
  enc.output_mask = tape.constant(output_mask_row(config_.vocab_size));
  return enc;
}

Seq2Seq::Encoded Seq2Seq::repeat(const Encoded& enc, int times) const {
  Encoded out;
  out.steps = enc.steps;
  out.memory = repeat_blocks(enc.memory, enc.steps, times);
  out.initial.h = repeat_blocks(enc.initial.h, 1, times);
  out.initial.c = repeat_blocks(enc.initial.c, 1, times);
  out.initial.feed = repeat_blocks(enc.initial.feed, 1, times);
  out.output_mask = enc.output_mask;
  for (int len : enc.lengths)
    for (int k = 0; k < times; ++k) out.lengths.push_back(len);
  return out;
}

Var Seq2Seq::step(const Encoded& enc, State& state, std::span<const int> previous) const {
  Tape& tape = *state.h.tape;
  const Var inputs[] = {embedding(tape.param(params_, embed_), previous), state.feed};
  lstm(concat_cols(inputs), state.h, state.c, dec_w_, dec_b_);
  Var query = matmul(state.h, tape.param(params_, att_w_));
  Var context = attention(query, enc.memory, enc.steps, enc.lengths);
  const Var parts[] = {state.h, context};
  Var combined = tanh(add(matmul(concat_cols(parts), tape.param(params_, comb_w_)), tape.param(params_, comb_b_)));
  state.feed = combined;
  Var logits = add(matmul(combined, tape.param(params_, out_w_)), tape.param(params_, out_b_));
  return add(logits, enc.output_mask);
}

void Seq2Seq::save(const std::filesystem::path& path, std::uint64_t vocab_hash) const {
  nlohmann::json meta = {{"kind", "seq2seq"},
                         {"direction", direction_},
                         {"vocab_hash", std::to_string(vocab_hash)},
                         {"vocab_size", config_.vocab_size},
                         {"embed_dim", config_.embed_dim},
                         {"hidden_dim", config_.hidden_dim}};
  save_checkpoint(path, params_, meta);
}

Seq2Seq Seq2Seq::load(const std::filesystem::path& path) {
  auto [params, meta] = load_checkpoint(path);
  if (meta.value("kind", "") != "seq2seq") throw Error(ErrorCode::BadCheckpoint, path.string() + " is not a seq2seq checkpoint");
  Seq2SeqConfig cfg;
  cfg.vocab_size = meta.at("vocab_size").get<int>();
  cfg.embed_dim = meta.at("embed_dim").get<int>();
  cfg.hidden_dim = meta.at("hidden_dim").get<int>();
  return Seq2Seq(cfg, meta.at("direction").get<std::string>(), std::move(params));
}

int resolve_max_len(const DecodeConfig& cfg, std::size_t source_length) {
  if (cfg.max_len > 0) return cfg.max_len;
  return std::max(1, std::min(static_cast<int>(source_length) + 5, cfg.max_len_cap));
}

Var sequence_log_probs(Tape& tape, const Seq2Seq& model, std::span<const Sentence* const> sources,
                       std::span<const Sentence* const> targets) {
  if (sources.size() != targets.size()) throw Error(ErrorCode::LengthMismatch, "sources vs targets");
  std::vector<const std::vector<int>*> src_ids;
  std::size_t steps = 0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    require_nonempty(*sources[i], "source");
    require_nonempty(*targets[i], "target");
    src_ids.push_back(&sources[i]->ids);
    steps = std::max(steps, targets[i]->ids.size());
  }
  auto enc = model.encode(tape, src_ids);
  auto state = enc.initial;
  const auto B = static_cast<Eigen::Index>(targets.size());
  std::vector<int> prev(targets.size(), kBos), gold(targets.size());
  Var total;
  for (std::size_t t = 0; t < steps; ++t) {
    Matrix mask(B, 1);
    for (std::size_t b = 0; b < targets.size(); ++b) {
      const auto& ids = targets[b]->ids;
      const bool in = t < ids.size();
      gold[b] = in ? ids[t] : kEos;
      mask(static_cast<Eigen::Index>(b), 0) = in ? 1.0 : 0.0;
    }
    Var logits = model.step(enc, state, prev);
    Var term = mul(pick(log_softmax(logits), gold), tape.constant(std::move(mask)));
    total = t == 0 ? term : add(total, term);
    prev = gold;
  }
  return total;
}

double log_prob(const Seq2Seq& model, const Sentence& source, const Sentence& target) {
  const Sentence* s[] = {&source};
  const Sentence* t[] = {&target};
  return log_prob_batch(model, s, t).front();
}

std::vector<double> log_prob_batch(const Seq2Seq& model, std::span<const Sentence* const> sources,
                                   std::span<const Sentence* const> targets) {
  Tape tape(false);
  Var lp = sequence_log_probs(tape, model, sources, targets);
  const Matrix& v = lp.value();
  return std::vector<double>(v.data(), v.data() + v.size());
}

TapeSamples sample_on_tape(Tape& tape, const Seq2Seq& model, std::span<const Sentence* const> sources, int k,
                           const DecodeConfig& cfg, Rng& rng) {
  if (k < 1) throw Error(ErrorCode::ShapeMismatch, "sample size must be >= 1");
  std::vector<const std::vector<int>*> src_ids;
  for (const auto* s : sources) {
    require_nonempty(*s, "source");
    src_ids.push_back(&s->ids);
  }
  auto enc = model.encode(tape, src_ids);
  if (k > 1) enc = model.repeat(enc, k);
  const std::size_t rows = sources.size() * static_cast<std::size_t>(k);
  std::vector<int> limit(rows);
  int steps = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    limit[r] = resolve_max_len(cfg, sources[r / static_cast<std::size_t>(k)]->length());
    steps = std::max(steps, limit[r]);
  }
  TapeSamples out;
  out.ids.assign(rows, {});
  std::vector<bool> done(rows, false);
  std::vector<int> prev(rows, kBos), chosen(rows);
  auto state = enc.initial;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const bool greedy = cfg.mode == DecodeConfig::Mode::Greedy || cfg.temperature <= 0.0;
  Var total;
  for (int t = 0; t < steps; ++t) {
    Var logits = model.step(enc, state, prev);
    Var logp = log_softmax(logits);
    const Matrix& lv = logits.value();
    Matrix mask = Matrix::Zero(static_cast<Eigen::Index>(rows), 1);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto row = static_cast<Eigen::Index>(r);
      if (done[r]) {
        chosen[r] = kEos;
        continue;
      }
      int tok;
      if (greedy) {
        tok = argmax_row(lv, row);
      } else {
        const double mx = lv.row(row).maxCoeff();
        Eigen::RowVectorXd p = ((lv.row(row).array() - mx) / cfg.temperature).exp();
        const double u = unif(rng) * p.sum();
        double acc = 0.0;
        tok = static_cast<int>(p.size()) - 1;
        for (Eigen::Index j = 0; j < p.size(); ++j) {
          acc += p(j);
          if (u < acc && p(j) > 0.0) {
            tok = static_cast<int>(j);
            break;
          }
        }
        while (p(tok) == 0.0 && tok > 0) --tok;
      }
      chosen[r] = tok;
      mask(row, 0) = 1.0;
      out.ids[r].push_back(tok);
      if (tok == kEos || static_cast<int>(out.ids[r].size()) >= limit[r]) done[r] = true;
    }
    Var term = mul(pick(logp, chosen), tape.constant(std::move(mask)));
    total = t == 0 ? term : add(total, term);
    prev = chosen;
    if (std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
  }
  out.log_probs = total;
  return out;
}

SampleBatch sample(const Seq2Seq& model, const Sentence& source, int k, const DecodeConfig& cfg) {
  Tape tape(false);
  Rng rng(cfg.seed);
  DecodeConfig sc = cfg;
  if (sc.mode == DecodeConfig::Mode::Greedy && sc.temperature > 0.0) sc.mode = DecodeConfig::Mode::Sample;
  const Sentence* src[] = {&source};
  auto drawn = sample_on_tape(tape, model, src, k, sc, rng);
  SampleBatch out;
  const Matrix& lp = drawn.log_probs.value();
  for (std::size_t r = 0; r < drawn.ids.size(); ++r) {
    Sentence s;
    s.ids = std::move(drawn.ids[r]);
    out.samples.push_back(std::move(s));
    out.log_probs.push_back(lp(static_cast<Eigen::Index>(r), 0));
  }
  return out;
}

namespace {

Sentence beam_decode(const Seq2Seq& model, const Sentence& source, const DecodeConfig& cfg) {
  Tape tape(false);
  const std::vector<int>* src[] = {&source.ids};
  auto enc = model.encode(tape, src);
  const int beam = cfg.beam;
  const int limit = resolve_max_len(cfg, source.length());
  struct Hyp {
    std::vector<int> ids;
    double score = 0.0;
  };
  std::vector<Hyp> alive{Hyp{}};
  std::vector<Hyp> finished;
  Matrix h = enc.initial.h.value(), c = enc.initial.c.value(), feed = enc.initial.feed.value();
  for (int t = 0; t < limit && !alive.empty(); ++t) {
    const int n = static_cast<int>(alive.size());
    auto rep = model.repeat(enc, n);
    Seq2Seq::State st{tape.constant(h), tape.constant(c), tape.constant(feed)};
    std::vector<int> prev;
    for (const auto& hyp : alive) prev.push_back(hyp.ids.empty() ? kBos : hyp.ids.back());
    Var logp = log_softmax(model.step(rep, st, prev));
    struct Cand {
      double score;
      int from, tok;
    };
    std::vector<Cand> cands;
    const Matrix& lv = logp.value();
    for (int i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < lv.cols(); ++j)
        if (lv(i, j) > -1e8) cands.push_back({alive[i].score + lv(i, j), i, static_cast<int>(j)});
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });
    std::vector<Hyp> next;
    std::vector<Eigen::Index> rows;
    for (const auto& cd : cands) {
      if (static_cast<int>(next.size()) >= beam) break;
      Hyp hyp{alive[cd.from].ids, cd.score};
      hyp.ids.push_back(cd.tok);
      if (cd.tok == kEos || t + 1 == limit) {
        finished.push_back(std::move(hyp));
        if (static_cast<int>(finished.size()) >= beam) break;
        continue;
      }
      next.push_back(std::move(hyp));
      rows.push_back(cd.from);
    }
    if (static_cast<int>(finished.size()) >= beam) break;
    const auto n_rows = static_cast<Eigen::Index>(rows.size());
    h.resize(n_rows, h.cols());
    c.resize(n_rows, c.cols());
    feed.resize(n_rows, feed.cols());
    for (Eigen::Index i = 0; i < n_rows; ++i) {
      h.row(i) = st.h.value().row(rows[static_cast<std::size_t>(i)]);
      c.row(i) = st.c.value().row(rows[static_cast<std::size_t>(i)]);
      feed.row(i) = st.feed.value().row(rows[static_cast<std::size_t>(i)]);
    }
    alive = std::move(next);
  }
  for (auto& hyp : alive) finished.push_back(std::move(hyp));
  const auto best = std::max_element(finished.begin(), finished.end(),
                                     [](const Hyp& a, const Hyp& b) { return a.score < b.score; });
  Sentence out;
  out.ids = best->ids;
  return out;
}

}  // namespace

Sentence greedy_decode(const Seq2Seq& model, const Sentence& source, const DecodeConfig& cfg) {
  require_nonempty(source, "source");
  if (cfg.beam > 1) return beam_decode(model, source, cfg);
  const Sentence* src[] = {&source};
  return greedy_decode_batch(model, src, cfg).front();
}

std::vector<Sentence> greedy_decode_batch(const Seq2Seq& model, std::span<const Sentence* const> sources,
                                          const DecodeConfig& cfg) {
  if (sources.empty()) return {};
  Tape tape(false);
  Rng unused(0);
  DecodeConfig gc = cfg;
  gc.mode = DecodeConfig::Mode::Greedy;
  auto drawn = sample_on_tape(tape, model, sources, 1, gc, unused);
  std::vector<Sentence> out;
  out.reserve(drawn.ids.size());
  for (auto& ids : drawn.ids) {
    Sentence s;
    s.ids = std::move(ids);
    out.push_back(std::move(s));
  }
  return out;
}

Var mle_loss(Tape& tape, const Seq2Seq& model, std::span<const SentencePair> pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyList, "empty MLE batch");
  auto srcs = pointers(pairs, true);
  std::vector<const std::vector<int>*> src_ids;
  std::size_t steps = 0;
  double tokens = 0.0;
  for (const auto& p : pairs) {
    require_nonempty(p.source, "source");
    require_nonempty(p.target, "target");
    src_ids.push_back(&p.source.ids);
    steps = std::max(steps, p.target.ids.size());
    tokens += static_cast<double>(p.target.ids.size());
  }
  auto enc = model.encode(tape, src_ids);
  auto state = enc.initial;
  const auto B = static_cast<Eigen::Index>(pairs.size());
  std::vector<int> prev(pairs.size(), kBos), gold(pairs.size());
  Var total;
  for (std::size_t t = 0; t < steps; ++t) {
    Matrix weight(B, 1);
    for (std::size_t b = 0; b < pairs.size(); ++b) {
      const auto& ids = pairs[b].target.ids;
      const bool in = t < ids.size();
      gold[b] = in ? ids[t] : kEos;
      weight(static_cast<Eigen::Index>(b), 0) = in ? 1.0 / tokens : 0.0;
    }
    Var logits = model.step(enc, state, prev);
    Var term = masked_sum(cross_entropy(logits, gold), weight);
    total = t == 0 ? term : add(total, term);
    prev = gold;
  }
  return total;
}

double mle_step(Seq2Seq& model, std::span<const SentencePair> pairs, AdamState& opt) {
  Tape tape;
  Var loss = mle_loss(tape, model, pairs);
  tape.backward(loss);
  const double value = loss.value()(0, 0);
  adam_step(model.params(), tape.gradients(model.params()), opt);
  return value;
}

}  // namespace dualstyle
