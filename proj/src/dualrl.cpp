#include "dualstyle/dualrl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace dualstyle {

namespace {

constexpr std::size_t kScoreChunk = 64;

std::size_t at(Direction d) { return static_cast<std::size_t>(d); }

// Runs fn(chunk) for every chunk index. Each chunk writes disjoint outputs,
// so the result does not depend on the thread count.
template <typename Fn>
void for_chunks(std::size_t chunks, Fn fn) {
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(worker_threads()), chunks);
  if (threads <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(c);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = w; c < chunks; c += threads) fn(c);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void log_line(std::ostream* log, const std::string& event, const std::vector<std::pair<std::string, std::string>>& kv) {
  if (!log) return;
  *log << "event=" << event;
  for (const auto& [k, v] : kv) *log << ' ' << k << '=' << v;
  *log << '\n';
  log->flush();
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

std::vector<const Sentence*> batch_of(const std::vector<Sentence>& data, const std::vector<std::size_t>& order,
                                      std::size_t& cursor, std::size_t size) {
  std::vector<const Sentence*> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    out.push_back(&data[order[cursor % order.size()]]);
    ++cursor;
  }
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

double dev_pair_loss(const Seq2Seq& model, const std::vector<PseudoPair>& pairs) {
  if (pairs.empty()) return 0.0;
  double total = 0.0, tokens = 0.0;
  for (std::size_t start = 0; start < pairs.size(); start += kScoreChunk) {
    const std::size_t end = std::min(pairs.size(), start + kScoreChunk);
    std::vector<SentencePair> chunk;
    double n = 0.0;
    for (std::size_t i = start; i < end; ++i) {
      chunk.push_back({pairs[i].source, pairs[i].target});
      n += static_cast<double>(pairs[i].target.ids.size());
    }
    Tape tape(false);
    total += mle_loss(tape, model, chunk).value()(0, 0) * n;
    tokens += n;
  }
  return total / tokens;
}

// ---- run directory --------------------------------------------------------

nlohmann::json adam_meta(const AdamState& s) {
  return {{"t", s.t},
          {"lr", s.config.lr},
          {"beta1", s.config.beta1},
          {"beta2", s.config.beta2},
          {"eps", s.config.eps},
          {"clip_norm", s.config.clip_norm}};
}

void save_adam(const std::filesystem::path& path, const AdamState& s) {
  ParamSet ps;
  for (std::size_t i = 0; i < s.m.size(); ++i) ps.add("m." + std::to_string(i), s.m[i]);
  for (std::size_t i = 0; i < s.v.size(); ++i) ps.add("v." + std::to_string(i), s.v[i]);
  save_checkpoint(path, ps, adam_meta(s));
}

AdamState load_adam(const std::filesystem::path& path) {
  auto [ps, meta] = load_checkpoint(path);
  AdamState s;
  s.t = meta.at("t").get<std::int64_t>();
  s.config.lr = meta.at("lr");
  s.config.beta1 = meta.at("beta1");
  s.config.beta2 = meta.at("beta2");
  s.config.eps = meta.at("eps");
  s.config.clip_norm = meta.at("clip_norm");
  const std::size_t n = ps.size() / 2;
  for (std::size_t i = 0; i < n; ++i) s.m.push_back(ps[i].value);
  for (std::size_t i = 0; i < n; ++i) s.v.push_back(ps[n + i].value);
  return s;
}

nlohmann::json record_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"iteration", r.iteration},
          {"mean_rs", r.mean_style_reward},
          {"mean_rc", r.mean_content_reward},
          {"mean_r", r.mean_reward},
          {"dev_acc", r.dev_acc},
          {"dev_bleu", r.dev_bleu},
          {"dev_score", r.dev_score},
          {"tf_loss", r.teacher_forcing_loss},
          {"tf_updates", r.teacher_forcing_updates}};
}

EpochRecord record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch");
  r.iteration = j.at("iteration");
  r.mean_style_reward = j.at("mean_rs");
  r.mean_content_reward = j.at("mean_rc");
  r.mean_reward = j.at("mean_r");
  r.dev_acc = j.at("dev_acc");
  r.dev_bleu = j.at("dev_bleu");
  r.dev_score = j.at("dev_score");
  r.teacher_forcing_loss = j.at("tf_loss");
  r.teacher_forcing_updates = j.at("tf_updates");
  return r;
}

struct Checkpoint {
  std::filesystem::path dir;
  std::uint64_t vocab_hash;

  std::filesystem::path ckpt() const { return dir / "checkpoints"; }

  void save_models(const std::string& tag, const Seq2Seq& f, const Seq2Seq& g) const {
    f.save(ckpt() / (tag + ".f.bin"), vocab_hash);
    g.save(ckpt() / (tag + ".g.bin"), vocab_hash);
  }

  void save_last(const Seq2Seq& f, const Seq2Seq& g, const TrainState& st, const Rng& rng) const {
    std::filesystem::create_directories(ckpt());
    save_models("last", f, g);
    for (std::size_t d = 0; d < 2; ++d) {
      save_adam(ckpt() / ("last.rl_opt" + std::to_string(d) + ".bin"), st.rl_opt[d]);
      save_adam(ckpt() / ("last.mle_opt" + std::to_string(d) + ".bin"), st.mle_opt[d]);
    }
    std::ostringstream rs;
    rs << rng;
    nlohmann::json j;
    j["iteration"] = st.iteration;
    j["epoch"] = st.epoch;
    j["interval"] = st.interval;
    j["last_trigger"] = st.last_trigger;
    j["best_epoch"] = st.best_epoch;
    j["best_score"] = st.best_score;
    j["stale_epochs"] = st.stale_epochs;
    j["degenerate_samples"] = st.degenerate_samples;
    j["finished"] = st.finished;
    j["rng"] = rs.str();
    j["history"] = nlohmann::json::array();
    for (const auto& r : st.history) j["history"].push_back(record_json(r));
    std::ofstream os(ckpt() / "last.state.json", std::ios::trunc);
    if (!os) throw Error(ErrorCode::Io, "cannot write run state");
    os << j.dump(1) << '\n';
  }

  bool has_last() const { return std::filesystem::exists(ckpt() / "last.state.json"); }

  void load_last(Seq2Seq& f, Seq2Seq& g, TrainState& st, Rng& rng) const {
    std::ifstream is(ckpt() / "last.state.json");
    if (!is) throw Error(ErrorCode::BadCheckpoint, "missing run state");
    nlohmann::json j;
    is >> j;
    f = Seq2Seq::load(ckpt() / "last.f.bin");
    g = Seq2Seq::load(ckpt() / "last.g.bin");
    for (std::size_t d = 0; d < 2; ++d) {
      st.rl_opt[d] = load_adam(ckpt() / ("last.rl_opt" + std::to_string(d) + ".bin"));
      st.mle_opt[d] = load_adam(ckpt() / ("last.mle_opt" + std::to_string(d) + ".bin"));
    }
    st.iteration = j.at("iteration");
    st.epoch = j.at("epoch");
    st.interval = j.at("interval");
    st.last_trigger = j.at("last_trigger").get<std::array<std::int64_t, 2>>();
    st.best_epoch = j.at("best_epoch");
    st.best_score = j.at("best_score").is_null() ? -std::numeric_limits<double>::infinity()
                                                  : j.at("best_score").get<double>();
    st.stale_epochs = j.at("stale_epochs");
    st.degenerate_samples = j.at("degenerate_samples");
    st.finished = j.at("finished");
    std::istringstream rs(j.at("rng").get<std::string>());
    rs >> rng;
    st.history.clear();
    for (const auto& r : j.at("history")) st.history.push_back(record_from_json(r));
  }

  void write_history(const TrainState& st) const {
    std::ofstream os(dir / "history.csv", std::ios::trunc);
    if (!os) throw Error(ErrorCode::Io, "cannot write history.csv");
    os << history_csv(st.history);
  }
};

}  // namespace

// ---- schedule -------------------------------------------------------------

double anneal_interval(std::int64_t i, const AnnealSchedule& s) {
  if (i < 0) throw Error(ErrorCode::BadConfig, "iteration must be >= 0");
  const double p = s.p0 * std::pow(s.rate, static_cast<double>(i) / s.gap);
  return std::min(p, s.p_max);
}

bool should_teacher_force(TrainState& state, Direction direction) {
  auto& last = state.last_trigger[at(direction)];
  if (static_cast<double>(state.iteration - last) >= state.interval) {
    last = state.iteration;
    return true;
  }
  return false;
}

const char* baseline_name(BaselineMode m) { return m == BaselineMode::LeaveOneOut ? "leave_one_out" : "none"; }

BaselineMode parse_baseline(std::string_view s) {
  if (s == "leave_one_out") return BaselineMode::LeaveOneOut;
  if (s == "none") return BaselineMode::None;
  throw Error(ErrorCode::BadConfig, "unknown baseline mode: " + std::string(s));
}

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::RlPlusMle: return "rl_plus_mle";
    case Ablation::RlOnly: return "rl_only";
    case Ablation::MleOnly: return "mle_only";
  }
  return "?";
}

Ablation parse_ablation(std::string_view s) {
  if (s == "rl_plus_mle") return Ablation::RlPlusMle;
  if (s == "rl_only") return Ablation::RlOnly;
  if (s == "mle_only") return Ablation::MleOnly;
  throw Error(ErrorCode::BadConfig, "unknown ablation: " + std::string(s));
}

void TrainConfig::validate() const {
  reward.validate();
  if (!(schedule.rate > 1.0)) throw Error(ErrorCode::BadConfig, "schedule rate must be > 1");
  if (!(schedule.p0 <= schedule.p_max)) throw Error(ErrorCode::BadConfig, "p0 must be <= p_max");
  if (!(schedule.p0 > 0.0) || !(schedule.gap > 0.0)) throw Error(ErrorCode::BadConfig, "p0 and d must be > 0");
  if (!(pretrain_lr > 0.0) || !(dual_lr > 0.0)) throw Error(ErrorCode::BadConfig, "learning rates must be > 0");
  if (pretrain_batch < 1 || dual_batch < 1) throw Error(ErrorCode::BadConfig, "batch sizes must be >= 1");
  if (pretrain_epochs < 0 || max_dual_epochs < 0 || max_iterations < 0 || iterations_per_epoch < 0)
    throw Error(ErrorCode::BadConfig, "epoch and iteration counts must be >= 0");
  if (patience < 1) throw Error(ErrorCode::BadConfig, "patience must be >= 1");
  if (!(temperature > 0.0)) throw Error(ErrorCode::BadConfig, "sampling temperature must be > 0");
  if (dev_limit < 0) throw Error(ErrorCode::BadConfig, "dev_limit must be >= 0");
}

int worker_threads() {
  const char* v = std::getenv("DUALSTYLE_THREADS");
  if (!v || !*v) return 1;
  const int n = std::atoi(v);
  return n < 1 ? 1 : n;
}

// ---- policy gradient ------------------------------------------------------

std::vector<RewardBreakdown> score_samples(const RewardContext& ctx, const std::vector<std::vector<int>>& sample_ids,
                                           std::span<const Sentence* const> sources, int k,
                                           std::vector<bool>& degenerate) {
  if (!ctx.classifier || !ctx.opposite) throw Error(ErrorCode::BadConfig, "reward context is incomplete");
  const bool bleu = ctx.config.content_variant == ContentVariant::BleuDoublePrime;
  if (bleu && !ctx.vocab) throw Error(ErrorCode::BadConfig, "BLEU content reward needs a vocabulary");
  const std::size_t rows = sample_ids.size();
  if (rows != sources.size() * static_cast<std::size_t>(k))
    throw Error(ErrorCode::LengthMismatch, "samples do not match sources x K");

  degenerate.assign(rows, false);
  std::vector<Sentence> samples(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    degenerate[r] = sample_ids[r].empty() || sample_ids[r].front() == kEos;
    samples[r].ids = sample_ids[r];
    if (bleu) samples[r] = from_ids(sample_ids[r], *ctx.vocab);
  }
  std::vector<std::size_t> live;
  for (std::size_t r = 0; r < rows; ++r)
    if (!degenerate[r]) live.push_back(r);

  std::vector<RewardBreakdown> out(rows);
  const std::size_t tgt = static_cast<std::size_t>(index_of(ctx.target));
  const std::size_t chunks = (live.size() + kScoreChunk - 1) / kScoreChunk;
  for_chunks(chunks, [&](std::size_t c) {
    const std::size_t begin = c * kScoreChunk, end = std::min(live.size(), begin + kScoreChunk);
    std::vector<const Sentence*> ys, xs;
    for (std::size_t i = begin; i < end; ++i) {
      ys.push_back(&samples[live[i]]);
      xs.push_back(sources[live[i] / static_cast<std::size_t>(k)]);
    }
    const auto probs = classify_prob_batch(*ctx.classifier, ys);
    std::vector<double> content(ys.size());
    if (bleu) {
      for (std::size_t i = 0; i < ys.size(); ++i)
        content[i] = bleu_content_reward(*ctx.opposite, *ys[i], *xs[i], *ctx.vocab);
    } else {
      const auto lp = log_prob_batch(*ctx.opposite, ys, xs);
      for (std::size_t i = 0; i < ys.size(); ++i)
        content[i] = content_reward_from_log_prob(lp[i], xs[i]->ids.size(), ctx.config.length_normalize_content);
    }
    for (std::size_t i = 0; i < ys.size(); ++i) {
      auto& rb = out[live[begin + i]];
      rb.r_style = probs[i][tgt];
      rb.r_content = content[i];
      rb.r_total = combine(rb.r_style, rb.r_content, ctx.config.beta);
    }
  });
  return out;
}

std::vector<double> advantages(const std::vector<RewardBreakdown>& rewards, const std::vector<bool>& degenerate,
                               std::size_t batch, int k, BaselineMode mode) {
  const auto kk = static_cast<std::size_t>(k);
  if (rewards.size() != batch * kk || degenerate.size() != rewards.size())
    throw Error(ErrorCode::LengthMismatch, "rewards do not match batch x K");
  const double norm = static_cast<double>(batch * kk);
  std::vector<double> out(rewards.size(), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < kk; ++j) {
      const std::size_t r = b * kk + j;
      const double reward = degenerate[r] ? 0.0 : rewards[r].r_total;
      if (mode == BaselineMode::None || k == 1) {
        out[r] = reward / norm;
        continue;
      }
      // Mean of differences rather than reward minus mean, so equal rewards give exactly 0.
      double diff = 0.0;
      int others = 0;
      for (std::size_t o = 0; o < kk; ++o) {
        const std::size_t q = b * kk + o;
        if (q == r || degenerate[q]) continue;
        diff += reward - rewards[q].r_total;
        ++others;
      }
      out[r] = (others > 0 ? diff / others : reward) / norm;
    }
  }
  return out;
}

std::pair<Var, RlBatch> rl_surrogate(Tape& tape, const Seq2Seq& policy, const RewardContext& ctx,
                                     std::span<const Sentence* const> sources, BaselineMode mode, double temperature,
                                     Rng& rng, int max_len) {
  if (sources.empty()) throw Error(ErrorCode::EmptyList, "empty RL batch");
  DecodeConfig dc;
  dc.max_len = max_len;
  dc.mode = DecodeConfig::Mode::Sample;
  dc.temperature = temperature;
  const int k = ctx.config.k;
  auto drawn = sample_on_tape(tape, policy, sources, k, dc, rng);
  RlBatch batch;
  batch.rewards = score_samples(ctx, drawn.ids, sources, k, batch.degenerate);
  batch.advantages = advantages(batch.rewards, batch.degenerate, sources.size(), k, mode);
  batch.sample_ids = std::move(drawn.ids);
  Matrix w(static_cast<Eigen::Index>(batch.advantages.size()), 1);
  for (std::size_t r = 0; r < batch.advantages.size(); ++r) w(static_cast<Eigen::Index>(r), 0) = -batch.advantages[r];
  Var loss = masked_sum(drawn.log_probs, w);
  return {loss, std::move(batch)};
}

RlStepStats rl_step(Seq2Seq& policy, const RewardContext& ctx, std::span<const Sentence* const> sources,
                    BaselineMode mode, double temperature, AdamState& opt, Rng& rng) {
  Tape tape;
  auto [loss, batch] = rl_surrogate(tape, policy, ctx, sources, mode, temperature, rng);
  RlStepStats st;
  st.samples = static_cast<std::int64_t>(batch.rewards.size());
  for (std::size_t r = 0; r < batch.rewards.size(); ++r) {
    if (batch.degenerate[r]) ++st.degenerate;
    st.mean_style += batch.rewards[r].r_style;
    st.mean_content += batch.rewards[r].r_content;
    st.mean_reward += batch.rewards[r].r_total;
  }
  const auto n = static_cast<double>(batch.rewards.size());
  st.mean_style /= n;
  st.mean_content /= n;
  st.mean_reward /= n;
  if (std::all_of(batch.advantages.begin(), batch.advantages.end(), [](double a) { return a == 0.0; })) return st;
  tape.backward(loss);
  adam_step(policy.params(), tape.gradients(policy.params()), opt);
  st.updated = true;
  return st;
}

double teacher_forcing_step(Seq2Seq& model, const Seq2Seq& opposite, std::span<const Sentence* const> authentic,
                            std::int64_t iteration, const Vocabulary& vocab, AdamState& opt) {
  const auto pairs = as_training_pairs(back_translate_batch(opposite, authentic, iteration, vocab));
  return mle_step(model, pairs, opt);
}

// ---- pre-training ---------------------------------------------------------

PretrainReport pretrain(Seq2Seq& f, Seq2Seq& g, const PretrainPairs& pairs, const TrainConfig& cfg,
                        const PretrainPairs* dev_pairs, std::ostream* log) {
  cfg.validate();
  PretrainReport rep;
  std::array<Seq2Seq*, 2> models{&f, &g};
  std::array<const std::vector<PseudoPair>*, 2> sets{&pairs.forward, &pairs.backward};
  for (std::size_t d = 0; d < 2; ++d) {
    if (dev_pairs) rep.dev_loss_before[d] = dev_pair_loss(*models[d], d == 0 ? dev_pairs->forward : dev_pairs->backward);
    const auto& data = *sets[d];
    if (data.empty() || cfg.pretrain_epochs == 0) {
      rep.dev_loss_after[d] = rep.dev_loss_before[d];
      continue;
    }
    Rng rng(cfg.seed * 2 + d);
    AdamConfig ac;
    ac.lr = cfg.pretrain_lr;
    AdamState opt = make_adam(models[d]->params(), ac);
    const auto batch = static_cast<std::size_t>(cfg.pretrain_batch);
    for (int e = 0; e < cfg.pretrain_epochs; ++e) {
      const auto order = shuffled(data.size(), rng);
      double total = 0.0;
      std::size_t steps = 0;
      for (std::size_t start = 0; start < order.size(); start += batch) {
        std::vector<SentencePair> chunk;
        for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i)
          chunk.push_back({data[order[i]].source, data[order[i]].target});
        total += mle_step(*models[d], chunk, opt);
        ++steps;
      }
      log_line(log, "pretrain_epoch", {{"direction", d == 0 ? "x2y" : "y2x"},
                                       {"epoch", std::to_string(e + 1)},
                                       {"train_loss", num(total / static_cast<double>(steps))}});
    }
    if (dev_pairs) rep.dev_loss_after[d] = dev_pair_loss(*models[d], d == 0 ? dev_pairs->forward : dev_pairs->backward);
    log_line(log, "pretrain_done", {{"direction", d == 0 ? "x2y" : "y2x"},
                                    {"dev_loss_before", num(rep.dev_loss_before[d])},
                                    {"dev_loss_after", num(rep.dev_loss_after[d])}});
  }
  return rep;
}

// ---- dev evaluation -------------------------------------------------------

DevMetrics dev_metrics(const Seq2Seq& f, const Seq2Seq& g, const StyleClassifier& clf, const StyleCorpus& corpus,
                       const Vocabulary& vocab, Split split, int limit) {
  DevMetrics m;
  const std::array<const Seq2Seq*, 2> models{&f, &g};
  for (std::size_t d = 0; d < 2; ++d) {
    const Style src = d == 0 ? Style::X : Style::Y;
    const auto& side = corpus.side(src);
    const auto& inputs = side[split];
    std::size_t n = inputs.size();
    if (limit > 0) n = std::min(n, static_cast<std::size_t>(limit));
    if (n == 0) throw Error(ErrorCode::EmptyList, "empty dev split");
    std::vector<Sentence> outputs(n);
    const std::size_t chunks = (n + kScoreChunk - 1) / kScoreChunk;
    for_chunks(chunks, [&](std::size_t c) {
      std::vector<const Sentence*> xs;
      for (std::size_t i = c * kScoreChunk; i < std::min(n, (c + 1) * kScoreChunk); ++i) xs.push_back(&inputs[i]);
      auto ys = greedy_decode_batch(*models[d], xs);
      for (std::size_t i = 0; i < ys.size(); ++i) outputs[c * kScoreChunk + i] = from_ids(ys[i].ids, vocab);
    });
    std::vector<Tokens> cands;
    std::vector<std::vector<Tokens>> self_refs, gold_refs;
    for (std::size_t i = 0; i < n; ++i) {
      cands.push_back(outputs[i].surface);
      self_refs.push_back({inputs[i].surface});
    }
    m.acc[d] = 100.0 * style_accuracy(clf, std::span<const Sentence>(outputs), opposite(src));
    m.self_bleu[d] = corpus_bleu(cands, self_refs);
    const auto& refs = side.refs[static_cast<std::size_t>(split)];
    if (refs.size() >= n) {
      bool complete = true;
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<Tokens> set;
        for (const auto& r : refs[i]) set.push_back(r.surface);
        complete = complete && !set.empty();
        gold_refs.push_back(std::move(set));
      }
      if (complete) m.gold_bleu[d] = corpus_bleu(cands, gold_refs);
    }
  }
  m.acc_mean = 0.5 * (m.acc[0] + m.acc[1]);
  m.bleu_mean = 0.5 * (m.self_bleu[0] + m.self_bleu[1]);
  m.score = g2h2(m.acc_mean, m.bleu_mean).h2;
  return m;
}

// ---- dual training --------------------------------------------------------

TrainResult train(const Seq2Seq& f_init, const Seq2Seq& g_init, const StyleClassifier& clf, const StyleCorpus& corpus,
                  const Vocabulary& vocab, const TrainConfig& cfg, const std::optional<RunFiles>& files,
                  std::ostream* log) {
  cfg.validate();
  if (!clf.frozen()) throw Error(ErrorCode::BadConfig, "the style classifier must be frozen before dual training");
  const auto& xs_train = corpus.side(Style::X)[Split::Train];
  const auto& ys_train = corpus.side(Style::Y)[Split::Train];
  if (xs_train.empty() || ys_train.empty()) throw Error(ErrorCode::EmptyList, "empty training split");

  TrainResult res{f_init, g_init, {}};
  Seq2Seq f = f_init, g = g_init;
  TrainState& st = res.state;
  Rng rng(cfg.seed);
  AdamConfig ac;
  ac.lr = cfg.dual_lr;
  for (std::size_t d = 0; d < 2; ++d) {
    st.rl_opt[d] = make_adam(d == 0 ? f.params() : g.params(), ac);
    st.mle_opt[d] = make_adam(d == 0 ? f.params() : g.params(), ac);
  }

  std::optional<Checkpoint> ck;
  if (files) {
    ck = Checkpoint{files->dir, vocab.hash()};
    std::filesystem::create_directories(ck->ckpt());
    if (files->resume && ck->has_last()) {
      ck->load_last(f, g, st, rng);
      if (st.best_epoch >= 0) {
        res.f = Seq2Seq::load(ck->ckpt() / "best.f.bin");
        res.g = Seq2Seq::load(ck->ckpt() / "best.g.bin");
      }
      log_line(log, "resume", {{"epoch", std::to_string(st.epoch)}, {"iteration", std::to_string(st.iteration)}});
    }
  }

  const auto batch = static_cast<std::size_t>(cfg.dual_batch);
  const std::int64_t per_epoch =
      cfg.iterations_per_epoch > 0 ? cfg.iterations_per_epoch
                                   : static_cast<std::int64_t>((xs_train.size() + batch - 1) / batch);
  const bool do_rl = cfg.ablation != Ablation::MleOnly;
  const bool do_mle = cfg.ablation != Ablation::RlOnly;

  while (!st.finished && st.epoch < cfg.max_dual_epochs) {
    const auto order_x = shuffled(xs_train.size(), rng);
    const auto order_y = shuffled(ys_train.size(), rng);
    std::size_t cursor_x = 0, cursor_y = 0;
    double sum_rs = 0.0, sum_rc = 0.0, sum_r = 0.0, tf_loss = 0.0;
    int rl_steps = 0, tf_updates = 0;
    bool hit_limit = false;
    for (std::int64_t it = 0; it < per_epoch; ++it) {
      if (cfg.max_iterations > 0 && st.iteration >= cfg.max_iterations) {
        hit_limit = true;
        break;
      }
      st.interval = anneal_interval(st.iteration, cfg.schedule);
      const Seq2Seq f0 = f, g0 = g;
      const auto bx = batch_of(xs_train, order_x, cursor_x, batch);
      const auto by = batch_of(ys_train, order_y, cursor_y, batch);
      for (Direction dir : {Direction::XtoY, Direction::YtoX}) {
        const bool fwd = dir == Direction::XtoY;
        Seq2Seq& model = fwd ? f : g;
        const Seq2Seq& other = fwd ? g0 : f0;
        const auto& sources = fwd ? bx : by;
        const auto& authentic = fwd ? by : bx;
        if (do_rl) {
          RewardContext ctx{&clf, &other, &vocab, target_style(dir), cfg.reward};
          const auto s = rl_step(model, ctx, sources, cfg.baseline, cfg.temperature, st.rl_opt[at(dir)], rng);
          sum_rs += s.mean_style;
          sum_rc += s.mean_content;
          sum_r += s.mean_reward;
          st.degenerate_samples += s.degenerate;
          ++rl_steps;
        }
        if (do_mle && should_teacher_force(st, dir)) {
          tf_loss += teacher_forcing_step(model, other, authentic, st.iteration, vocab, st.mle_opt[at(dir)]);
          ++tf_updates;
        }
      }
      ++st.iteration;
    }
    ++st.epoch;

    const auto dm = dev_metrics(f, g, clf, corpus, vocab, Split::Dev, cfg.dev_limit);
    EpochRecord rec;
    rec.epoch = st.epoch;
    rec.iteration = st.iteration;
    if (rl_steps > 0) {
      rec.mean_style_reward = sum_rs / rl_steps;
      rec.mean_content_reward = sum_rc / rl_steps;
      rec.mean_reward = sum_r / rl_steps;
    }
    rec.dev_acc = dm.acc_mean;
    rec.dev_bleu = dm.bleu_mean;
    rec.dev_score = dm.score;
    rec.teacher_forcing_loss = tf_updates > 0 ? tf_loss / tf_updates : 0.0;
    rec.teacher_forcing_updates = tf_updates;
    st.history.push_back(rec);

    if (dm.score > st.best_score) {
      st.best_score = dm.score;
      st.best_epoch = st.epoch;
      st.stale_epochs = 0;
      res.f = f;
      res.g = g;
      if (ck) ck->save_models("best", f, g);
    } else {
      ++st.stale_epochs;
    }
    log_line(log, "dual_epoch",
             {{"epoch", std::to_string(st.epoch)},
              {"iteration", std::to_string(st.iteration)},
              {"interval", num(st.interval)},
              {"mean_rs", num(rec.mean_style_reward)},
              {"mean_rc", num(rec.mean_content_reward)},
              {"mean_r", num(rec.mean_reward)},
              {"tf_updates", std::to_string(tf_updates)},
              {"tf_loss", num(rec.teacher_forcing_loss)},
              {"dev_acc_x2y", num(dm.acc[0])},
              {"dev_acc_y2x", num(dm.acc[1])},
              {"dev_self_bleu_x2y", num(dm.self_bleu[0])},
              {"dev_self_bleu_y2x", num(dm.self_bleu[1])},
              {"dev_gold_bleu_x2y", num(dm.gold_bleu[0])},
              {"dev_gold_bleu_y2x", num(dm.gold_bleu[1])},
              {"dev_score", num(dm.score)},
              {"best_epoch", std::to_string(st.best_epoch)}});

    if (st.stale_epochs >= cfg.patience || hit_limit ||
        (cfg.max_iterations > 0 && st.iteration >= cfg.max_iterations))
      st.finished = true;
    if (ck) {
      ck->save_last(f, g, st, rng);
      ck->write_history(st);
    }
  }
  if (st.best_epoch < 0) {
    res.f = f;
    res.g = g;
  }
  return res;
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,epoch,mean_rs,mean_rc,mean_r,dev_acc,dev_bleu,dev_score\n";
  for (const auto& r : history)
    os << r.iteration << ',' << r.epoch << ',' << r.mean_style_reward << ',' << r.mean_content_reward << ','
       << r.mean_reward << ',' << r.dev_acc << ',' << r.dev_bleu << ',' << r.dev_score << '\n';
  return os.str();
}

}  // namespace dualstyle
