#pragma once
// Attention-based LSTM encoder-decoder used for both transfer directions.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dualstyle/corpus.hpp"
#include "dualstyle/numerics.hpp"

namespace dualstyle {

struct Seq2SeqConfig {
  int vocab_size = 0;
  int embed_dim = 300;
  int hidden_dim = 256;
};

struct DecodeConfig {
  enum class Mode { Greedy, Sample };
  // 0 means source length + 5, capped at max_len_cap.
  int max_len = 0;
  int max_len_cap = 32;
  Mode mode = Mode::Greedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  int beam = 1;
};

struct SentencePair {
  Sentence source;
  Sentence target;
};

struct SampleBatch {
  std::vector<Sentence> samples;
  std::vector<double> log_probs;
};

class Seq2Seq {
 public:
  Seq2Seq() = default;
  Seq2Seq(const Seq2SeqConfig& config, std::string direction, std::uint64_t seed);
  // Rebuilds a model around checkpointed parameters.
  Seq2Seq(const Seq2SeqConfig& config, std::string direction, ParamSet params);

  const Seq2SeqConfig& config() const { return config_; }
  const std::string& direction() const { return direction_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // Decoder recurrence: LSTM state plus the previous attentional vector,
  // which is fed back as input.
  struct State {
    Var h, c, feed;  // B x H each
  };

  struct Encoded {
    Var memory;  // (B*steps) x 2H, forward and backward encoder states
    Eigen::Index steps = 0;
    std::vector<int> lengths;
    State initial;
    Var output_mask;  // 1 x V, blocks PAD and BOS
  };

  Encoded encode(Tape& tape, std::span<const std::vector<int>* const> sources) const;
  // K consecutive copies of every row of `enc`.
  Encoded repeat(const Encoded& enc, int times) const;
  // One decoder step. Advances `state` and returns masked logits B x V.
  Var step(const Encoded& enc, State& state, std::span<const int> previous) const;

  void save(const std::filesystem::path& path, std::uint64_t vocab_hash) const;
  static Seq2Seq load(const std::filesystem::path& path);

 private:
  void lstm(Var x, Var& h, Var& c, std::size_t w, std::size_t b) const;
  std::vector<Var> run_encoder(Tape& tape, std::span<const std::vector<int>* const> sources, bool reverse,
                               std::size_t w, std::size_t b) const;

  Seq2SeqConfig config_;
  std::string direction_;
  ParamSet params_;
  std::size_t embed_ = 0, enc_w_ = 0, enc_b_ = 0, encr_w_ = 0, encr_b_ = 0, init_w_ = 0, init_b_ = 0;
  std::size_t dec_w_ = 0, dec_b_ = 0, att_w_ = 0, comb_w_ = 0, comb_b_ = 0, out_w_ = 0, out_b_ = 0;
};

// Resolved decode length for a source of `source_length` tokens.
int resolve_max_len(const DecodeConfig& cfg, std::size_t source_length);

// Per-row teacher-forced log P(target | source) as a B x 1 node.
Var sequence_log_probs(Tape& tape, const Seq2Seq& model, std::span<const Sentence* const> sources,
                       std::span<const Sentence* const> targets);

double log_prob(const Seq2Seq& model, const Sentence& source, const Sentence& target);
std::vector<double> log_prob_batch(const Seq2Seq& model, std::span<const Sentence* const> sources,
                                   std::span<const Sentence* const> targets);

// Samples recorded on a tape, rows ordered source-major (b*K + k).
struct TapeSamples {
  std::vector<std::vector<int>> ids;
  Var log_probs;  // (B*K) x 1, model log-probabilities of the drawn ids
};

TapeSamples sample_on_tape(Tape& tape, const Seq2Seq& model, std::span<const Sentence* const> sources, int k,
                           const DecodeConfig& cfg, Rng& rng);

// Ancestral sampling; reported log-probabilities are model log-probabilities.
SampleBatch sample(const Seq2Seq& model, const Sentence& source, int k, const DecodeConfig& cfg);

Sentence greedy_decode(const Seq2Seq& model, const Sentence& source, const DecodeConfig& cfg = {});
// Ids only; use from_ids for surface tokens.
std::vector<Sentence> greedy_decode_batch(const Seq2Seq& model, std::span<const Sentence* const> sources,
                                          const DecodeConfig& cfg = {});

// Mean per-token cross-entropy over the non-PAD target positions.
Var mle_loss(Tape& tape, const Seq2Seq& model, std::span<const SentencePair> pairs);
// One Adam update; returns the pre-update loss.
double mle_step(Seq2Seq& model, std::span<const SentencePair> pairs, AdamState& opt);

}  // namespace dualstyle
