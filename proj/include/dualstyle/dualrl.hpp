#pragma once
// Dual reinforcement learning engine: pre-training on pseudo pairs, the
// alternating policy-gradient loop, annealed back-translation teacher forcing,
// early stopping and resumable checkpoints.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "dualstyle/classifier.hpp"
#include "dualstyle/corpus.hpp"
#include "dualstyle/eval.hpp"
#include "dualstyle/pseudo.hpp"
#include "dualstyle/rewards.hpp"
#include "dualstyle/seq2seq.hpp"

namespace dualstyle {

struct AnnealSchedule {
  double p0 = 1.0;
  double p_max = 100.0;
  double rate = 1.1;
  double gap = 1000.0;
};

// min(p0 * rate^(i / gap), p_max)
double anneal_interval(std::int64_t i, const AnnealSchedule& schedule);

enum class BaselineMode { LeaveOneOut, None };
enum class Ablation { RlPlusMle, RlOnly, MleOnly };

const char* baseline_name(BaselineMode m);
BaselineMode parse_baseline(std::string_view s);
const char* ablation_name(Ablation a);
Ablation parse_ablation(std::string_view s);

struct TrainConfig {
  int pretrain_epochs = 5;
  int max_dual_epochs = 20;
  std::int64_t max_iterations = 0;  // M; 0 = bounded by epochs only
  int iterations_per_epoch = 0;     // 0 = ceil(|D_X train| / dual_batch)
  double pretrain_lr = 1e-3;
  double dual_lr = 1e-5;
  int pretrain_batch = 32;
  int dual_batch = 128;
  RewardConfig reward;
  AnnealSchedule schedule;
  BaselineMode baseline = BaselineMode::LeaveOneOut;
  Ablation ablation = Ablation::RlPlusMle;
  int patience = 1;
  double temperature = 1.0;
  int dev_limit = 0;  // 0 = whole dev split per style
  std::uint64_t seed = 1;

  void validate() const;  // throws BadConfig
};

// Where a direction's model sits: f maps X -> Y (index 0), g maps Y -> X (index 1).
enum class Direction : int { XtoY = 0, YtoX = 1 };
inline Style source_style(Direction d) { return d == Direction::XtoY ? Style::X : Style::Y; }
inline Style target_style(Direction d) { return d == Direction::XtoY ? Style::Y : Style::X; }

struct TrainState {
  std::int64_t iteration = 0;
  int epoch = 0;
  double interval = 1.0;
  std::array<std::int64_t, 2> last_trigger{kNeverTriggered, kNeverTriggered};
  std::array<AdamState, 2> rl_opt;
  std::array<AdamState, 2> mle_opt;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  int stale_epochs = 0;
  std::int64_t degenerate_samples = 0;
  bool finished = false;

  static constexpr std::int64_t kNeverTriggered = std::numeric_limits<std::int64_t>::min() / 2;
};

// Spacing rule: fires iff iteration - last_trigger[direction] >= interval,
// recording the trigger. Uses state.iteration and state.interval.
bool should_teacher_force(TrainState& state, Direction direction);

struct RlStepStats {
  double mean_style = 0.0;
  double mean_content = 0.0;
  double mean_reward = 0.0;
  std::int64_t samples = 0;
  std::int64_t degenerate = 0;
  bool updated = false;
};

// Per-sample rewards and advantages of one policy-gradient batch, exposed so
// the estimator can be checked against enumeration.
struct RlBatch {
  std::vector<std::vector<int>> sample_ids;  // (B*K), source-major
  std::vector<RewardBreakdown> rewards;
  std::vector<double> advantages;  // already divided by B*K
  std::vector<bool> degenerate;
};

// Reward scorer: total reward for each (sample, source) row.
struct RewardContext {
  const StyleClassifier* classifier = nullptr;
  const Seq2Seq* opposite = nullptr;
  const Vocabulary* vocab = nullptr;  // needed for the BLEU variant
  Style target = Style::Y;
  RewardConfig config;
};

std::vector<RewardBreakdown> score_samples(const RewardContext& ctx, const std::vector<std::vector<int>>& sample_ids,
                                           std::span<const Sentence* const> sources, int k,
                                           std::vector<bool>& degenerate);

// Advantages (R_k - b_k) / (B*K); b_k is the leave-one-out mean over the
// other non-degenerate samples of the same source, or 0.
std::vector<double> advantages(const std::vector<RewardBreakdown>& rewards, const std::vector<bool>& degenerate,
                               std::size_t batch, int k, BaselineMode mode);

// Builds the surrogate loss -sum advantage * log P(sample) on `tape` and
// returns it with the batch record. No parameter update. max_len 0 uses the
// default decode length.
std::pair<Var, RlBatch> rl_surrogate(Tape& tape, const Seq2Seq& policy, const RewardContext& ctx,
                                     std::span<const Sentence* const> sources, BaselineMode mode, double temperature,
                                     Rng& rng, int max_len = 0);

// One policy-gradient update of `policy` on a batch of sources.
RlStepStats rl_step(Seq2Seq& policy, const RewardContext& ctx, std::span<const Sentence* const> sources,
                    BaselineMode mode, double temperature, AdamState& opt, Rng& rng);

// Back-translates `authentic` with the opposite model and takes one MLE step
// on (generated, authentic) pairs.
double teacher_forcing_step(Seq2Seq& model, const Seq2Seq& opposite, std::span<const Sentence* const> authentic,
                            std::int64_t iteration, const Vocabulary& vocab, AdamState& opt);

struct PretrainReport {
  std::array<double, 2> dev_loss_before{};
  std::array<double, 2> dev_loss_after{};
};

// MLE on the template pairs for cfg.pretrain_epochs at cfg.pretrain_lr.
// dev pairs (optional) are only scored.
PretrainReport pretrain(Seq2Seq& f, Seq2Seq& g, const PretrainPairs& pairs, const TrainConfig& cfg,
                        const PretrainPairs* dev_pairs = nullptr, std::ostream* log = nullptr);

struct DevMetrics {
  std::array<double, 2> acc{};        // percent per direction
  std::array<double, 2> self_bleu{};  // outputs vs inputs
  std::array<double, 2> gold_bleu{-1.0, -1.0};  // outputs vs references, -1 without refs
  double acc_mean = 0.0;
  double bleu_mean = 0.0;
  double score = 0.0;  // H2 of the two means
};

DevMetrics dev_metrics(const Seq2Seq& f, const Seq2Seq& g, const StyleClassifier& clf, const StyleCorpus& corpus,
                       const Vocabulary& vocab, Split split, int limit);

struct TrainResult {
  Seq2Seq f;
  Seq2Seq g;
  TrainState state;
};

struct RunFiles {
  std::filesystem::path dir;  // history.csv, checkpoints/
  bool resume = false;
};

TrainResult train(const Seq2Seq& f, const Seq2Seq& g, const StyleClassifier& clf, const StyleCorpus& corpus,
                  const Vocabulary& vocab, const TrainConfig& cfg, const std::optional<RunFiles>& files = std::nullopt,
                  std::ostream* log = nullptr);

// history.csv: iteration,epoch,mean_rs,mean_rc,mean_r,dev_acc,dev_bleu,dev_score
std::string history_csv(std::span<const EpochRecord> history);

// Worker threads from DUALSTYLE_THREADS (default 1).
int worker_threads();

}  // namespace dualstyle
