#pragma once
// Dense reverse-mode autodiff over row-major double matrices, Adam, and a
// finite-difference gradient checker.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dualstyle/error.hpp"

namespace dualstyle {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

struct Parameter {
  std::string name;
  Matrix value;
};

// Owns a model's parameters. Indices are stable, so copying the set keeps
// every index held by the owning model valid.
class ParamSet {
 public:
  std::size_t add(std::string name, Matrix init);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  std::size_t find(const std::string& name) const;  // throws if absent
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  bool operator==(const ParamSet& other) const;

 private:
  std::vector<Parameter> params_;
};

// One slot per ParamSet entry. Empty matrices mean "no gradient reached it".
using Gradients = std::vector<Matrix>;

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var param(const ParamSet& set, std::size_t index);

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  // Allocates a zero gradient slot on first use.
  Matrix& grad_slot(int id);

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  // Records a node. `backward` may be empty (leaf) and is dropped when the
  // tape does not record gradients.
  Var push(Matrix value, Backward backward);

  // Reverse sweep from a 1x1 node. Throws NonScalarLoss / NaNDetected.
  void backward(Var loss);

  // Gradients for every parameter of `set` that was placed on this tape;
  // untouched parameters receive a zero matrix of the right shape.
  Gradients gradients(const ParamSet& set) const;

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::map<std::pair<const ParamSet*, std::size_t>, int> param_nodes_;
  bool recording_;
};

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);
// Same shape, or `b` a 1 x n row broadcast over the rows of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var tanh(Var a);
Var sigmoid(Var a);
Var softmax(Var a);      // row-wise
Var log_softmax(Var a);  // row-wise
Var embedding(Var table, std::span<const int> ids);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
// row r of result = mask[r] * a[r] + (1 - mask[r]) * b[r]
Var row_blend(Var a, Var b, std::span<const double> mask);
Var sum(Var a);
// sum_ij weights_ij * a_ij, returned as 1x1.
Var masked_sum(Var a, const Matrix& weights);
// masked_sum divided by sum of weights.
Var masked_mean(Var a, const Matrix& weights);
// Column vector of a[r, targets[r]].
Var pick(Var a, std::span<const int> targets);
// Column vector of -log softmax(logits)[r, targets[r]].
Var cross_entropy(Var logits, std::span<const int> targets);
// x is (B*T) x E with rows ordered b*T + t. w is (width*E) x C, bias 1 x C.
// Output is (B*(T-width+1)) x C with rows ordered b*(T-width+1) + t.
Var conv1d(Var x, Eigen::Index steps, Var w, Var bias, int width);
// z is (B*T) x C. Max over the first valid[b] rows of each block of T rows.
Var max_over_time(Var z, Eigen::Index steps, std::span<const int> valid);
// Stack T matrices of shape B x H into (B*T) x H with rows ordered b*T + t.
Var stack_time(std::span<const Var> steps);
// Each consecutive block of `block_rows` rows is emitted `times` times in a row.
Var repeat_blocks(Var a, Eigen::Index block_rows, int times);
// Bilinear-score attention read. query B x H, memory (B*T) x H. Positions
// t >= lengths[b] are masked out. Returns the B x H context.
Var attention(Var query, Var memory, Eigen::Index steps, std::span<const int> lengths);

// ---- optimizer ------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
};

struct AdamState {
  AdamConfig config;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t t = 0;
};

AdamState make_adam(const ParamSet& params, AdamConfig config);

// Scales gradients in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

// Clips (when configured) and applies one bias-corrected Adam update.
void adam_step(ParamSet& params, Gradients grads, AdamState& state);

// ---- gradient checking ----------------------------------------------------

using ScalarFn = std::function<Var(Tape&, const ParamSet&)>;

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_coords = 0;  // 0 checks every coordinate
  std::uint64_t seed = 0;
  // Denominator floor: error = |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

// Max relative error between backward() and central differences.
double grad_check(const ScalarFn& fn, ParamSet& params, const GradCheckOptions& options = {});

// ---- initialization -------------------------------------------------------

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng);
Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

// ---- checkpoint container -------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params,
                     const nlohmann::json& meta);
std::pair<ParamSet, nlohmann::json> load_checkpoint(const std::filesystem::path& path);

// FNV-1a over names, shapes and raw value bytes.
std::uint64_t hash_params(const ParamSet& params);

// Keeps large tape buffers on the heap instead of fresh mmaps (glibc only).
void tune_allocator();

}  // namespace dualstyle
