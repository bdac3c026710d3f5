#include "dualstyle/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <numeric>

namespace dualstyle {

namespace {

void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

Tape& tape_of(Var a) {
  require(a.tape != nullptr, ErrorCode::ShapeMismatch, "variable is not on a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  require(a.tape != nullptr && a.tape == b.tape, ErrorCode::ShapeMismatch,
          "operands live on different tapes");
  return *a.tape;
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::ShapeMismatch,
          std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
              " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

Matrix row_softmax(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mx = a.row(r).maxCoeff();
    out.row(r) = (a.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Matrix row_log_softmax(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mx = a.row(r).maxCoeff();
    const double lse = mx + std::log((a.row(r).array() - mx).exp().sum());
    out.row(r) = a.row(r).array() - lse;
  }
  return out;
}

}  // namespace

// ---- ParamSet ---------------------------------------------------------------

std::size_t ParamSet::add(std::string name, Matrix init) {
  params_.push_back(Parameter{std::move(name), std::move(init)});
  return params_.size() - 1;
}

std::size_t ParamSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw Error(ErrorCode::BadCheckpoint, "no parameter named " + name);
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
      return false;
    if (std::memcmp(a.value.data(), b.value.data(), sizeof(double) * a.value.size()) != 0)
      return false;
  }
  return true;
}

// ---- Tape -------------------------------------------------------------------

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::constant(Matrix value) { return push(std::move(value), {}); }

Var Tape::param(const ParamSet& set, std::size_t index) {
  const auto key = std::make_pair(&set, index);
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var{this, it->second};
  Var v = push(set[index].value, {});
  param_nodes_.emplace(key, v.id);
  return v;
}

Matrix& Tape::grad_slot(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::push(Matrix value, Backward backward) {
  if (!value.allFinite())
    throw Error(ErrorCode::NaNDetected, "non-finite value in forward op " + std::to_string(nodes_.size()));
  Node n;
  n.value = std::move(value);
  if (recording_) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss) {
  require(loss.tape == this, ErrorCode::NonScalarLoss, "loss is not on this tape");
  const Matrix& lv = nodes_[loss.id].value;
  require(lv.rows() == 1 && lv.cols() == 1, ErrorCode::NonScalarLoss,
          "loss has shape " + std::to_string(lv.rows()) + "x" + std::to_string(lv.cols()));
  require(recording_, ErrorCode::NonScalarLoss, "tape does not record gradients");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_slot(loss.id)(0, 0) = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, id);
  }
  for (const auto& n : nodes_)
    if (n.grad.size() != 0 && !n.grad.allFinite())
      throw Error(ErrorCode::NaNDetected, "non-finite gradient");
}

Gradients Tape::gradients(const ParamSet& set) const {
  Gradients out(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto it = param_nodes_.find(std::make_pair(&set, i));
    if (it != param_nodes_.end() && nodes_[it->second].grad.size() != 0)
      out[i] = nodes_[it->second].grad;
    else
      out[i] = Matrix::Zero(set[i].value.rows(), set[i].value.cols());
  }
  return out;
}

// ---- primitives -------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.cols() == b.rows(), ErrorCode::ShapeMismatch, "matmul inner dimensions");
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad_slot(a.id).noalias() += g * tp.value(b.id).transpose();
    tp.grad_slot(b.id).noalias() += tp.value(a.id).transpose() * g;
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (bv.rows() == 1 && av.rows() != 1) {
    require(av.cols() == bv.cols(), ErrorCode::ShapeMismatch, "add broadcast columns");
    Matrix out = av.rowwise() + bv.row(0);
    return t.push(std::move(out), [a, b](Tape& tp, int self) {
      const Matrix& g = tp.grad(self);
      tp.grad_slot(a.id) += g;
      tp.grad_slot(b.id) += g.colwise().sum();
    });
  }
  check_same_shape(av, bv, "add");
  return t.push(av + bv, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad_slot(a.id) += g;
    tp.grad_slot(b.id) += g;
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a.value(), b.value(), "sub");
  return t.push(a.value() - b.value(), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad_slot(a.id) += g;
    tp.grad_slot(b.id) -= g;
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a.value(), b.value(), "mul");
  return t.push(a.value().cwiseProduct(b.value()), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad_slot(a.id) += g.cwiseProduct(tp.value(b.id));
    tp.grad_slot(b.id) += g.cwiseProduct(tp.value(a.id));
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  return t.push(a.value() * s, [a, s](Tape& tp, int self) { tp.grad_slot(a.id) += tp.grad(self) * s; });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().array().tanh().matrix();
  return t.push(std::move(out), [a](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.grad_slot(a.id).array() += tp.grad(self).array() * (1.0 - y.array().square());
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return t.push(std::move(out), [a](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.grad_slot(a.id).array() += tp.grad(self).array() * y.array() * (1.0 - y.array());
  });
}

Var softmax(Var a) {
  Tape& t = tape_of(a);
  return t.push(row_softmax(a.value()), [a](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Matrix& ga = tp.grad_slot(a.id);
    for (Eigen::Index r = 0; r < y.rows(); ++r)
      ga.row(r).array() += y.row(r).array() * (g.row(r).array() - dot(r));
  });
}

Var log_softmax(Var a) {
  Tape& t = tape_of(a);
  return t.push(row_log_softmax(a.value()), [a](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    Eigen::VectorXd gs = g.rowwise().sum();
    Matrix& ga = tp.grad_slot(a.id);
    for (Eigen::Index r = 0; r < y.rows(); ++r)
      ga.row(r).array() += g.row(r).array() - y.row(r).array().exp() * gs(r);
  });
}

Var embedding(Var table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    require(ids[r] >= 0 && ids[r] < tv.rows(), ErrorCode::ShapeMismatch,
            "embedding id " + std::to_string(ids[r]) + " out of range");
    out.row(static_cast<Eigen::Index>(r)) = tv.row(ids[r]);
  }
  std::vector<int> rows(ids.begin(), ids.end());
  return t.push(std::move(out), [table, rows = std::move(rows)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& gt = tp.grad_slot(table.id);
    for (std::size_t r = 0; r < rows.size(); ++r) gt.row(rows[r]) += g.row(static_cast<Eigen::Index>(r));
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), ErrorCode::ShapeMismatch, "concat of nothing");
  Tape& t = tape_of(parts[0]);
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require(p.tape == &t && p.rows() == rows, ErrorCode::ShapeMismatch, "concat row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return t.push(std::move(out), [saved = std::move(saved)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Eigen::Index off = 0;
    for (const Var& p : saved) {
      const Eigen::Index w = tp.value(p.id).cols();
      tp.grad_slot(p.id) += g.middleCols(off, w);
      off += w;
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  require(start >= 0 && count >= 0 && start + count <= a.cols(), ErrorCode::ShapeMismatch, "slice range");
  Matrix out = a.value().middleCols(start, count);
  return t.push(std::move(out), [a, start, count](Tape& tp, int self) {
    tp.grad_slot(a.id).middleCols(start, count) += tp.grad(self);
  });
}

Var row_blend(Var a, Var b, std::span<const double> mask) {
  Tape& t = tape_of(a, b);
  check_same_shape(a.value(), b.value(), "row_blend");
  require(static_cast<Eigen::Index>(mask.size()) == a.rows(), ErrorCode::ShapeMismatch, "row_blend mask");
  Eigen::VectorXd m = Eigen::Map<const Eigen::VectorXd>(mask.data(), static_cast<Eigen::Index>(mask.size()));
  Matrix out = m.asDiagonal() * a.value() + (1.0 - m.array()).matrix().asDiagonal() * b.value();
  return t.push(std::move(out), [a, b, m](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad_slot(a.id) += m.asDiagonal() * g;
    tp.grad_slot(b.id) += (1.0 - m.array()).matrix().asDiagonal() * g;
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), [a](Tape& tp, int self) { tp.grad_slot(a.id).array() += tp.grad(self)(0, 0); });
}

Var masked_sum(Var a, const Matrix& weights) {
  Tape& t = tape_of(a);
  check_same_shape(a.value(), weights, "masked_sum");
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(weights).sum();
  return t.push(std::move(out), [a, weights](Tape& tp, int self) {
    tp.grad_slot(a.id) += weights * tp.grad(self)(0, 0);
  });
}

Var masked_mean(Var a, const Matrix& weights) {
  const double total = weights.sum();
  require(total > 0.0, ErrorCode::ShapeMismatch, "masked_mean with empty mask");
  return masked_sum(a, weights / total);
}

Var pick(Var a, std::span<const int> targets) {
  Tape& t = tape_of(a);
  require(static_cast<Eigen::Index>(targets.size()) == a.rows(), ErrorCode::ShapeMismatch, "pick targets");
  Matrix out(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    require(targets[r] >= 0 && targets[r] < a.cols(), ErrorCode::ShapeMismatch, "pick target range");
    out(r, 0) = a.value()(r, targets[r]);
  }
  std::vector<int> tg(targets.begin(), targets.end());
  return t.push(std::move(out), [a, tg = std::move(tg)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& ga = tp.grad_slot(a.id);
    for (std::size_t r = 0; r < tg.size(); ++r) ga(static_cast<Eigen::Index>(r), tg[r]) += g(static_cast<Eigen::Index>(r), 0);
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  Tape& t = tape_of(logits);
  require(static_cast<Eigen::Index>(targets.size()) == logits.rows(), ErrorCode::ShapeMismatch,
          "cross_entropy targets");
  Matrix logp = row_log_softmax(logits.value());
  Matrix out(logits.rows(), 1);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    require(targets[r] >= 0 && targets[r] < logits.cols(), ErrorCode::ShapeMismatch, "target range");
    out(r, 0) = -logp(r, targets[r]);
  }
  std::vector<int> tg(targets.begin(), targets.end());
  return t.push(std::move(out), [logits, tg = std::move(tg), logp = std::move(logp)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& gl = tp.grad_slot(logits.id);
    for (Eigen::Index r = 0; r < logp.rows(); ++r) {
      const double gr = g(r, 0);
      if (gr == 0.0) continue;
      gl.row(r).array() += gr * logp.row(r).array().exp();
      gl(r, tg[static_cast<std::size_t>(r)]) -= gr;
    }
  });
}

Var conv1d(Var x, Eigen::Index steps, Var w, Var bias, int width) {
  Tape& t = tape_of(x, w);
  require(bias.tape == &t, ErrorCode::ShapeMismatch, "conv1d bias tape");
  const Matrix& xv = x.value();
  const Eigen::Index dim = xv.cols();
  require(steps >= width && width >= 1, ErrorCode::ShapeMismatch, "conv1d needs steps >= width");
  require(xv.rows() % steps == 0, ErrorCode::ShapeMismatch, "conv1d rows not a multiple of steps");
  require(w.rows() == width * dim, ErrorCode::ShapeMismatch, "conv1d filter rows");
  require(bias.rows() == 1 && bias.cols() == w.cols(), ErrorCode::ShapeMismatch, "conv1d bias shape");
  const Eigen::Index batch = xv.rows() / steps;
  const Eigen::Index out_steps = steps - width + 1;
  // Windows as rows of the unfolded (B*T') x (width*E) matrix.
  Matrix unfolded(batch * out_steps, width * dim);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index s = 0; s < out_steps; ++s)
      for (int k = 0; k < width; ++k)
        unfolded.block(b * out_steps + s, k * dim, 1, dim) = xv.row(b * steps + s + k);
  Matrix out = unfolded * w.value();
  out.rowwise() += bias.value().row(0);
  return t.push(std::move(out), [x, w, bias, steps, width, dim, batch, out_steps,
                                 unfolded = std::move(unfolded)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad_slot(w.id).noalias() += unfolded.transpose() * g;
    tp.grad_slot(bias.id) += g.colwise().sum();
    Matrix gu = g * tp.value(w.id).transpose();
    Matrix& gx = tp.grad_slot(x.id);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (Eigen::Index s = 0; s < out_steps; ++s)
        for (int k = 0; k < width; ++k)
          gx.row(b * steps + s + k) += gu.block(b * out_steps + s, k * dim, 1, dim);
  });
}

Var max_over_time(Var z, Eigen::Index steps, std::span<const int> valid) {
  Tape& t = tape_of(z);
  const Matrix& zv = z.value();
  require(steps >= 1 && zv.rows() % steps == 0, ErrorCode::ShapeMismatch, "max_over_time rows");
  const Eigen::Index batch = zv.rows() / steps;
  require(static_cast<Eigen::Index>(valid.size()) == batch, ErrorCode::ShapeMismatch, "max_over_time valid");
  Matrix out(batch, zv.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(batch * zv.cols()));
  for (Eigen::Index b = 0; b < batch; ++b) {
    const int n = valid[b];
    require(n >= 1 && n <= steps, ErrorCode::ShapeMismatch, "max_over_time valid length");
    for (Eigen::Index c = 0; c < zv.cols(); ++c) {
      Eigen::Index best = b * steps;
      for (Eigen::Index s = 1; s < n; ++s)
        if (zv(b * steps + s, c) > zv(best, c)) best = b * steps + s;
      out(b, c) = zv(best, c);
      arg[static_cast<std::size_t>(b * zv.cols() + c)] = best;
    }
  }
  return t.push(std::move(out), [z, arg = std::move(arg)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& gz = tp.grad_slot(z.id);
    for (Eigen::Index b = 0; b < g.rows(); ++b)
      for (Eigen::Index c = 0; c < g.cols(); ++c) gz(arg[static_cast<std::size_t>(b * g.cols() + c)], c) += g(b, c);
  });
}

Var stack_time(std::span<const Var> steps) {
  require(!steps.empty(), ErrorCode::ShapeMismatch, "stack_time of nothing");
  Tape& t = tape_of(steps[0]);
  const Eigen::Index batch = steps[0].rows();
  const Eigen::Index dim = steps[0].cols();
  const auto count = static_cast<Eigen::Index>(steps.size());
  Matrix out(batch * count, dim);
  for (Eigen::Index s = 0; s < count; ++s) {
    const Matrix& v = steps[static_cast<std::size_t>(s)].value();
    require(v.rows() == batch && v.cols() == dim, ErrorCode::ShapeMismatch, "stack_time shapes");
    for (Eigen::Index b = 0; b < batch; ++b) out.row(b * count + s) = v.row(b);
  }
  std::vector<Var> saved(steps.begin(), steps.end());
  return t.push(std::move(out), [saved = std::move(saved), batch, count](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    for (Eigen::Index s = 0; s < count; ++s) {
      Matrix& gs = tp.grad_slot(saved[static_cast<std::size_t>(s)].id);
      for (Eigen::Index b = 0; b < batch; ++b) gs.row(b) += g.row(b * count + s);
    }
  });
}

Var repeat_blocks(Var a, Eigen::Index block_rows, int times) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  require(block_rows >= 1 && times >= 1 && av.rows() % block_rows == 0, ErrorCode::ShapeMismatch,
          "repeat_blocks shape");
  const Eigen::Index blocks = av.rows() / block_rows;
  Matrix out(av.rows() * times, av.cols());
  for (Eigen::Index b = 0; b < blocks; ++b)
    for (int k = 0; k < times; ++k)
      out.middleRows((b * times + k) * block_rows, block_rows) = av.middleRows(b * block_rows, block_rows);
  return t.push(std::move(out), [a, block_rows, times, blocks](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& ga = tp.grad_slot(a.id);
    for (Eigen::Index b = 0; b < blocks; ++b)
      for (int k = 0; k < times; ++k)
        ga.middleRows(b * block_rows, block_rows) += g.middleRows((b * times + k) * block_rows, block_rows);
  });
}

Var attention(Var query, Var memory, Eigen::Index steps, std::span<const int> lengths) {
  Tape& t = tape_of(query, memory);
  const Matrix& q = query.value();
  const Matrix& mem = memory.value();
  const Eigen::Index batch = q.rows();
  require(mem.rows() == batch * steps && mem.cols() == q.cols(), ErrorCode::ShapeMismatch, "attention memory");
  require(static_cast<Eigen::Index>(lengths.size()) == batch, ErrorCode::ShapeMismatch, "attention lengths");
  Matrix weights = Matrix::Zero(batch, steps);
  Matrix out(batch, q.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    const int n = lengths[b];
    require(n >= 1 && n <= steps, ErrorCode::ShapeMismatch, "attention length");
    auto block = mem.middleRows(b * steps, n);
    Eigen::RowVectorXd scores = (block * q.row(b).transpose()).transpose();
    const double mx = scores.maxCoeff();
    Eigen::RowVectorXd e = (scores.array() - mx).exp();
    e /= e.sum();
    weights.row(b).head(n) = e;
    out.row(b) = e * block;
  }
  std::vector<int> lens(lengths.begin(), lengths.end());
  return t.push(std::move(out), [query, memory, steps, weights = std::move(weights),
                                 lens = std::move(lens)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& qv = tp.value(query.id);
    const Matrix& mv = tp.value(memory.id);
    Matrix& gq = tp.grad_slot(query.id);
    Matrix& gm = tp.grad_slot(memory.id);
    for (Eigen::Index b = 0; b < qv.rows(); ++b) {
      const int n = lens[static_cast<std::size_t>(b)];
      auto block = mv.middleRows(b * steps, n);
      Eigen::RowVectorXd a = weights.row(b).head(n);
      // d context / d memory rows through the convex weights
      gm.middleRows(b * steps, n).noalias() += a.transpose() * g.row(b);
      Eigen::RowVectorXd ga = (block * g.row(b).transpose()).transpose();
      const double dot = ga.dot(a);
      Eigen::RowVectorXd gs = a.array() * (ga.array() - dot);
      gq.row(b).noalias() += gs * block;
      gm.middleRows(b * steps, n).noalias() += gs.transpose() * qv.row(b);
    }
  });
}

// ---- optimizer --------------------------------------------------------------

AdamState make_adam(const ParamSet& params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto& p : params) {
    s.m.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    s.v.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
  return s;
}

double clip_global_norm(Gradients& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& g : grads) g *= f;
  }
  return norm;
}

void adam_step(ParamSet& params, Gradients grads, AdamState& state) {
  require(grads.size() == params.size() && state.m.size() == params.size() && state.v.size() == params.size(),
          ErrorCode::ShapeMismatch, "adam: parameter/gradient/state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& p = params[i].value;
    if (grads[i].size() == 0) grads[i] = Matrix::Zero(p.rows(), p.cols());
    require(grads[i].rows() == p.rows() && grads[i].cols() == p.cols() && state.m[i].rows() == p.rows() &&
                state.m[i].cols() == p.cols(),
            ErrorCode::ShapeMismatch, "adam: shape mismatch for " + params[i].name);
  }
  clip_global_norm(grads, state.config.clip_norm);
  state.t += 1;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grads[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grads[i].cwiseAbs2();
    params[i].value.array() -=
        c.lr * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + c.eps);
  }
}

// ---- grad check -------------------------------------------------------------

double grad_check(const ScalarFn& fn, ParamSet& params, const GradCheckOptions& options) {
  Gradients analytic;
  {
    Tape tape;
    Var loss = fn(tape, params);
    tape.backward(loss);
    analytic = tape.gradients(params);
  }
  auto eval = [&] {
    Tape tape(false);
    return fn(tape, params).value()(0, 0);
  };
  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (Eigen::Index k = 0; k < params[i].value.size(); ++k) coords.emplace_back(i, k);
  if (options.max_coords > 0 && coords.size() > options.max_coords) {
    Rng rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coords);
  }
  double worst = 0.0;
  for (auto [i, k] : coords) {
    double& x = params[i].value.data()[k];
    const double saved = x;
    x = saved + options.step;
    const double fp = eval();
    x = saved - options.step;
    const double fm = eval();
    x = saved;
    const double numeric = (fp - fm) / (2.0 * options.step);
    const double a = analytic[i].data()[k];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

// ---- init -------------------------------------------------------------------

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'S', 'C', 'K'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error(ErrorCode::BadCheckpoint, "truncated checkpoint");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1ull << 32)) throw Error(ErrorCode::BadCheckpoint, "implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw Error(ErrorCode::BadCheckpoint, "truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, const nlohmann::json& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + path.string());
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put_string(os, meta.dump());
  put<std::uint64_t>(os, params.size());
  for (const auto& p : params) {
    put_string(os, p.name);
    put<std::int64_t>(os, p.value.rows());
    put<std::int64_t>(os, p.value.cols());
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(sizeof(double) * p.value.size()));
  }
  if (!os) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

std::pair<ParamSet, nlohmann::json> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorCode::BadCheckpoint, "bad magic in " + path.string());
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::BadCheckpoint, "unsupported checkpoint version " + std::to_string(version));
  nlohmann::json meta = nlohmann::json::parse(get_string(is));
  ParamSet params;
  const auto count = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(is);
    const auto rows = get<std::int64_t>(is);
    const auto cols = get<std::int64_t>(is);
    if (rows < 0 || cols < 0 || rows * cols > (1ll << 31)) throw Error(ErrorCode::BadCheckpoint, "bad shape");
    Matrix m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!is) throw Error(ErrorCode::BadCheckpoint, "truncated values for " + name);
    params.add(std::move(name), std::move(m));
  }
  return {std::move(params), std::move(meta)};
}

std::uint64_t hash_params(const ParamSet& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& p : params) {
    mix(p.name.data(), p.name.size());
    const std::int64_t shape[2] = {p.value.rows(), p.value.cols()};
    mix(shape, sizeof(shape));
    mix(p.value.data(), sizeof(double) * static_cast<std::size_t>(p.value.size()));
  }
  return h;
}

void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 32 << 20);  // glibc's upper limit on 64-bit
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace dualstyle
