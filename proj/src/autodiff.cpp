#include "relate3d/autodiff.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "relate3d/errors.hpp"
#include "relate3d/rng.hpp"

namespace relate3d::nn {

Matrix row_product(const Matrix& x, const Matrix& w) {
  if (x.cols() != w.rows()) {
    throw std::invalid_argument("row_product: inner dimensions differ (" +
                                std::to_string(x.cols()) + " vs " + std::to_string(w.rows()) +
                                ")");
  }
  Matrix y(x.rows(), w.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    y.row(i).noalias() = x.row(i) * w;
  }
  return y;
}

bool MlpSpec::valid() const {
  if (layer_dims.size() < 2) return false;
  for (int d : layer_dims) {
    if (d < 1) return false;
  }
  return true;
}

std::size_t Parameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) {
    n += static_cast<std::size_t>(layer.weight.size()) + static_cast<std::size_t>(layer.bias.size());
  }
  return n;
}

bool Parameters::shapes_match(const MlpSpec& spec) const {
  if (static_cast<int>(layers.size()) != spec.num_layers()) return false;
  for (int i = 0; i < spec.num_layers(); ++i) {
    if (layers[i].weight.rows() != spec.layer_dims[i] ||
        layers[i].weight.cols() != spec.layer_dims[i + 1] || layers[i].bias.rows() != 1 ||
        layers[i].bias.cols() != spec.layer_dims[i + 1]) {
      return false;
    }
  }
  return true;
}

Parameters Parameters::zeros_like(const Parameters& other) {
  Parameters out;
  out.layers.reserve(other.layers.size());
  for (const auto& layer : other.layers) {
    out.layers.push_back(LinearLayer{Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                                     Matrix::Zero(layer.bias.rows(), layer.bias.cols())});
  }
  return out;
}

Parameters init_params(const MlpSpec& spec, std::uint64_t seed) {
  if (!spec.valid()) throw std::invalid_argument("init_params: invalid MlpSpec");
  Rng rng(seed);
  Parameters params;
  params.layers.reserve(spec.num_layers());
  for (int i = 0; i < spec.num_layers(); ++i) {
    const int fan_in = spec.layer_dims[i];
    const int fan_out = spec.layer_dims[i + 1];
    const double bound = std::sqrt(6.0 / fan_in);
    LinearLayer layer;
    layer.weight.resize(fan_in, fan_out);
    for (Eigen::Index j = 0; j < layer.weight.size(); ++j) {
      layer.weight.data()[j] = rng.uniform(-bound, bound);
    }
    layer.bias = Matrix::Zero(1, fan_out);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::emit(Matrix value, bool requires_grad, std::function<void(Tape&)> backprop) {
  assert(value.size() == 0 || value.allFinite());
  NodeRec rec;
  rec.value = std::move(value);
  rec.requires_grad = requires_grad && grad_enabled_;
  if (rec.requires_grad) rec.backprop = std::move(backprop);
  nodes_.push_back(std::move(rec));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::grad(Var v) const {
  const NodeRec& rec = nodes_[v.id];
  if (rec.grad.size() == 0 && rec.value.size() != 0) {
    // Lazily materialize zeros for nodes backward never touched.
    const_cast<NodeRec&>(rec).grad = Matrix::Zero(rec.value.rows(), rec.value.cols());
  }
  return rec.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  NodeRec& rec = nodes_[v.id];
  if (!rec.requires_grad) return;
  if (rec.grad.size() == 0) {
    rec.grad = Matrix::Zero(rec.value.rows(), rec.value.cols());
  }
  rec.grad += g;
}

void Tape::backward(Var output) {
  const Matrix& out = value(output);
  if (out.rows() != 1 || out.cols() != 1) {
    throw std::invalid_argument("backward: output must be 1x1 when no gradient is given");
  }
  backward(output, Matrix::Ones(1, 1));
}

void Tape::backward(Var output, const Matrix& output_grad) {
  if (!grad_enabled_) {
    throw std::logic_error("backward: tape was created with gradients disabled");
  }
  const Matrix& out = value(output);
  if (out.rows() != output_grad.rows() || out.cols() != output_grad.cols()) {
    throw std::invalid_argument("backward: output_grad shape " +
                                std::to_string(output_grad.rows()) + "x" +
                                std::to_string(output_grad.cols()) + " does not match output " +
                                std::to_string(out.rows()) + "x" + std::to_string(out.cols()));
  }
  accumulate(output, output_grad);
  for (int i = output.id; i >= 0; --i) {
    NodeRec& rec = nodes_[i];
    if (rec.requires_grad && rec.backprop && rec.grad.size() != 0) {
      rec.backprop(*this);
    }
  }
}

// ---------------------------------------------------------------------------
// Primitive ops

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  Matrix value = row_product(t.value(a), t.value(b));
  return t.emit(std::move(value), t.requires_grad(a) || t.requires_grad(b),
                [a, b, out = Var{static_cast<int>(t.size())}](Tape& tape) {
                  const Matrix& g = tape.grad(out);
                  // dA = G * B^T, dB = A^T * G. The dA side uses the row
                  // kernel so gradients stay row-equivariant too.
                  tape.accumulate(a, row_product(g, tape.value(b).transpose()));
                  tape.accumulate(b, tape.value(a).transpose() * g);
                });
}

Var add_bias(Tape& t, Var m, Var bias_row) {
  const Matrix& mv = t.value(m);
  const Matrix& bv = t.value(bias_row);
  if (bv.rows() != 1 || bv.cols() != mv.cols()) {
    throw std::invalid_argument("add_bias: bias must be 1x" + std::to_string(mv.cols()) +
                                ", got " + std::to_string(bv.rows()) + "x" +
                                std::to_string(bv.cols()));
  }
  Matrix value = mv;
  value.rowwise() += bv.row(0);
  return t.emit(std::move(value), t.requires_grad(m) || t.requires_grad(bias_row),
                [m, bias_row, out = Var{static_cast<int>(t.size())}](Tape& tape) {
                  const Matrix& g = tape.grad(out);
                  tape.accumulate(m, g);
                  tape.accumulate(bias_row, g.colwise().sum());
                });
}

Var add(Tape& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "add");
  Matrix value = t.value(a) + t.value(b);
  return t.emit(std::move(value), t.requires_grad(a) || t.requires_grad(b),
                [a, b, out = Var{static_cast<int>(t.size())}](Tape& tape) {
                  tape.accumulate(a, tape.grad(out));
                  tape.accumulate(b, tape.grad(out));
                });
}

Var sub(Tape& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "sub");
  Matrix value = t.value(a) - t.value(b);
  return t.emit(std::move(value), t.requires_grad(a) || t.requires_grad(b),
                [a, b, out = Var{static_cast<int>(t.size())}](Tape& tape) {
                  tape.accumulate(a, tape.grad(out));
                  tape.accumulate(b, -tape.grad(out));
                });
}

Var relu(Tape& t, Var m) {
  const Matrix& mv = t.value(m);
  if (mv.size() > 0) t.note_margin(mv.cwiseAbs().minCoeff());
  Matrix value = mv.cwiseMax(0.0);
  return t.emit(std::move(value), t.requires_grad(m),
                [m, out = Var{static_cast<int>(t.size())}](Tape& tape) {
                  // Subgradient at exactly 0 is 0: strict comparison.
                  const Matrix mask =
                      (tape.value(m).array() > 0.0).cast<double>().matrix();
                  tape.accumulate(m, tape.grad(out).cwiseProduct(mask));
                });
}

Var scale(Tape& t, Var m, double s) {
  Matrix value = t.value(m) * s;
  return t.emit(std::move(value), t.requires_grad(m),
                [m, s, out = Var{static_cast<int>(t.size())}](Tape& tape) {
                  tape.accumulate(m, tape.grad(out) * s);
                });
}

Var hcat(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("hcat: no inputs");
  const Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  bool any_grad = false;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) {
      throw std::invalid_argument("hcat: row counts differ");
    }
    cols += t.value(p).cols();
    any_grad = any_grad || t.requires_grad(p);
  }
  Matrix value(rows, cols);
  Eigen::Index offset = 0;
  for (Var p : parts) {
    const Matrix& pv = t.value(p);
    value.middleCols(offset, pv.cols()) = pv;
    offset += pv.cols();
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  return t.emit(std::move(value), any_grad,
                [owned = std::move(owned), out = Var{static_cast<int>(t.size())}](Tape& tape) {
                  const Matrix& g = tape.grad(out);
                  Eigen::Index offset = 0;
                  for (Var p : owned) {
                    const Eigen::Index c = tape.value(p).cols();
                    tape.accumulate(p, g.middleCols(offset, c));
                    offset += c;
                  }
                });
}

Var gather_rows(Tape& t, Var m, std::vector<int> rows) {
  const Matrix& mv = t.value(m);
  Matrix value(static_cast<Eigen::Index>(rows.size()), mv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= mv.rows()) {
      throw std::invalid_argument("gather_rows: index " + std::to_string(rows[i]) +
                                  " out of range [0, " + std::to_string(mv.rows()) + ")");
    }
    value.row(static_cast<Eigen::Index>(i)) = mv.row(rows[i]);
  }
  return t.emit(std::move(value), t.requires_grad(m),
                [m, rows = std::move(rows), out = Var{static_cast<int>(t.size())}](Tape& tape) {
                  const Matrix& g = tape.grad(out);
                  Matrix acc = Matrix::Zero(tape.value(m).rows(), tape.value(m).cols());
                  for (std::size_t i = 0; i < rows.size(); ++i) {
                    acc.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
                  }
                  tape.accumulate(m, acc);
                });
}

Var slice_cols(Tape& t, Var m, int begin, int count) {
  const Matrix& mv = t.value(m);
  if (begin < 0 || count < 0 || begin + count > mv.cols()) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") out of " +
                                std::to_string(mv.cols()) + " columns");
  }
  Matrix value = mv.middleCols(begin, count);
  return t.emit(std::move(value), t.requires_grad(m),
                [m, begin, count, out = Var{static_cast<int>(t.size())}](Tape& tape) {
                  const Matrix& g = tape.grad(out);
                  Matrix acc = Matrix::Zero(tape.value(m).rows(), tape.value(m).cols());
                  acc.middleCols(begin, count) = g;
                  tape.accumulate(m, acc);
                });
}

Var sum_all(Tape& t, Var m) {
  Matrix value(1, 1);
  value(0, 0) = t.value(m).sum();
  return t.emit(std::move(value), t.requires_grad(m),
                [m, out = Var{static_cast<int>(t.size())}](Tape& tape) {
                  const double g = tape.grad(out)(0, 0);
                  tape.accumulate(m, Matrix::Constant(tape.value(m).rows(),
                                                      tape.value(m).cols(), g));
                });
}

MaxPoolResult max_pool_groups(const Matrix& rows, const std::vector<std::vector<int>>& groups) {
  MaxPoolResult result;
  result.pooled.resize(static_cast<Eigen::Index>(groups.size()), rows.cols());
  result.argmax.resize(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& group = groups[g];
    if (group.empty()) {
      throw std::invalid_argument("max_pool_groups: group " + std::to_string(g) + " is empty");
    }
    result.argmax[g].assign(rows.cols(), -1);
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      double best = -std::numeric_limits<double>::infinity();
      int best_row = -1;
      for (int r : group) {
        if (r < 0 || r >= rows.rows()) {
          throw std::invalid_argument("max_pool_groups: row index " + std::to_string(r) +
                                      " out of range");
        }
        const double v = rows(r, c);
        if (v > best || (v == best && r < best_row)) {
          best = v;
          best_row = r;
        }
      }
      result.pooled(static_cast<Eigen::Index>(g), c) = best;
      result.argmax[g][static_cast<std::size_t>(c)] = best_row;
    }
  }
  return result;
}

Var max_pool_groups(Tape& t, Var m, std::vector<std::vector<int>> groups) {
  const Matrix& mv = t.value(m);
  MaxPoolResult res = max_pool_groups(mv, groups);
  // Margin = smallest gap between a group's max and runner-up in any column.
  for (const auto& group : groups) {
    if (group.size() < 2) continue;
    for (Eigen::Index c = 0; c < mv.cols(); ++c) {
      double best = -std::numeric_limits<double>::infinity();
      double second = best;
      for (int r : group) {
        const double v = mv(r, c);
        if (v > best) {
          second = best;
          best = v;
        } else if (v > second) {
          second = v;
        }
      }
      t.note_margin(best - second);
    }
  }
  return t.emit(std::move(res.pooled), t.requires_grad(m),
                [m, argmax = std::move(res.argmax),
                 out = Var{static_cast<int>(t.size())}](Tape& tape) {
                  const Matrix& g = tape.grad(out);
                  Matrix acc = Matrix::Zero(tape.value(m).rows(), tape.value(m).cols());
                  for (std::size_t gi = 0; gi < argmax.size(); ++gi) {
                    for (Eigen::Index c = 0; c < g.cols(); ++c) {
                      acc(argmax[gi][static_cast<std::size_t>(c)], c) +=
                          g(static_cast<Eigen::Index>(gi), c);
                    }
                  }
                  tape.accumulate(m, acc);
                });
}

Var merge_rows(Tape& t, Var a, Var b, std::vector<std::pair<bool, int>> pick) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.cols()) throw std::invalid_argument("merge_rows: column counts differ");
  Matrix value(static_cast<Eigen::Index>(pick.size()), av.cols());
  for (std::size_t i = 0; i < pick.size(); ++i) {
    const auto& [from_a, row] = pick[i];
    value.row(static_cast<Eigen::Index>(i)) = from_a ? av.row(row) : bv.row(row);
  }
  return t.emit(std::move(value), t.requires_grad(a) || t.requires_grad(b),
                [a, b, pick = std::move(pick), out = Var{static_cast<int>(t.size())}](Tape& tape) {
                  const Matrix& g = tape.grad(out);
                  Matrix acc_a = Matrix::Zero(tape.value(a).rows(), tape.value(a).cols());
                  Matrix acc_b = Matrix::Zero(tape.value(b).rows(), tape.value(b).cols());
                  for (std::size_t i = 0; i < pick.size(); ++i) {
                    const auto& [from_a, row] = pick[i];
                    (from_a ? acc_a : acc_b).row(row) += g.row(static_cast<Eigen::Index>(i));
                  }
                  tape.accumulate(a, acc_a);
                  tape.accumulate(b, acc_b);
                });
}

Var smooth_l1(Tape& t, Var pred, const Matrix& target, double beta) {
  const Matrix& pv = t.value(pred);
  check_same_shape(pv, target, "smooth_l1");
  const Eigen::Index n = pv.size();
  Matrix value(1, 1);
  if (n == 0) {
    value(0, 0) = 0.0;
    return t.emit(std::move(value), false, {});
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = pv.data()[i] - target.data()[i];
    const double ad = std::abs(d);
    t.note_margin(std::abs(ad - beta));
    total += ad < beta ? 0.5 * d * d / beta : ad - 0.5 * beta;
  }
  value(0, 0) = total / static_cast<double>(n);
  return t.emit(std::move(value), t.requires_grad(pred),
                [pred, target, beta, out = Var{static_cast<int>(t.size())}](Tape& tape) {
                  const double g = tape.grad(out)(0, 0);
                  const Matrix& pv = tape.value(pred);
                  Matrix acc(pv.rows(), pv.cols());
                  const double inv_n = 1.0 / static_cast<double>(pv.size());
                  for (Eigen::Index i = 0; i < pv.size(); ++i) {
                    const double d = pv.data()[i] - target.data()[i];
                    const double slope =
                        std::abs(d) < beta ? d / beta : (d > 0.0 ? 1.0 : -1.0);
                    acc.data()[i] = g * inv_n * slope;
                  }
                  tape.accumulate(pred, acc);
                });
}

Var bce_with_logits(Tape& t, Var logits, const Matrix& labels) {
  const Matrix& zv = t.value(logits);
  check_same_shape(zv, labels, "bce_with_logits");
  const Eigen::Index n = zv.size();
  Matrix value(1, 1);
  if (n == 0) {
    value(0, 0) = 0.0;
    return t.emit(std::move(value), false, {});
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = zv.data()[i];
    const double y = labels.data()[i];
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  value(0, 0) = total / static_cast<double>(n);
  return t.emit(std::move(value), t.requires_grad(logits),
                [logits, labels, out = Var{static_cast<int>(t.size())}](Tape& tape) {
                  const double g = tape.grad(out)(0, 0);
                  const Matrix& zv = tape.value(logits);
                  Matrix acc(zv.rows(), zv.cols());
                  const double inv_n = 1.0 / static_cast<double>(zv.size());
                  for (Eigen::Index i = 0; i < zv.size(); ++i) {
                    const double z = zv.data()[i];
                    const double sigma = 1.0 / (1.0 + std::exp(-z));
                    acc.data()[i] = g * inv_n * (sigma - labels.data()[i]);
                  }
                  tape.accumulate(logits, acc);
                });
}

// ---------------------------------------------------------------------------
// MLP

namespace {

void check_mlp_input(const MlpSpec& spec, const Parameters& params, const Matrix& input) {
  if (!spec.valid()) throw std::invalid_argument("mlp_forward: invalid MlpSpec");
  if (!params.shapes_match(spec)) {
    throw std::invalid_argument("mlp_forward: parameter shapes do not match spec");
  }
  if (input.cols() != spec.input_dim()) {
    throw std::invalid_argument("mlp_forward: input has " + std::to_string(input.cols()) +
                                " columns, spec expects " + std::to_string(spec.input_dim()));
  }
}

}  // namespace

Matrix mlp_forward(const MlpSpec& spec, const Parameters& params, const Matrix& input) {
  check_mlp_input(spec, params, input);
  Matrix x = input;
  for (int i = 0; i < spec.num_layers(); ++i) {
    Matrix y = row_product(x, params.layers[i].weight);
    y.rowwise() += params.layers[i].bias.row(0);
    if (i + 1 < spec.num_layers()) y = y.cwiseMax(0.0);
    x = std::move(y);
  }
  return x;
}

ParamVars register_params(Tape& t, const Parameters& params) {
  ParamVars vars;
  vars.layers.reserve(params.layers.size());
  for (const auto& layer : params.layers) {
    vars.layers.emplace_back(t.leaf(layer.weight), t.leaf(layer.bias));
  }
  return vars;
}

Var mlp_forward(Tape& t, const MlpSpec& spec, const ParamVars& params, Var input) {
  if (!spec.valid()) throw std::invalid_argument("mlp_forward: invalid MlpSpec");
  if (static_cast<int>(params.layers.size()) != spec.num_layers()) {
    throw std::invalid_argument("mlp_forward: parameter count does not match spec");
  }
  if (t.value(input).cols() != spec.input_dim()) {
    throw std::invalid_argument("mlp_forward: input has " +
                                std::to_string(t.value(input).cols()) +
                                " columns, spec expects " + std::to_string(spec.input_dim()));
  }
  Var x = input;
  for (int i = 0; i < spec.num_layers(); ++i) {
    x = add_bias(t, matmul(t, x, params.layers[i].first), params.layers[i].second);
    if (i + 1 < spec.num_layers()) x = relu(t, x);
  }
  return x;
}

Parameters collect_gradients(const Tape& t, const ParamVars& params) {
  Parameters grads;
  grads.layers.reserve(params.layers.size());
  for (const auto& [w, b] : params.layers) {
    grads.layers.push_back(LinearLayer{t.grad(w), t.grad(b)});
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Adam

AdamState::AdamState(const Parameters& shape_like, AdamConfig config)
    : config_(config), m_(Parameters::zeros_like(shape_like)), v_(Parameters::zeros_like(shape_like)) {}

void AdamState::step(Parameters& params, const Parameters& grads) {
  if (params.layers.size() != m_.layers.size() || grads.layers.size() != m_.layers.size()) {
    throw std::invalid_argument("AdamState::step: layer count mismatch");
  }
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  double lr = config_.lr;
  if (config_.warmup_steps > 0) {
    lr *= std::min(1.0, t / static_cast<double>(config_.warmup_steps));
  }
  const double bias1 = 1.0 - std::pow(config_.beta1, t);
  const double bias2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto update = [&](Matrix& p, const Matrix& g, Matrix& m, Matrix& v) {
      m = config_.beta1 * m + (1.0 - config_.beta1) * g;
      v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
      const Matrix m_hat = m / bias1;
      const Matrix v_hat = v / bias2;
      p -= lr * m_hat.cwiseQuotient(v_hat.cwiseSqrt() + Matrix::Constant(v.rows(), v.cols(),
                                                                         config_.eps));
    };
    update(params.layers[i].weight, grads.layers[i].weight, m_.layers[i].weight,
           v_.layers[i].weight);
    update(params.layers[i].bias, grads.layers[i].bias, m_.layers[i].bias, v_.layers[i].bias);
  }
}

// ---------------------------------------------------------------------------
// Finite differences

double finite_difference_check(const std::function<double()>& loss,
                               std::span<Parameters* const> params,
                               std::span<const Parameters* const> analytic, double step) {
  if (params.size() != analytic.size()) {
    throw std::invalid_argument("finite_difference_check: group count mismatch");
  }
  double max_rel_err = 0.0;
  for (std::size_t g = 0; g < params.size(); ++g) {
    Parameters& p = *params[g];
    const Parameters& a = *analytic[g];
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
      auto check_block = [&](Matrix& block, const Matrix& grad_block) {
        for (Eigen::Index i = 0; i < block.size(); ++i) {
          double& x = block.data()[i];
          const double saved = x;
          x = saved + step;
          const double up = loss();
          x = saved - step;
          const double down = loss();
          x = saved;
          const double central = (up - down) / (2.0 * step);
          const double rel =
              std::abs(grad_block.data()[i] - central) / std::max(1.0, std::abs(central));
          max_rel_err = std::max(max_rel_err, rel);
        }
      };
      check_block(p.layers[li].weight, a.layers[li].weight);
      check_block(p.layers[li].bias, a.layers[li].bias);
    }
  }
  return max_rel_err;
}

double finite_difference_check(const std::function<double(const Parameters&)>& loss,
                               const Parameters& params, const Parameters& analytic,
                               double step) {
  Parameters mutable_params = params;
  Parameters* ptr = &mutable_params;
  const Parameters* aptr = &analytic;
  return finite_difference_check([&] { return loss(mutable_params); },
                                 std::span<Parameters* const>(&ptr, 1),
                                 std::span<const Parameters* const>(&aptr, 1), step);
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string params_to_json(const MlpSpec& spec, const Parameters& params) {
  if (!params.shapes_match(spec)) {
    throw std::invalid_argument("params_to_json: parameters do not match spec");
  }
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["dims"] = spec.layer_dims;
  nlohmann::ordered_json weights = nlohmann::ordered_json::array();
  nlohmann::ordered_json biases = nlohmann::ordered_json::array();
  for (const auto& layer : params.layers) {
    weights.push_back(std::vector<double>(layer.weight.data(),
                                          layer.weight.data() + layer.weight.size()));
    biases.push_back(
        std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size()));
  }
  j["weights"] = std::move(weights);
  j["biases"] = std::move(biases);
  return j.dump();
}

std::pair<MlpSpec, Parameters> params_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("params_from_json: ") + e.what());
  }
  if (j.value("format_version", 0) != 1) {
    throw DataError("params_from_json: unsupported format_version");
  }
  MlpSpec spec{j.at("dims").get<std::vector<int>>()};
  if (!spec.valid()) throw DataError("params_from_json: invalid dims");
  const auto weights = j.at("weights");
  const auto biases = j.at("biases");
  if (static_cast<int>(weights.size()) != spec.num_layers() ||
      static_cast<int>(biases.size()) != spec.num_layers()) {
    throw DataError("params_from_json: layer count does not match dims");
  }
  Parameters params;
  params.layers.reserve(spec.num_layers());
  for (int i = 0; i < spec.num_layers(); ++i) {
    const auto w = weights[i].get<std::vector<double>>();
    const auto b = biases[i].get<std::vector<double>>();
    const int rows = spec.layer_dims[i];
    const int cols = spec.layer_dims[i + 1];
    if (static_cast<int>(w.size()) != rows * cols || static_cast<int>(b.size()) != cols) {
      throw DataError("params_from_json: layer " + std::to_string(i) + " has wrong size");
    }
    LinearLayer layer;
    layer.weight = Eigen::Map<const Matrix>(w.data(), rows, cols);
    layer.bias = Eigen::Map<const Matrix>(b.data(), 1, cols);
    params.layers.push_back(std::move(layer));
  }
  return {std::move(spec), std::move(params)};
}

}  // namespace relate3d::nn
