#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace relate3d::nn {

// All numerics are 64-bit. Row-major so serialized flat arrays read in row
// order.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Row-by-row product kernel. Each output row is an independent vector-matrix
// product, which makes the result bitwise equivariant under row permutations
// of x (Eigen's blocked GEMM is not).
Matrix row_product(const Matrix& x, const Matrix& w);

// MLP shape: layer_dims = {input, hidden..., output}. ReLU after every layer
// except the last.
struct MlpSpec {
  std::vector<int> layer_dims;

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  int num_layers() const { return static_cast<int>(layer_dims.size()) - 1; }
  bool valid() const;
};

struct LinearLayer {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

// Weights and biases for one MLP; also reused as a same-shaped gradient
// container.
struct Parameters {
  std::vector<LinearLayer> layers;

  std::size_t scalar_count() const;
  bool shapes_match(const MlpSpec& spec) const;
  static Parameters zeros_like(const Parameters& other);

  // Visit every scalar in a fixed order (layer, weights row-major, then bias).
  template <class Fn>
  void for_each_scalar(Fn&& fn) {
    for (auto& layer : layers) {
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) fn(layer.weight.data()[i]);
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) fn(layer.bias.data()[i]);
    }
  }
  template <class Fn>
  void for_each_scalar(Fn&& fn) const {
    for (const auto& layer : layers) {
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) fn(layer.weight.data()[i]);
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) fn(layer.bias.data()[i]);
    }
  }
};

// Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases, fully
// determined by seed.
Parameters init_params(const MlpSpec& spec, std::uint64_t seed);

// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Records one forward pass as a sequence of matrix-level primitives and
// replays it backward for reverse-mode gradients. A Tape belongs to one
// logical thread.
//
// Besides values, the tape tracks the distance of the pass to the nearest
// derivative kink (ReLU zero crossing, max-pool tie, smooth-L1 elbow) so
// finite-difference harnesses can re-sample away from kinks.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix value) { return emit(std::move(value), false, {}); }
  Var leaf(Matrix value) { return emit(std::move(value), grad_enabled_, {}); }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const Matrix& grad(Var v) const;   // zeros until backward() has run
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Reverse accumulation from a 1x1 output (seed 1), or from an explicit
  // output gradient of matching shape.
  void backward(Var output);
  void backward(Var output, const Matrix& output_grad);

  double kink_margin() const { return kink_margin_; }

  std::size_t size() const { return nodes_.size(); }

  // --- implementation hooks used by the op free functions ---
  Var emit(Matrix value, bool requires_grad, std::function<void(Tape&)> backprop);
  void accumulate(Var v, const Matrix& g);
  void note_margin(double m) { kink_margin_ = std::min(kink_margin_, m); }

 private:
  struct NodeRec {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Tape&)> backprop;
  };

  std::vector<NodeRec> nodes_;
  bool grad_enabled_ = true;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

// ---- primitive ops ----
Var matmul(Tape& t, Var a, Var b);
Var add_bias(Tape& t, Var m, Var bias_row);  // broadcast 1 x c over rows
Var add(Tape& t, Var a, Var b);              // same shape; 1x1 + 1x1 for losses
Var sub(Tape& t, Var a, Var b);
Var relu(Tape& t, Var m);
Var scale(Tape& t, Var m, double s);
Var hcat(Tape& t, std::span<const Var> parts);
Var gather_rows(Tape& t, Var m, std::vector<int> rows);
Var slice_cols(Tape& t, Var m, int begin, int count);
Var sum_all(Tape& t, Var m);  // 1x1

// One output row per group, columnwise max over the group's rows. Gradient
// flows to the single argmax row; exact ties resolve to the lowest row index.
// Empty groups are an error.
Var max_pool_groups(Tape& t, Var m, std::vector<std::vector<int>> groups);

// Output row i copies a.row(pick[i].second) when pick[i].first, else
// b.row(pick[i].second).
Var merge_rows(Tape& t, Var a, Var b, std::vector<std::pair<bool, int>> pick);

// Mean over elements of smooth-L1(pred - target). 1x1 output; 0 for empty.
Var smooth_l1(Tape& t, Var pred, const Matrix& target, double beta);

// Mean binary cross-entropy with logits, numerically stable. 1x1 output.
Var bce_with_logits(Tape& t, Var logits, const Matrix& labels);

// ---- tape-free kernels shared with the recorded path ----
struct MaxPoolResult {
  Matrix pooled;
  std::vector<std::vector<int>> argmax;  // [group][col] -> input row
};
MaxPoolResult max_pool_groups(const Matrix& rows, const std::vector<std::vector<int>>& groups);

// Plain forward pass, no recording. Bitwise-identical to the taped path.
Matrix mlp_forward(const MlpSpec& spec, const Parameters& params, const Matrix& input);

// ---- taped MLP ----
struct ParamVars {
  std::vector<std::pair<Var, Var>> layers;  // (weight, bias)
};
ParamVars register_params(Tape& t, const Parameters& params);
Var mlp_forward(Tape& t, const MlpSpec& spec, const ParamVars& params, Var input);
Parameters collect_gradients(const Tape& t, const ParamVars& params);

// ---- optimizer ----
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_steps = 0;  // linear warmup of lr when > 0
};

class AdamState {
 public:
  AdamState(const Parameters& shape_like, AdamConfig config);

  void step(Parameters& params, const Parameters& grads);
  std::int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  Parameters m_;
  Parameters v_;
  std::int64_t step_count_ = 0;
};

// Max over parameters of |analytic - central difference| / max(1, |central|).
// `loss` is evaluated at the (temporarily perturbed) current parameter
// values; `params`/`analytic` must be index-aligned.
double finite_difference_check(const std::function<double()>& loss,
                               std::span<Parameters* const> params,
                               std::span<const Parameters* const> analytic,
                               double step = 1e-5);

double finite_difference_check(const std::function<double(const Parameters&)>& loss,
                               const Parameters& params, const Parameters& analytic,
                               double step = 1e-5);

// ---- checkpoint format ----
// {"format_version": 1, "dims": [...], "weights": [[...]], "biases": [[...]]}
std::string params_to_json(const MlpSpec& spec, const Parameters& params);
std::pair<MlpSpec, Parameters> params_from_json(const std::string& text);

}  // namespace relate3d::nn
