#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "relate3d/autodiff.hpp"
#include "relate3d/geometry.hpp"
#include "relate3d/spatial_graph.hpp"

namespace relate3d {

using Vector7d = Eigen::Matrix<double, 7, 1>;

// (x, y, z, h, w, l, theta) in that fixed order.
Vector7d encode_box(const Box3D& b);
Box3D decode_box(const Vector7d& v);

// Componentwise encode(b_j) - encode(b_i) with the heading component wrapped
// to (-pi, pi].
Vector7d box_difference(const Box3D& b_j, const Box3D& b_i);

// Per-frame proposals: boxes b_i with d-dimensional features f_i, plus the
// first-stage class labels and confidences.
struct ProposalSet {
  std::vector<Box3D> boxes;
  nn::Matrix features;  // n x d
  std::vector<std::string> class_labels;
  std::vector<double> scores;

  int size() const { return static_cast<int>(boxes.size()); }
  int feature_dim() const { return static_cast<int>(features.cols()); }
  bool consistent() const;
};

std::vector<Eigen::Vector3d> proposal_centers(const ProposalSet& p);

// Which inputs the module uses; mirrors the ablation axes.
//   use_init_box      — feed b_i into the node-init MLP
//   use_box_diff      — feed b_j - b_i into the edge MLP
//   use_feature_append— concatenate all layer states (else only the last)
struct AblationFlags {
  bool use_init_box = true;
  bool use_box_diff = true;
  bool use_feature_append = true;
};

struct RelationConfig {
  GraphStrategy strategy;        // knn k=16 by default
  int num_layers = 4;            // L
  int node_dim = 256;            // d'
  int input_feature_dim = 32;    // d; synthetic desk-scale default
  int output_dim = 256;
  std::vector<int> edge_hidden;  // empty -> {node_dim}
  std::vector<int> init_hidden;  // empty -> {node_dim}
  int head_hidden = 64;
  bool whiten_centers = false;   // subtract the frame's mean center from init-box inputs
  AblationFlags ablation;
  double assignment_iou_threshold = 0.25;  // BEV IoU for positive/negative labels

  bool valid() const;
};

// Node features per layer, V^0 .. V^L, each n x node_dim.
struct NodeStates {
  std::vector<nn::Matrix> layers;
};

// GNN over the relation graph: node init from (f_i [, b_i]), L edge-MLP +
// max-pool layers, cross-layer concatenation, and a linear output projection.
// Edge MLPs are not shared across layers.
class RelationModule {
 public:
  RelationModule(RelationConfig config, std::uint64_t seed);

  const RelationConfig& config() const { return config_; }

  int init_input_dim() const;
  int edge_input_dim() const;
  int concat_dim() const;

  const nn::MlpSpec& init_spec() const { return init_spec_; }
  const nn::MlpSpec& edge_spec() const { return edge_spec_; }
  const nn::MlpSpec& projection_spec() const { return projection_spec_; }

  nn::Parameters init_mlp;
  std::vector<nn::Parameters> edge_mlps;  // one per layer
  nn::Parameters projection;

  std::vector<nn::Parameters*> parameter_groups();
  std::vector<const nn::Parameters*> parameter_groups() const;

 private:
  RelationConfig config_;
  nn::MlpSpec init_spec_;
  nn::MlpSpec edge_spec_;
  nn::MlpSpec projection_spec_;
};

// Maps refined features to a 7-dim box residual plus a confidence logit.
struct RefineHead {
  nn::MlpSpec spec;
  nn::Parameters params;

  RefineHead() = default;
  RefineHead(const RelationConfig& config, std::uint64_t seed);
};

// V^0 = init_mlp(f_i [, b_i]) rowwise. n may be 0.
nn::Matrix init_nodes(const RelationModule& m, const ProposalSet& proposals);

// One message-passing layer: for each node with neighbors,
//   v' = max_{j in N(i)} edge_mlp(v_j - v_i [, b_j - b_i], v_i);
// isolated nodes pass through unchanged.
nn::Matrix layer_forward(const RelationModule& m, int layer, const nn::Matrix& states,
                         const std::vector<Box3D>& boxes, const RelationGraph& graph);

struct ForwardResult {
  nn::Matrix refined;  // n x output_dim
  NodeStates states;   // L+1 matrices
};

ForwardResult forward(const RelationModule& m, const ProposalSet& proposals,
                      const RelationGraph& graph);

// Taped forward for training; leaves registered per call.
struct ForwardVars {
  nn::Var refined;
  std::vector<nn::Var> states;
  nn::ParamVars init_vars;
  std::vector<nn::ParamVars> edge_vars;
  nn::ParamVars projection_vars;
};

ForwardVars forward(nn::Tape& tape, const RelationModule& m, const ProposalSet& proposals,
                    const RelationGraph& graph);

struct HeadOutput {
  nn::Matrix residuals;  // n x 7
  nn::Matrix logits;     // n x 1
};

HeadOutput refine_head_forward(const RefineHead& head, const nn::Matrix& refined);

struct HeadVars {
  nn::Var residuals;
  nn::Var logits;
  nn::ParamVars head_vars;
};

HeadVars refine_head_forward(nn::Tape& tape, const RefineHead& head, nn::Var refined);

// proposal box + residual, heading renormalized; sizes floored at a tiny
// positive value.
Box3D apply_residual(const Box3D& proposal, const Eigen::Matrix<double, 1, 7>& residual);

// ---- checkpoint ----
std::string module_to_json(const RelationModule& m, const RefineHead& head);
std::pair<RelationModule, RefineHead> module_from_json(const std::string& text);

}  // namespace relate3d
