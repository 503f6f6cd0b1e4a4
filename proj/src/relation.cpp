#include "relate3d/relation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "relate3d/errors.hpp"
#include "relate3d/rng.hpp"

namespace relate3d {

Vector7d encode_box(const Box3D& b) {
  Vector7d v;
  v << b.x, b.y, b.z, b.h, b.w, b.l, b.theta;
  return v;
}

Box3D decode_box(const Vector7d& v) {
  return Box3D{v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
}

Vector7d box_difference(const Box3D& b_j, const Box3D& b_i) {
  Vector7d d = encode_box(b_j) - encode_box(b_i);
  d[6] = normalize_angle(d[6]);
  return d;
}

bool ProposalSet::consistent() const {
  const std::size_t n = boxes.size();
  if (class_labels.size() != n || scores.size() != n) return false;
  if (static_cast<std::size_t>(features.rows()) != n) return false;
  for (const Box3D& b : boxes) {
    if (!is_valid_box(b)) return false;
  }
  return true;
}

std::vector<Eigen::Vector3d> proposal_centers(const ProposalSet& p) {
  std::vector<Eigen::Vector3d> centers;
  centers.reserve(p.boxes.size());
  for (const Box3D& b : p.boxes) centers.emplace_back(b.x, b.y, b.z);
  return centers;
}

bool RelationConfig::valid() const {
  if (num_layers < 1 || node_dim < 1 || input_feature_dim < 1 || output_dim < 1) return false;
  if (strategy.kind == GraphStrategy::Kind::knn && strategy.k < 1) return false;
  if (strategy.kind == GraphStrategy::Kind::radius && !(strategy.r > 0.0)) return false;
  for (int d : edge_hidden) {
    if (d < 1) return false;
  }
  for (int d : init_hidden) {
    if (d < 1) return false;
  }
  return true;
}

namespace {

constexpr int kBoxDim = 7;

std::vector<int> with_hidden(int input, const std::vector<int>& hidden, int fallback_hidden,
                             int output) {
  std::vector<int> dims;
  dims.push_back(input);
  if (hidden.empty()) {
    dims.push_back(fallback_hidden);
  } else {
    dims.insert(dims.end(), hidden.begin(), hidden.end());
  }
  dims.push_back(output);
  return dims;
}

}  // namespace

RelationModule::RelationModule(RelationConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  if (!config_.valid()) throw std::invalid_argument("RelationModule: invalid config");
  init_spec_ = nn::MlpSpec{with_hidden(init_input_dim(), config_.init_hidden, config_.node_dim,
                                       config_.node_dim)};
  edge_spec_ = nn::MlpSpec{with_hidden(edge_input_dim(), config_.edge_hidden, config_.node_dim,
                                       config_.node_dim)};
  projection_spec_ = nn::MlpSpec{{concat_dim(), config_.output_dim}};

  const Rng base(seed);
  init_mlp = nn::init_params(init_spec_, base.stream("init_mlp").seed());
  edge_mlps.reserve(config_.num_layers);
  for (int l = 0; l < config_.num_layers; ++l) {
    edge_mlps.push_back(
        nn::init_params(edge_spec_, base.stream("edge_mlp").substream(l).seed()));
  }
  projection = nn::init_params(projection_spec_, base.stream("projection").seed());
}

int RelationModule::init_input_dim() const {
  return config_.input_feature_dim + (config_.ablation.use_init_box ? kBoxDim : 0);
}

int RelationModule::edge_input_dim() const {
  return 2 * config_.node_dim + (config_.ablation.use_box_diff ? kBoxDim : 0);
}

int RelationModule::concat_dim() const {
  return config_.ablation.use_feature_append ? (config_.num_layers + 1) * config_.node_dim
                                             : config_.node_dim;
}

std::vector<nn::Parameters*> RelationModule::parameter_groups() {
  std::vector<nn::Parameters*> groups{&init_mlp};
  for (auto& edge : edge_mlps) groups.push_back(&edge);
  groups.push_back(&projection);
  return groups;
}

std::vector<const nn::Parameters*> RelationModule::parameter_groups() const {
  std::vector<const nn::Parameters*> groups{&init_mlp};
  for (const auto& edge : edge_mlps) groups.push_back(&edge);
  groups.push_back(&projection);
  return groups;
}

RefineHead::RefineHead(const RelationConfig& config, std::uint64_t seed) {
  spec = nn::MlpSpec{{config.output_dim, config.head_hidden, kBoxDim + 1}};
  params = nn::init_params(spec, Rng(seed).stream("head").seed());
  // Zero final layer: the untrained head refines nothing, so training never
  // has to recover from a large random-residual transient.
  params.layers.back().weight.setZero();
}

namespace {

// Box rows fed to the init MLP; centers optionally whitened per frame.
nn::Matrix encoded_boxes(const ProposalSet& proposals, bool whiten) {
  const int n = proposals.size();
  nn::Matrix out(n, kBoxDim);
  for (int i = 0; i < n; ++i) {
    out.row(i) = encode_box(proposals.boxes[i]).transpose();
  }
  if (whiten && n > 0) {
    const Eigen::RowVector3d mean = out.leftCols(3).colwise().mean();
    out.leftCols(3).rowwise() -= mean;
  }
  return out;
}

struct EdgeLayout {
  std::vector<int> senders;
  std::vector<int> receivers;
  std::vector<std::vector<int>> groups;          // edge-row ranges per connected node
  std::vector<std::pair<bool, int>> merge_pick;  // per node: (pooled?, row)
  nn::Matrix box_diffs;                          // num_edges x 7
};

EdgeLayout edge_layout(const std::vector<Box3D>& boxes, const RelationGraph& graph) {
  EdgeLayout layout;
  const int n = graph.num_nodes;
  layout.merge_pick.resize(n);
  int edge_count = 0;
  for (int i = 0; i < n; ++i) edge_count += static_cast<int>(graph.neighbors[i].size());
  layout.senders.reserve(edge_count);
  layout.receivers.reserve(edge_count);
  layout.box_diffs.resize(edge_count, kBoxDim);
  int row = 0;
  int pooled_rows = 0;
  for (int i = 0; i < n; ++i) {
    if (graph.neighbors[i].empty()) {
      layout.merge_pick[i] = {false, i};  // isolated node: identity passthrough
      continue;
    }
    std::vector<int> group;
    group.reserve(graph.neighbors[i].size());
    for (int j : graph.neighbors[i]) {
      layout.senders.push_back(j);
      layout.receivers.push_back(i);
      layout.box_diffs.row(row) = box_difference(boxes[j], boxes[i]).transpose();
      group.push_back(row);
      ++row;
    }
    layout.groups.push_back(std::move(group));
    layout.merge_pick[i] = {true, pooled_rows++};
  }
  return layout;
}

void check_forward_inputs(const RelationModule& m, const ProposalSet& proposals,
                          const RelationGraph& graph) {
  if (!proposals.consistent()) {
    throw std::invalid_argument("forward: inconsistent ProposalSet");
  }
  if (proposals.size() > 0 && proposals.feature_dim() != m.config().input_feature_dim) {
    throw std::invalid_argument("forward: proposal features have " +
                                std::to_string(proposals.feature_dim()) +
                                " columns, config expects " +
                                std::to_string(m.config().input_feature_dim));
  }
  if (graph.num_nodes != proposals.size()) {
    throw std::invalid_argument("forward: graph has " + std::to_string(graph.num_nodes) +
                                " nodes for " + std::to_string(proposals.size()) + " proposals");
  }
}

}  // namespace

nn::Matrix init_nodes(const RelationModule& m, const ProposalSet& proposals) {
  const int n = proposals.size();
  nn::Matrix input(n, m.init_input_dim());
  if (n > 0) {
    input.leftCols(m.config().input_feature_dim) = proposals.features;
    if (m.config().ablation.use_init_box) {
      input.rightCols(kBoxDim) = encoded_boxes(proposals, m.config().whiten_centers);
    }
  }
  return nn::mlp_forward(m.init_spec(), m.init_mlp, input);
}

nn::Matrix layer_forward(const RelationModule& m, int layer, const nn::Matrix& states,
                         const std::vector<Box3D>& boxes, const RelationGraph& graph) {
  const EdgeLayout layout = edge_layout(boxes, graph);
  const int num_edges = static_cast<int>(layout.senders.size());
  nn::Matrix edge_in(num_edges, m.edge_input_dim());
  const int d = m.config().node_dim;
  for (int e = 0; e < num_edges; ++e) {
    edge_in.row(e).segment(0, d) = states.row(layout.senders[e]) - states.row(layout.receivers[e]);
    int offset = d;
    if (m.config().ablation.use_box_diff) {
      edge_in.row(e).segment(offset, kBoxDim) = layout.box_diffs.row(e);
      offset += kBoxDim;
    }
    edge_in.row(e).segment(offset, d) = states.row(layout.receivers[e]);
  }
  const nn::Matrix edge_out = nn::mlp_forward(m.edge_spec(), m.edge_mlps[layer], edge_in);
  const nn::MaxPoolResult pooled = nn::max_pool_groups(edge_out, layout.groups);
  nn::Matrix next(states.rows(), states.cols());
  for (int i = 0; i < graph.num_nodes; ++i) {
    const auto& [from_pool, row] = layout.merge_pick[i];
    next.row(i) = from_pool ? pooled.pooled.row(row) : states.row(row);
  }
  return next;
}

ForwardResult forward(const RelationModule& m, const ProposalSet& proposals,
                      const RelationGraph& graph) {
  check_forward_inputs(m, proposals, graph);
  ForwardResult result;
  result.states.layers.reserve(m.config().num_layers + 1);
  result.states.layers.push_back(init_nodes(m, proposals));
  for (int l = 0; l < m.config().num_layers; ++l) {
    result.states.layers.push_back(
        layer_forward(m, l, result.states.layers.back(), proposals.boxes, graph));
  }
  nn::Matrix concat;
  if (m.config().ablation.use_feature_append) {
    concat.resize(proposals.size(), m.concat_dim());
    int offset = 0;
    for (const nn::Matrix& v : result.states.layers) {
      concat.middleCols(offset, m.config().node_dim) = v;
      offset += m.config().node_dim;
    }
  } else {
    concat = result.states.layers.back();
  }
  result.refined = nn::mlp_forward(m.projection_spec(), m.projection, concat);
  return result;
}

ForwardVars forward(nn::Tape& tape, const RelationModule& m, const ProposalSet& proposals,
                    const RelationGraph& graph) {
  check_forward_inputs(m, proposals, graph);
  const int n = proposals.size();
  ForwardVars vars;
  vars.init_vars = nn::register_params(tape, m.init_mlp);
  vars.edge_vars.reserve(m.config().num_layers);
  for (const auto& edge : m.edge_mlps) vars.edge_vars.push_back(nn::register_params(tape, edge));
  vars.projection_vars = nn::register_params(tape, m.projection);

  nn::Matrix features = proposals.features;
  if (n == 0) features.resize(0, m.config().input_feature_dim);
  nn::Var init_in = tape.constant(std::move(features));
  if (m.config().ablation.use_init_box) {
    nn::Var box_rows = tape.constant(encoded_boxes(proposals, m.config().whiten_centers));
    const nn::Var parts[] = {init_in, box_rows};
    init_in = nn::hcat(tape, parts);
  }
  nn::Var v = nn::mlp_forward(tape, m.init_spec(), vars.init_vars, init_in);
  vars.states.push_back(v);

  const EdgeLayout layout = edge_layout(proposals.boxes, graph);
  const nn::Var box_diffs = tape.constant(layout.box_diffs);
  for (int l = 0; l < m.config().num_layers; ++l) {
    nn::Var v_j = nn::gather_rows(tape, v, layout.senders);
    nn::Var v_i = nn::gather_rows(tape, v, layout.receivers);
    nn::Var diff = nn::sub(tape, v_j, v_i);
    std::vector<nn::Var> parts{diff};
    if (m.config().ablation.use_box_diff) parts.push_back(box_diffs);
    parts.push_back(v_i);
    nn::Var edge_in = nn::hcat(tape, parts);
    nn::Var edge_out = nn::mlp_forward(tape, m.edge_spec(), vars.edge_vars[l], edge_in);
    nn::Var pooled = nn::max_pool_groups(tape, edge_out, layout.groups);
    v = nn::merge_rows(tape, pooled, v, layout.merge_pick);
    vars.states.push_back(v);
  }

  nn::Var concat = v;
  if (m.config().ablation.use_feature_append) {
    concat = nn::hcat(tape, vars.states);
  }
  vars.refined = nn::mlp_forward(tape, m.projection_spec(), vars.projection_vars, concat);
  return vars;
}

HeadOutput refine_head_forward(const RefineHead& head, const nn::Matrix& refined) {
  const nn::Matrix out = nn::mlp_forward(head.spec, head.params, refined);
  HeadOutput result;
  result.residuals = out.leftCols(kBoxDim);
  result.logits = out.rightCols(1);
  return result;
}

HeadVars refine_head_forward(nn::Tape& tape, const RefineHead& head, nn::Var refined) {
  HeadVars vars;
  vars.head_vars = nn::register_params(tape, head.params);
  nn::Var out = nn::mlp_forward(tape, head.spec, vars.head_vars, refined);
  vars.residuals = nn::slice_cols(tape, out, 0, kBoxDim);
  vars.logits = nn::slice_cols(tape, out, kBoxDim, 1);
  return vars;
}

Box3D apply_residual(const Box3D& proposal, const Eigen::Matrix<double, 1, 7>& residual) {
  constexpr double kMinSize = 1e-6;
  return Box3D{proposal.x + residual(0, 0),
               proposal.y + residual(0, 1),
               proposal.z + residual(0, 2),
               std::max(kMinSize, proposal.h + residual(0, 3)),
               std::max(kMinSize, proposal.w + residual(0, 4)),
               std::max(kMinSize, proposal.l + residual(0, 5)),
               normalize_angle(proposal.theta + residual(0, 6))};
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

nlohmann::ordered_json strategy_to_json(const GraphStrategy& s) {
  nlohmann::ordered_json j;
  j["kind"] = s.kind == GraphStrategy::Kind::knn ? "knn" : "radius";
  j["k"] = s.k;
  j["r"] = s.r;
  return j;
}

GraphStrategy strategy_from_json(const nlohmann::json& j) {
  GraphStrategy s;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "knn") {
    s.kind = GraphStrategy::Kind::knn;
  } else if (kind == "radius") {
    s.kind = GraphStrategy::Kind::radius;
  } else {
    throw DataError("checkpoint: unknown graph strategy '" + kind + "'");
  }
  s.k = j.at("k").get<int>();
  s.r = j.at("r").get<double>();
  return s;
}

}  // namespace

std::string module_to_json(const RelationModule& m, const RefineHead& head) {
  const RelationConfig& c = m.config();
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  nlohmann::ordered_json cfg;
  cfg["strategy"] = strategy_to_json(c.strategy);
  cfg["num_layers"] = c.num_layers;
  cfg["node_dim"] = c.node_dim;
  cfg["input_feature_dim"] = c.input_feature_dim;
  cfg["output_dim"] = c.output_dim;
  cfg["edge_hidden"] = c.edge_hidden;
  cfg["init_hidden"] = c.init_hidden;
  cfg["head_hidden"] = c.head_hidden;
  cfg["whiten_centers"] = c.whiten_centers;
  cfg["ablation"] = {{"init_box", c.ablation.use_init_box},
                     {"box_diff", c.ablation.use_box_diff},
                     {"feature_append", c.ablation.use_feature_append}};
  cfg["assignment_iou_threshold"] = c.assignment_iou_threshold;
  j["config"] = std::move(cfg);
  j["init_mlp"] = nlohmann::ordered_json::parse(nn::params_to_json(m.init_spec(), m.init_mlp));
  nlohmann::ordered_json edges = nlohmann::ordered_json::array();
  for (const auto& edge : m.edge_mlps) {
    edges.push_back(nlohmann::ordered_json::parse(nn::params_to_json(m.edge_spec(), edge)));
  }
  j["edge_mlps"] = std::move(edges);
  j["projection"] =
      nlohmann::ordered_json::parse(nn::params_to_json(m.projection_spec(), m.projection));
  j["head"] = nlohmann::ordered_json::parse(nn::params_to_json(head.spec, head.params));
  return j.dump();
}

std::pair<RelationModule, RefineHead> module_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("module_from_json: ") + e.what());
  }
  if (j.value("format_version", 0) != 1) {
    throw DataError("module_from_json: unsupported format_version");
  }
  const auto& cfg = j.at("config");
  RelationConfig c;
  c.strategy = strategy_from_json(cfg.at("strategy"));
  c.num_layers = cfg.at("num_layers").get<int>();
  c.node_dim = cfg.at("node_dim").get<int>();
  c.input_feature_dim = cfg.at("input_feature_dim").get<int>();
  c.output_dim = cfg.at("output_dim").get<int>();
  c.edge_hidden = cfg.at("edge_hidden").get<std::vector<int>>();
  c.init_hidden = cfg.at("init_hidden").get<std::vector<int>>();
  c.head_hidden = cfg.at("head_hidden").get<int>();
  c.whiten_centers = cfg.at("whiten_centers").get<bool>();
  c.ablation.use_init_box = cfg.at("ablation").at("init_box").get<bool>();
  c.ablation.use_box_diff = cfg.at("ablation").at("box_diff").get<bool>();
  c.ablation.use_feature_append = cfg.at("ablation").at("feature_append").get<bool>();
  c.assignment_iou_threshold = cfg.at("assignment_iou_threshold").get<double>();

  RelationModule module(c, 0);
  auto load_into = [](const nlohmann::json& node, const nn::MlpSpec& expect,
                      nn::Parameters& dst, const char* what) {
    auto [spec, params] = nn::params_from_json(node.dump());
    if (spec.layer_dims != expect.layer_dims) {
      throw DataError(std::string("module_from_json: ") + what + " dims do not match config");
    }
    dst = std::move(params);
  };
  load_into(j.at("init_mlp"), module.init_spec(), module.init_mlp, "init_mlp");
  const auto& edges = j.at("edge_mlps");
  if (static_cast<int>(edges.size()) != c.num_layers) {
    throw DataError("module_from_json: edge_mlps count does not match num_layers");
  }
  for (int l = 0; l < c.num_layers; ++l) {
    load_into(edges[l], module.edge_spec(), module.edge_mlps[l], "edge_mlp");
  }
  load_into(j.at("projection"), module.projection_spec(), module.projection, "projection");

  RefineHead head(c, 0);
  load_into(j.at("head"), head.spec, head.params, "head");
  return {std::move(module), std::move(head)};
}

}  // namespace relate3d
