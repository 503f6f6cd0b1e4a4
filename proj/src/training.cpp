#include "relate3d/training.hpp"

#include <cmath>
#include <numeric>

#include "relate3d/rng.hpp"

namespace relate3d {

ProposalTargets assign_targets(const Frame& frame, double iou_threshold) {
  const int n = frame.proposals.size();
  ProposalTargets targets;
  targets.matched_gt.assign(n, -1);
  targets.labels = nn::Matrix::Zero(n, 1);
  for (int i = 0; i < n; ++i) {
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < frame.ground_truth.size(); ++g) {
      if (frame.ground_truth[g].is_ignored()) continue;
      const double iou = iou_bev(frame.proposals.boxes[i], frame.ground_truth[g].box);
      if (iou > best) {
        best = iou;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best >= iou_threshold) {
      targets.matched_gt[i] = best_gt;
      targets.positive_rows.push_back(i);
      targets.labels(i, 0) = 1.0;
    }
  }
  targets.residual_targets.resize(static_cast<Eigen::Index>(targets.positive_rows.size()), 7);
  for (std::size_t p = 0; p < targets.positive_rows.size(); ++p) {
    const int i = targets.positive_rows[p];
    targets.residual_targets.row(static_cast<Eigen::Index>(p)) =
        box_difference(frame.ground_truth[targets.matched_gt[i]].box,
                       frame.proposals.boxes[i])
            .transpose();
  }
  return targets;
}

LossVars frame_loss(nn::Tape& tape, const ForwardVars& fwd, const HeadVars& head,
                    const ProposalTargets& targets) {
  (void)fwd;
  LossVars out;
  nn::Var positives = nn::gather_rows(tape, head.residuals, targets.positive_rows);
  nn::Var box = nn::smooth_l1(tape, positives, targets.residual_targets, kSmoothL1Beta);
  nn::Var conf = nn::bce_with_logits(tape, head.logits, targets.labels);
  out.total = nn::add(tape, box, conf);
  out.box_loss = tape.value(box)(0, 0);
  out.confidence_loss = tape.value(conf)(0, 0);
  return out;
}

namespace {

struct FrameContext {
  RelationGraph graph;
  ProposalTargets targets;
};

FrameContext make_context(const Frame& frame, const RelationConfig& config) {
  FrameContext ctx;
  ctx.graph = build_graph(proposal_centers(frame.proposals), config.strategy);
  ctx.targets = assign_targets(frame, config.assignment_iou_threshold);
  return ctx;
}

double frame_loss_value(const RelationModule& module, const RefineHead& head,
                        const Frame& frame, const FrameContext& ctx) {
  nn::Tape tape(/*grad_enabled=*/false);
  ForwardVars fwd = forward(tape, module, frame.proposals, ctx.graph);
  HeadVars head_vars = refine_head_forward(tape, head, fwd.refined);
  return tape.value(frame_loss(tape, fwd, head_vars, ctx.targets).total)(0, 0);
}

}  // namespace

EvalMetrics evaluate_metrics(const RelationModule& module, const RefineHead& head,
                             const std::vector<Frame>& frames) {
  EvalMetrics metrics;
  double heading_sum = 0.0;
  double center_sum = 0.0;
  double loss_sum = 0.0;
  int loss_frames = 0;
  for (const Frame& frame : frames) {
    if (frame.proposals.size() == 0) continue;
    const FrameContext ctx = make_context(frame, module.config());
    loss_sum += frame_loss_value(module, head, frame, ctx);
    ++loss_frames;
    const ForwardResult fwd = forward(module, frame.proposals, ctx.graph);
    const HeadOutput out = refine_head_forward(head, fwd.refined);
    for (int i : ctx.targets.positive_rows) {
      const Box3D refined = apply_residual(frame.proposals.boxes[i], out.residuals.row(i));
      const Box3D& gt = frame.ground_truth[ctx.targets.matched_gt[i]].box;
      heading_sum += std::abs(normalize_angle(refined.theta - gt.theta));
      center_sum += std::sqrt((refined.x - gt.x) * (refined.x - gt.x) +
                              (refined.y - gt.y) * (refined.y - gt.y) +
                              (refined.z - gt.z) * (refined.z - gt.z));
      ++metrics.num_positives;
    }
  }
  metrics.loss = loss_frames > 0 ? loss_sum / loss_frames : 0.0;
  if (metrics.num_positives > 0) {
    metrics.heading_mae = heading_sum / metrics.num_positives;
    metrics.center_mae = center_sum / metrics.num_positives;
  }
  return metrics;
}

ToyTrainResult toy_train(const std::vector<Frame>& train_frames,
                         const std::vector<Frame>& val_frames, RelationConfig config,
                         const AblationFlags& flags, int epochs, std::uint64_t seed,
                         nn::AdamConfig adam) {
  config.ablation = flags;
  const std::uint64_t init_seed = Rng(seed).stream("init").seed();
  ToyTrainResult result{RelationModule(config, init_seed), RefineHead(config, init_seed), {}};

  std::vector<FrameContext> contexts;
  contexts.reserve(train_frames.size());
  for (const Frame& frame : train_frames) contexts.push_back(make_context(frame, config));

  std::vector<nn::Parameters*> groups = result.module.parameter_groups();
  groups.push_back(&result.head.params);
  std::vector<nn::AdamState> opt;
  opt.reserve(groups.size());
  for (const nn::Parameters* g : groups) opt.emplace_back(*g, adam);

  const std::vector<Frame>& metric_frames = val_frames.empty() ? train_frames : val_frames;
  auto record = [&](int epoch, double train_loss) {
    const EvalMetrics m = evaluate_metrics(result.module, result.head, metric_frames);
    result.history.push_back(EpochMetrics{epoch, train_loss, m.heading_mae, m.center_mae});
  };

  record(0, evaluate_metrics(result.module, result.head, train_frames).loss);

  const Rng order_base = Rng(seed).stream("order");
  std::vector<int> order(train_frames.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    Rng order_rng = order_base.substream(static_cast<std::uint64_t>(epoch));
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    int steps = 0;
    for (int idx : order) {
      const Frame& frame = train_frames[idx];
      if (frame.proposals.size() == 0) continue;
      nn::Tape tape;
      ForwardVars fwd = forward(tape, result.module, frame.proposals, contexts[idx].graph);
      HeadVars head_vars = refine_head_forward(tape, result.head, fwd.refined);
      LossVars loss = frame_loss(tape, fwd, head_vars, contexts[idx].targets);
      tape.backward(loss.total);
      loss_sum += tape.value(loss.total)(0, 0);
      ++steps;

      std::vector<nn::Parameters> grads;
      grads.reserve(groups.size());
      grads.push_back(nn::collect_gradients(tape, fwd.init_vars));
      for (const auto& edge : fwd.edge_vars) grads.push_back(nn::collect_gradients(tape, edge));
      grads.push_back(nn::collect_gradients(tape, fwd.projection_vars));
      grads.push_back(nn::collect_gradients(tape, head_vars.head_vars));
      for (std::size_t g = 0; g < groups.size(); ++g) {
        opt[g].step(*groups[g], grads[g]);
      }
    }
    record(epoch, steps > 0 ? loss_sum / steps : 0.0);
  }
  return result;
}

}  // namespace relate3d
