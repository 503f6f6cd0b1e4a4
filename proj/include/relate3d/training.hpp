#pragma once

#include <cstdint>
#include <vector>

#include "relate3d/data_io.hpp"
#include "relate3d/relation.hpp"

namespace relate3d {

// Proposal-to-ground-truth assignment for the toy loss: each proposal takes
// the unclaimed-independent max-BEV-IoU ground truth; positive when the IoU
// clears the threshold. DontCare ground truth never matches.
struct ProposalTargets {
  std::vector<int> matched_gt;     // per proposal, -1 for background
  std::vector<int> positive_rows;  // indices of matched proposals
  nn::Matrix residual_targets;     // |positives| x 7, encode(gt) - encode(prop)
  nn::Matrix labels;               // n x 1
};

ProposalTargets assign_targets(const Frame& frame, double iou_threshold);

// Smooth-L1 on assigned box residuals plus BCE on confidence logits, built
// on the given tape so it works for both training (grad on) and evaluation
// (grad off).
struct LossVars {
  nn::Var total;
  double box_loss = 0.0;
  double confidence_loss = 0.0;
};

LossVars frame_loss(nn::Tape& tape, const ForwardVars& fwd, const HeadVars& head,
                    const ProposalTargets& targets);

inline constexpr double kSmoothL1Beta = 1.0 / 9.0;

struct EvalMetrics {
  double loss = 0.0;
  double heading_mae = 0.0;  // mean |wrapped heading error| over positives
  double center_mae = 0.0;   // mean center distance over positives
  int num_positives = 0;
};

EvalMetrics evaluate_metrics(const RelationModule& module, const RefineHead& head,
                             const std::vector<Frame>& frames);

struct EpochMetrics {
  int epoch = 0;  // 0 = untrained
  double train_loss = 0.0;
  double heading_mae = 0.0;
  double center_mae = 0.0;
};

struct ToyTrainResult {
  RelationModule module;
  RefineHead head;
  std::vector<EpochMetrics> history;  // epochs + 1 entries, entry 0 untrained
};

// Per-frame Adam on the toy loss. Metrics are computed on val_frames when
// non-empty, else on train_frames. Fully determined by (inputs, seed):
// module init uses the "init" stream, epoch shuffles the "order" stream.
ToyTrainResult toy_train(const std::vector<Frame>& train_frames,
                         const std::vector<Frame>& val_frames, RelationConfig config,
                         const AblationFlags& flags, int epochs, std::uint64_t seed,
                         nn::AdamConfig adam = {});

}  // namespace relate3d
