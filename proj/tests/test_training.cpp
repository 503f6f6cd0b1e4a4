#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "relate3d/rng.hpp"
#include "relate3d/training.hpp"
#include "test_util.hpp"

using namespace relate3d;

namespace {

std::vector<Frame> make_frames(int count, int objects, std::uint64_t seed, int distractors = 2,
                               int feature_dim = 6) {
  std::vector<Frame> frames;
  SceneSpec spec;
  spec.num_objects = objects;
  spec.num_distractors = distractors;
  spec.feature_dim = feature_dim;
  spec.seed = seed;
  spec.center_noise_sd = 0.3;
  spec.heading_noise_sd = 0.2;
  for (int f = 0; f < count; ++f) {
    spec.frame_index = static_cast<std::uint64_t>(f);
    frames.push_back(generate_scene(spec));
  }
  return frames;
}

RelationConfig tiny_config() {
  RelationConfig config;
  config.strategy = GraphStrategy::make_knn(4);
  config.num_layers = 2;
  config.node_dim = 8;
  config.input_feature_dim = 6;
  config.output_dim = 8;
  config.head_hidden = 8;
  config.whiten_centers = true;
  return config;
}

}  // namespace

TEST_CASE("assign_targets matches noisy proposals to their source boxes") {
  SceneSpec spec;
  spec.num_objects = 8;
  spec.num_distractors = 3;
  spec.center_noise_sd = 0.15;
  spec.heading_noise_sd = 0.05;
  spec.seed = 5;
  const Frame frame = generate_scene(spec);
  const ProposalTargets targets = assign_targets(frame, 0.25);

  // Every ground-truth-derived proposal keeps its own object.
  for (int i = 0; i < 8; ++i) CHECK(targets.matched_gt[static_cast<std::size_t>(i)] == i);
  CHECK(targets.labels.topRows(8).sum() == 8.0);
  // Distractors scattered over a ~50 m scene almost never overlap a car.
  CHECK(targets.labels.bottomRows(3).sum() <= 1.0);
  CHECK(targets.residual_targets.rows() == static_cast<Eigen::Index>(targets.positive_rows.size()));
}

TEST_CASE("assign_targets: zero-noise proposals hit IoU 1 and zero residuals") {
  SceneSpec spec;
  spec.num_objects = 5;
  spec.center_noise_sd = 0.0;
  spec.heading_noise_sd = 0.0;
  spec.seed = 11;
  const Frame frame = generate_scene(spec);
  const ProposalTargets targets = assign_targets(frame, 0.99);
  CHECK(targets.positive_rows.size() == 5);
  CHECK(targets.residual_targets.isZero(0.0));
}

TEST_CASE("toy_train with zero epochs leaves parameters at init") {
  const std::vector<Frame> frames = make_frames(4, 8, 21);
  const RelationConfig config = tiny_config();
  const AblationFlags flags;
  const ToyTrainResult run = toy_train(frames, {}, config, flags, 0, 77);
  REQUIRE(run.history.size() == 1);
  CHECK(run.history[0].epoch == 0);

  // Same init seed, no training: parameters equal a freshly seeded module.
  const std::uint64_t init_seed = Rng(77).stream("init").seed();
  RelationConfig with_flags = config;
  with_flags.ablation = flags;
  const RelationModule fresh(with_flags, init_seed);
  CHECK(bitwise_equal(run.module.init_mlp, fresh.init_mlp));
  CHECK(bitwise_equal(run.module.projection, fresh.projection));
}

TEST_CASE("toy_train is deterministic under a fixed seed") {
  const std::vector<Frame> frames = make_frames(5, 8, 31);
  const RelationConfig config = tiny_config();
  const ToyTrainResult a = toy_train(frames, {}, config, {}, 3, 123);
  const ToyTrainResult b = toy_train(frames, {}, config, {}, 3, 123);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].heading_mae == b.history[i].heading_mae);
    CHECK(a.history[i].center_mae == b.history[i].center_mae);
  }
  CHECK(bitwise_equal(a.module.init_mlp, b.module.init_mlp));
  CHECK(bitwise_equal(a.head.params, b.head.params));

  const ToyTrainResult c = toy_train(frames, {}, config, {}, 3, 124);
  CHECK(a.history.back().train_loss != c.history.back().train_loss);
}

TEST_CASE("toy_train reduces the loss on learnable scenes") {
  const std::vector<Frame> train = make_frames(12, 8, 41);
  const std::vector<Frame> val = make_frames(4, 8, 42);
  nn::AdamConfig adam;
  adam.lr = 3e-3;
  const ToyTrainResult run = toy_train(train, val, tiny_config(), {}, 8, 7, adam);
  REQUIRE(run.history.size() == 9);
  CHECK(run.history.back().train_loss < 0.6 * run.history.front().train_loss);
  // Metrics rows carry the validation numbers.
  for (const EpochMetrics& m : run.history) {
    CHECK(std::isfinite(m.heading_mae));
    CHECK(std::isfinite(m.center_mae));
  }
}

TEST_CASE("frame_loss composes smooth-L1 and BCE") {
  const std::vector<Frame> frames = make_frames(1, 6, 51);
  const RelationConfig config = tiny_config();
  const RelationModule module(config, 1);
  const RefineHead head(config, 2);
  const Frame& frame = frames[0];
  const RelationGraph graph = build_graph(proposal_centers(frame.proposals), config.strategy);
  const ProposalTargets targets = assign_targets(frame, config.assignment_iou_threshold);

  nn::Tape tape;
  const ForwardVars fwd = forward(tape, module, frame.proposals, graph);
  const HeadVars hv = refine_head_forward(tape, head, fwd.refined);
  const LossVars loss = frame_loss(tape, fwd, hv, targets);
  CHECK(tape.value(loss.total)(0, 0) ==
        doctest::Approx(loss.box_loss + loss.confidence_loss).epsilon(1e-15));
  CHECK(loss.box_loss >= 0.0);
  CHECK(loss.confidence_loss >= 0.0);

  tape.backward(loss.total);
  const nn::Parameters head_grads = nn::collect_gradients(tape, hv.head_vars);
  bool any_nonzero = false;
  head_grads.for_each_scalar([&](double g) { any_nonzero = any_nonzero || g != 0.0; });
  CHECK(any_nonzero);
}

TEST_CASE("full-module gradients pass the finite-difference oracle") {
  const std::vector<Frame> frames = make_frames(1, 7, 61, 2);
  const RelationConfig config = tiny_config();
  const Frame& frame = frames[0];
  const RelationGraph graph = build_graph(proposal_centers(frame.proposals), config.strategy);
  const ProposalTargets targets = assign_targets(frame, config.assignment_iou_threshold);

  for (int attempt = 0; attempt < 12; ++attempt) {
    RelationModule module(config, 900 + attempt);
    RefineHead head(config, 1900 + attempt);

    nn::Tape tape;
    const ForwardVars fwd = forward(tape, module, frame.proposals, graph);
    const HeadVars hv = refine_head_forward(tape, head, fwd.refined);
    const LossVars loss = frame_loss(tape, fwd, hv, targets);
    tape.backward(loss.total);
    if (tape.kink_margin() < 5e-4) continue;

    std::vector<nn::Parameters> grads;
    grads.push_back(nn::collect_gradients(tape, fwd.init_vars));
    for (const auto& edge : fwd.edge_vars) grads.push_back(nn::collect_gradients(tape, edge));
    grads.push_back(nn::collect_gradients(tape, fwd.projection_vars));
    grads.push_back(nn::collect_gradients(tape, hv.head_vars));

    std::vector<nn::Parameters*> params = module.parameter_groups();
    params.push_back(&head.params);
    std::vector<const nn::Parameters*> analytic;
    analytic.reserve(grads.size());
    for (const nn::Parameters& g : grads) analytic.push_back(&g);

    auto loss_value = [&]() {
      nn::Tape t(false);
      const ForwardVars f = forward(t, module, frame.proposals, graph);
      const HeadVars h = refine_head_forward(t, head, f.refined);
      return t.value(frame_loss(t, f, h, targets).total)(0, 0);
    };
    const double err = nn::finite_difference_check(loss_value, params, analytic, 1e-5);
    CHECK(err < 1e-5);
    return;
  }
  FAIL("no kink-free sample found in 12 attempts");
}
