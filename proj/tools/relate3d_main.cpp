// Batch CLI for graph-based proposal refinement experiments:
//   synth   generate synthetic frames (JSONL)
//   graph   build a relation graph for one frame
//   train   toy-train the relation module + refinement head
//   refine  run a checkpoint over frames, emit detections
//   eval    KITTI-style AP report
//   check   run the oracle suites (gradients, graphs, IoU)
//
// Exit codes: 0 ok, 1 usage error, 2 data error, 3 tolerance breach.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "relate3d/data_io.hpp"
#include "relate3d/errors.hpp"
#include "relate3d/eval.hpp"
#include "relate3d/io_util.hpp"
#include "relate3d/parallel.hpp"
#include "relate3d/reference.hpp"
#include "relate3d/relation.hpp"
#include "relate3d/rng.hpp"
#include "relate3d/spatial_graph.hpp"
#include "relate3d/training.hpp"

namespace {

using namespace relate3d;

struct SynthArgs {
  std::string pattern = "parallel_parking";
  int num_objects = 12;
  std::uint64_t seed = 0;
  int frames = 1;
  std::string out;
  int distractors = 0;
  double center_noise = 0.3;
  double heading_noise = 0.1;
  double feature_noise = 0.4;
  int feature_dim = 32;
  double row_spacing = 7.0;
};

int cmd_synth(const SynthArgs& args) {
  if (args.frames < 0) throw DataError("--frames must be >= 0");
  SceneSpec spec;
  spec.pattern = scene_pattern_from_string(args.pattern);
  spec.num_objects = args.num_objects;
  spec.seed = args.seed;
  spec.num_distractors = args.distractors;
  spec.center_noise_sd = args.center_noise;
  spec.heading_noise_sd = args.heading_noise;
  spec.feature_noise_sd = args.feature_noise;
  spec.feature_dim = args.feature_dim;
  spec.row_spacing = args.row_spacing;

  std::vector<Frame> frames;
  frames.reserve(static_cast<std::size_t>(args.frames));
  std::size_t total_gt = 0;
  std::size_t total_proposals = 0;
  for (int f = 0; f < args.frames; ++f) {
    spec.frame_index = static_cast<std::uint64_t>(f);
    frames.push_back(generate_scene(spec));
    total_gt += frames.back().ground_truth.size();
    total_proposals += static_cast<std::size_t>(frames.back().proposals.size());
  }
  save_frames(frames, args.out);
  std::printf("wrote %d frames (%zu ground-truth objects, %zu proposals) to %s\n", args.frames,
              total_gt, total_proposals, args.out.c_str());
  return 0;
}

struct GraphArgs {
  std::string in;
  std::string strategy = "knn";
  int k = 16;
  double r = 6.0;
  std::string frame_id;
  std::string out;
  bool brute_force = false;
};

int cmd_graph(const GraphArgs& args) {
  const std::vector<Frame> frames = load_frames(args.in);
  const Frame* frame = nullptr;
  for (const Frame& f : frames) {
    if (f.frame_id == args.frame_id) {
      frame = &f;
      break;
    }
  }
  if (!frame) throw DataError("unknown frame-id '" + args.frame_id + "' in " + args.in);

  const std::vector<Eigen::Vector3d> centers = proposal_centers(frame->proposals);
  RelationGraph graph;
  if (args.strategy == "knn") {
    graph = args.brute_force ? reference::knn_graph_brute_force(centers, args.k)
                             : knn_graph(centers, args.k);
  } else if (args.strategy == "radius") {
    graph = args.brute_force ? reference::radius_graph_brute_force(centers, args.r)
                             : radius_graph(centers, args.r);
  } else {
    throw DataError("unknown strategy '" + args.strategy + "' (expected knn or radius)");
  }
  write_file_atomic(args.out, graph_to_json(graph) + "\n");
  const DegreeStats stats = graph_degree_stats(graph);
  std::printf("frame %s: %d nodes, %zu edges, out-degree min=%d max=%d mean=%.4f\n",
              args.frame_id.c_str(), graph.num_nodes, graph.num_edges(), stats.min_degree,
              stats.max_degree, stats.mean_degree);
  return 0;
}

struct TrainArgs {
  std::string in;
  std::string val_in;
  std::string config_path;
  std::string ablation = "init_box,box_diff,feature_append";
  int epochs = 10;
  std::uint64_t seed = 0;
  std::string checkpoint_out;
  std::string metrics_out;
  double lr = 1e-3;
  std::optional<int> layers;
  std::optional<int> node_dim;
  std::optional<int> output_dim;
  std::optional<int> k;
  std::optional<double> radius;
};

AblationFlags parse_ablation(const std::string& list) {
  AblationFlags flags{false, false, false};
  std::stringstream stream(list);
  std::string name;
  while (std::getline(stream, name, ',')) {
    if (name.empty()) continue;
    if (name == "init_box") {
      flags.use_init_box = true;
    } else if (name == "box_diff") {
      flags.use_box_diff = true;
    } else if (name == "feature_append") {
      flags.use_feature_append = true;
    } else {
      throw DataError("unknown ablation flag '" + name +
                      "' (expected init_box, box_diff, feature_append)");
    }
  }
  return flags;
}

RelationConfig config_from_file(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("config " + path + ": " + e.what());
  }
  RelationConfig c;
  if (j.contains("strategy")) {
    const auto& s = j.at("strategy");
    const std::string kind = s.value("kind", "knn");
    if (kind == "knn") {
      c.strategy = GraphStrategy::make_knn(s.value("k", 16));
    } else if (kind == "radius") {
      c.strategy = GraphStrategy::make_radius(s.value("r", 6.0));
    } else {
      throw DataError("config " + path + ": unknown strategy kind '" + kind + "'");
    }
  }
  c.num_layers = j.value("num_layers", c.num_layers);
  c.node_dim = j.value("node_dim", c.node_dim);
  c.output_dim = j.value("output_dim", c.output_dim);
  c.edge_hidden = j.value("edge_hidden", c.edge_hidden);
  c.init_hidden = j.value("init_hidden", c.init_hidden);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.whiten_centers = j.value("whiten_centers", c.whiten_centers);
  c.assignment_iou_threshold = j.value("assignment_iou_threshold", c.assignment_iou_threshold);
  return c;
}

int cmd_train(const TrainArgs& args) {
  if (args.epochs < 0) throw DataError("--epochs must be >= 0");
  const std::vector<Frame> train_frames = load_frames(args.in);
  std::vector<Frame> val_frames;
  if (!args.val_in.empty()) val_frames = load_frames(args.val_in);

  RelationConfig config =
      args.config_path.empty() ? RelationConfig{} : config_from_file(args.config_path);
  if (args.layers) config.num_layers = *args.layers;
  if (args.node_dim) config.node_dim = *args.node_dim;
  if (args.output_dim) config.output_dim = *args.output_dim;
  if (args.k) config.strategy = GraphStrategy::make_knn(*args.k);
  if (args.radius) config.strategy = GraphStrategy::make_radius(*args.radius);

  int feature_dim = -1;
  for (const Frame& f : train_frames) {
    if (f.proposals.size() > 0) {
      feature_dim = f.proposals.feature_dim();
      break;
    }
  }
  if (feature_dim < 1) throw DataError("training frames contain no proposals with features");
  config.input_feature_dim = feature_dim;
  if (!config.valid()) throw DataError("invalid relation config");

  const AblationFlags flags = parse_ablation(args.ablation);
  nn::AdamConfig adam;
  adam.lr = args.lr;
  const ToyTrainResult result =
      toy_train(train_frames, val_frames, config, flags, args.epochs, args.seed, adam);

  std::string csv = "epoch,loss,heading_mae,center_mae\n";
  char line[160];
  for (const EpochMetrics& m : result.history) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g\n", m.epoch, m.train_loss,
                  m.heading_mae, m.center_mae);
    csv += line;
  }
  if (!args.metrics_out.empty()) write_file_atomic(args.metrics_out, csv);
  if (!args.checkpoint_out.empty()) {
    write_file_atomic(args.checkpoint_out, module_to_json(result.module, result.head) + "\n");
  }
  const EpochMetrics& last = result.history.back();
  std::printf("trained %d epochs on %zu frames: loss=%.6g heading_mae=%.6g center_mae=%.6g\n",
              args.epochs, train_frames.size(), last.train_loss, last.heading_mae,
              last.center_mae);
  return 0;
}

struct RefineArgs {
  std::string in;
  std::string checkpoint;
  std::string out;
};

int cmd_refine(const RefineArgs& args) {
  const std::vector<Frame> frames = load_frames(args.in);
  auto [module, head] = module_from_json(read_file(args.checkpoint));

  std::vector<FrameDetections> all(frames.size());
  std::exception_ptr failure;
  std::mutex failure_mutex;
  parallel_for(static_cast<int>(frames.size()), [&](int i) {
    try {
      const Frame& frame = frames[static_cast<std::size_t>(i)];
      FrameDetections out;
      out.frame_id = frame.frame_id;
      const RelationGraph graph =
          build_graph(proposal_centers(frame.proposals), module.config().strategy);
      const ForwardResult fwd = forward(module, frame.proposals, graph);
      const HeadOutput head_out = refine_head_forward(head, fwd.refined);
      for (int p = 0; p < frame.proposals.size(); ++p) {
        DetectionResult det;
        det.class_name = frame.proposals.class_labels[static_cast<std::size_t>(p)];
        det.box = apply_residual(frame.proposals.boxes[static_cast<std::size_t>(p)],
                                 head_out.residuals.row(p));
        det.score = 1.0 / (1.0 + std::exp(-head_out.logits(p, 0)));
        out.detections.push_back(std::move(det));
      }
      all[static_cast<std::size_t>(i)] = std::move(out);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);

  save_detections(all, args.out);
  std::printf("refined %zu frames -> %s\n", frames.size(), args.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string gt;
  std::string det;
  std::string classes = "Car";
  std::optional<double> iou_3d;
  std::optional<double> iou_bev;
  std::string recall_mode = "r40";
  std::string out;
  std::string pr_csv;
  bool pretty = false;
};

int cmd_eval(const EvalArgs& args) {
  const std::vector<Frame> gt_frames = load_frames(args.gt);
  const std::vector<FrameDetections> detections = load_detections(args.det);

  EvalConfig config;
  config.classes.clear();
  std::stringstream stream(args.classes);
  std::string cls;
  while (std::getline(stream, cls, ',')) {
    if (!cls.empty()) config.classes.push_back(cls);
  }
  if (config.classes.empty()) throw DataError("--classes must name at least one class");
  config.recall_mode = recall_mode_from_string(args.recall_mode);
  for (const std::string& c : config.classes) {
    if (args.iou_3d) config.iou_3d_overrides[c] = *args.iou_3d;
    if (args.iou_bev) config.iou_bev_overrides[c] = *args.iou_bev;
  }

  const ApReport report = evaluate(gt_frames, detections, config);
  if (!args.out.empty()) write_file_atomic(args.out, report_to_json(report) + "\n");
  if (!args.pr_csv.empty()) write_file_atomic(args.pr_csv, report_pr_csv(report));
  if (args.pretty) {
    std::fputs(report_to_table(report).c_str(), stdout);
  } else {
    std::puts(report_to_json(report).c_str());
  }
  return 0;
}

struct CheckArgs {
  std::string suite;
  std::uint64_t seed = 20240901;
};

int check_grad(std::uint64_t seed) {
  // Small module, full path: init MLP -> 2 GNN layers -> projection -> head
  // -> smooth-L1 + BCE loss. Re-sample until the pass is far from ReLU /
  // max-pool / smooth-L1 kinks so central differences are clean.
  double max_err = -1.0;
  for (int attempt = 0; attempt < 20; ++attempt) {
    SceneSpec scene;
    scene.pattern = ScenePattern::parallel_parking;
    scene.num_objects = 9;
    scene.num_distractors = 3;
    scene.feature_dim = 6;
    scene.seed = seed + static_cast<std::uint64_t>(attempt) * 1000003ull;
    const Frame frame = generate_scene(scene);

    RelationConfig config;
    config.strategy = GraphStrategy::make_knn(4);
    config.num_layers = 2;
    config.node_dim = 8;
    config.input_feature_dim = 6;
    config.output_dim = 8;
    config.head_hidden = 8;
    RelationModule module(config, scene.seed);
    RefineHead head(config, scene.seed);

    const RelationGraph graph =
        build_graph(proposal_centers(frame.proposals), config.strategy);
    const ProposalTargets targets = assign_targets(frame, config.assignment_iou_threshold);

    auto loss_value = [&]() {
      nn::Tape tape(false);
      ForwardVars fwd = forward(tape, module, frame.proposals, graph);
      HeadVars hv = refine_head_forward(tape, head, fwd.refined);
      return tape.value(frame_loss(tape, fwd, hv, targets).total)(0, 0);
    };

    nn::Tape tape;
    ForwardVars fwd = forward(tape, module, frame.proposals, graph);
    HeadVars hv = refine_head_forward(tape, head, fwd.refined);
    LossVars loss = frame_loss(tape, fwd, hv, targets);
    tape.backward(loss.total);
    if (tape.kink_margin() < 5e-4) continue;  // too close to a kink, re-sample

    std::vector<nn::Parameters> grads;
    grads.push_back(nn::collect_gradients(tape, fwd.init_vars));
    for (const auto& edge : fwd.edge_vars) grads.push_back(nn::collect_gradients(tape, edge));
    grads.push_back(nn::collect_gradients(tape, fwd.projection_vars));
    grads.push_back(nn::collect_gradients(tape, hv.head_vars));

    std::vector<nn::Parameters*> params = module.parameter_groups();
    params.push_back(&head.params);
    std::vector<const nn::Parameters*> analytic;
    for (const nn::Parameters& g : grads) analytic.push_back(&g);

    max_err = nn::finite_difference_check(loss_value, params, analytic, 1e-5);
    break;
  }
  if (max_err < 0.0) throw ToleranceError("grad suite: no kink-free sample found");
  std::printf("grad suite: max relative error %.3e (tolerance 1e-5)\n", max_err);
  if (max_err >= 1e-5) throw ToleranceError("grad suite exceeded tolerance");
  return 0;
}

int check_graph(std::uint64_t seed) {
  Rng rng = Rng(seed).stream("graph_check");
  const int ks[] = {1, 4, 16, 32};
  const double rs[] = {2.0, 6.0, 10.0};
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.uniform_int(0, 200);
    std::vector<Eigen::Vector3d> centers;
    centers.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      centers.emplace_back(rng.uniform(0.0, 60.0), rng.uniform(-20.0, 20.0),
                           rng.uniform(-1.0, 2.0));
    }
    for (int k : ks) {
      if (knn_graph(centers, k) != reference::knn_graph_brute_force(centers, k)) ++mismatches;
    }
    for (double r : rs) {
      if (radius_graph(centers, r) != reference::radius_graph_brute_force(centers, r)) {
        ++mismatches;
      }
    }
  }
  std::printf("graph suite: %d mismatches over 200 configs x 7 strategies (tolerance 0)\n",
              mismatches);
  if (mismatches > 0) throw ToleranceError("graph suite found mismatches");
  return 0;
}

int check_iou(std::uint64_t seed) {
  Rng rng = Rng(seed).stream("iou_check");
  double max_err = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    const Box3D a = make_box(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), 0.0,
                             rng.uniform(0.5, 2.5), rng.uniform(0.5, 3.0), rng.uniform(0.5, 6.0),
                             rng.uniform(-kPi, kPi));
    Box3D b;
    if (trial % 2 == 0) {
      b = make_box(a.x + rng.normal(0.0, 1.5), a.y + rng.normal(0.0, 1.5), 0.0,
                   rng.uniform(0.5, 2.5), rng.uniform(0.5, 3.0), rng.uniform(0.5, 6.0),
                   rng.uniform(-kPi, kPi));
    } else {
      b = make_box(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), 0.0, rng.uniform(0.5, 2.5),
                   rng.uniform(0.5, 3.0), rng.uniform(0.5, 6.0), rng.uniform(-kPi, kPi));
    }
    max_err = std::max(max_err,
                       std::abs(iou_bev(a, b) - reference::rasterized_iou_bev(a, b, 2000)));
  }
  std::printf("iou suite: max |analytic - rasterized| = %.3e (tolerance 2e-3)\n", max_err);
  if (max_err >= 2e-3) throw ToleranceError("iou suite exceeded tolerance");
  return 0;
}

int cmd_check(const CheckArgs& args) {
  if (args.suite == "grad") return check_grad(args.seed);
  if (args.suite == "graph") return check_graph(args.seed);
  if (args.suite == "iou") return check_iou(args.seed);
  throw DataError("unknown suite '" + args.suite + "' (expected grad, graph, or iou)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inter-object relation graphs for 3D detection refinement"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate synthetic frames");
  synth_cmd->add_option("--pattern", synth.pattern,
                        "parallel_parking | multi_lane | mixed | uniform");
  synth_cmd->add_option("--n", synth.num_objects, "Ground-truth objects per frame");
  synth_cmd->add_option("--seed", synth.seed, "Base seed")->required();
  synth_cmd->add_option("--frames", synth.frames, "Number of frames");
  synth_cmd->add_option("--out", synth.out, "Output frame JSONL")->required();
  synth_cmd->add_option("--distractors", synth.distractors, "False proposals per frame");
  synth_cmd->add_option("--center-noise", synth.center_noise, "Proposal center noise sd (m)");
  synth_cmd->add_option("--heading-noise", synth.heading_noise,
                        "Proposal heading noise sd (rad)");
  synth_cmd->add_option("--feature-noise", synth.feature_noise, "Feature noise sd");
  synth_cmd->add_option("--feature-dim", synth.feature_dim, "Feature dimension");
  synth_cmd->add_option("--row-spacing", synth.row_spacing, "Mean in-row spacing (m)");

  GraphArgs graph;
  CLI::App* graph_cmd = app.add_subcommand("graph", "Build a relation graph for one frame");
  graph_cmd->add_option("--in", graph.in, "Input frame JSONL")->required();
  graph_cmd->add_option("--strategy", graph.strategy, "knn | radius");
  graph_cmd->add_option("--k", graph.k, "Neighbors for knn");
  graph_cmd->add_option("--r", graph.r, "Radius in meters");
  graph_cmd->add_option("--frame-id", graph.frame_id, "Frame to process")->required();
  graph_cmd->add_option("--out", graph.out, "Output graph JSON")->required();
  graph_cmd->add_flag("--brute-force", graph.brute_force, "Use the O(n^2) reference builder");

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "Toy-train the relation module");
  train_cmd->add_option("--in", train.in, "Training frame JSONL")->required();
  train_cmd->add_option("--val-in", train.val_in, "Validation frame JSONL");
  train_cmd->add_option("--config", train.config_path, "RelationConfig JSON file");
  train_cmd->add_option("--ablation", train.ablation,
                        "Enabled components, comma list of init_box,box_diff,feature_append");
  train_cmd->add_option("--epochs", train.epochs, "Training epochs");
  train_cmd->add_option("--seed", train.seed, "Experiment seed")->required();
  train_cmd->add_option("--checkpoint-out", train.checkpoint_out, "Checkpoint JSON path");
  train_cmd->add_option("--metrics-out", train.metrics_out, "Per-epoch metrics CSV path");
  train_cmd->add_option("--lr", train.lr, "Adam learning rate");
  train_cmd->add_option("--layers", train.layers, "GNN layers (override)");
  train_cmd->add_option("--node-dim", train.node_dim, "Node feature dim (override)");
  train_cmd->add_option("--output-dim", train.output_dim, "Output feature dim (override)");
  train_cmd->add_option("--k", train.k, "Use a KNN graph with this k");
  train_cmd->add_option("--radius", train.radius, "Use a radius graph with this r");

  RefineArgs refine;
  CLI::App* refine_cmd = app.add_subcommand("refine", "Refine proposals with a checkpoint");
  refine_cmd->add_option("--in", refine.in, "Input frame JSONL")->required();
  refine_cmd->add_option("--checkpoint", refine.checkpoint, "Checkpoint JSON")->required();
  refine_cmd->add_option("--out", refine.out, "Output detections JSONL")->required();

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate detections against ground truth");
  eval_cmd->add_option("--gt", eval_args.gt, "Ground-truth frame JSONL")->required();
  eval_cmd->add_option("--det", eval_args.det, "Detections JSONL")->required();
  eval_cmd->add_option("--classes", eval_args.classes, "Comma list of classes");
  eval_cmd->add_option("--iou-3d", eval_args.iou_3d, "3D IoU threshold override");
  eval_cmd->add_option("--iou-bev", eval_args.iou_bev, "BEV IoU threshold override");
  eval_cmd->add_option("--recall-mode", eval_args.recall_mode, "r11 | r40");
  eval_cmd->add_option("--out", eval_args.out, "Report JSON path");
  eval_cmd->add_option("--pr-csv", eval_args.pr_csv, "Recall/precision CSV path");
  eval_cmd->add_flag("--pretty", eval_args.pretty, "Print an aligned text table");

  CheckArgs check;
  CLI::App* check_cmd = app.add_subcommand("check", "Run oracle suites");
  check_cmd->add_option("--suite", check.suite, "grad | graph | iou")->required();
  check_cmd->add_option("--seed", check.seed, "Suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    app.exit(e);
    return 1;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth);
    if (graph_cmd->parsed()) return cmd_graph(graph);
    if (train_cmd->parsed()) return cmd_train(train);
    if (refine_cmd->parsed()) return cmd_refine(refine);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (check_cmd->parsed()) return cmd_check(check);
  } catch (const ToleranceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
