#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "relate3d/geometry.hpp"
#include "relate3d/relation.hpp"

namespace relate3d {

// One annotated object. bbox2d is the image-plane box (left, top, right,
// bottom in pixels), kept only for difficulty gating. The 3D box is already
// in the internal frame (x-forward, y-left, z-up, z at box center).
struct LabeledBox {
  std::string class_name;
  double truncation = 0.0;           // [0, 1]
  int occlusion = 0;                 // {0, 1, 2, 3}
  double alpha = 0.0;                // observation angle, radians
  std::array<double, 4> bbox2d{};
  Box3D box;
  std::optional<double> score;

  bool is_ignored() const { return class_name == "DontCare"; }
  double bbox_height() const { return bbox2d[3] - bbox2d[1]; }
};

struct Frame {
  std::string frame_id;
  std::vector<LabeledBox> ground_truth;
  ProposalSet proposals;
};

// Parse one line of a KITTI label file (15 fields, 16 with a trailing
// score). Camera coordinates are mapped to the internal frame:
//   (x, y, z) = (z_cam, -x_cam, -y_cam + h/2),  theta = -(rotation_y) - pi/2.
// DontCare rows keep their 2D box; their placeholder 3D box is never used.
LabeledBox parse_kitti_label_line(const std::string& line, int line_number = 0);

std::vector<LabeledBox> parse_kitti_labels(const std::string& path);

// Frame JSONL: one frame per line, schema
// {"frame_id", "ground_truth": [...], "proposals": {"boxes", "features",
//  "classes", "scores"}}. Round trips are value-exact.
std::vector<Frame> load_frames(const std::string& path);
void save_frames(const std::vector<Frame>& frames, const std::string& path);

std::string frame_to_json(const Frame& frame);
Frame frame_from_json(const std::string& text, int line_number = 0);

enum class ScenePattern { parallel_parking, multi_lane, mixed, uniform };

ScenePattern scene_pattern_from_string(const std::string& name);
std::string to_string(ScenePattern p);

// Synthetic scene: ground-truth boxes laid out in the requested pattern,
// proposals = ground truth + center/heading noise, plus uniformly scattered
// distractor proposals. Features are a fixed random linear map (a function
// of `seed` only, shared across frame_index) of the scale-normalized true
// box plus feature noise, so geometry is learnable from features.
struct SceneSpec {
  ScenePattern pattern = ScenePattern::parallel_parking;
  int num_objects = 12;
  double heading_noise_sd = 0.1;  // radians, proposal heading jitter
  double center_noise_sd = 0.3;   // meters, proposal center jitter
  int feature_dim = 32;
  std::uint64_t seed = 0;
  std::uint64_t frame_index = 0;
  int num_distractors = 0;
  double feature_noise_sd = 0.4;   // on the normalized encoded box
  double row_spacing = 7.0;        // mean in-row / in-lane gap, meters
  double spacing_jitter_sd = 0.15;
};

Frame generate_scene(const SceneSpec& spec);

}  // namespace relate3d
