#include "relate3d/data_io.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "relate3d/errors.hpp"
#include "relate3d/io_util.hpp"
#include "relate3d/rng.hpp"

namespace relate3d {

namespace {

const char* const kKnownClasses[] = {"Car",     "Van",  "Truck", "Pedestrian", "Person_sitting",
                                     "Cyclist", "Tram", "Misc",  "DontCare"};

bool known_class(const std::string& name) {
  for (const char* c : kKnownClasses) {
    if (name == c) return true;
  }
  return false;
}

double parse_double(const std::string& token, int line_number, int field) {
  double value = 0.0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw DataError("line " + std::to_string(line_number) + ": field " + std::to_string(field) +
                    " ('" + token + "') is not a number");
  }
  return value;
}

}  // namespace

LabeledBox parse_kitti_label_line(const std::string& line, int line_number) {
  std::istringstream stream(line);
  std::vector<std::string> fields;
  std::string token;
  while (stream >> token) fields.push_back(token);
  if (fields.size() != 15 && fields.size() != 16) {
    throw DataError("line " + std::to_string(line_number) + ": expected 15 or 16 fields, got " +
                    std::to_string(fields.size()));
  }
  LabeledBox out;
  out.class_name = fields[0];
  if (!known_class(out.class_name)) {
    throw DataError("line " + std::to_string(line_number) + ": unknown class '" +
                    out.class_name + "'");
  }
  double values[15];
  for (std::size_t i = 1; i < fields.size(); ++i) {
    values[i - 1] = parse_double(fields[i], line_number, static_cast<int>(i + 1));
  }
  out.alpha = values[2];
  out.bbox2d = {values[3], values[4], values[5], values[6]};
  const double h = values[7];
  const double w = values[8];
  const double l = values[9];
  const double x_cam = values[10];
  const double y_cam = values[11];
  const double z_cam = values[12];
  const double rotation_y = values[13];
  if (fields.size() == 16) out.score = values[14];

  if (out.is_ignored()) {
    // DontCare rows carry -1 placeholders for truncation/occlusion/size.
    out.truncation = 0.0;
    out.occlusion = 0;
    out.box = Box3D{};
    return out;
  }

  out.truncation = values[0];
  if (out.truncation < 0.0 || out.truncation > 1.0) {
    throw DataError("line " + std::to_string(line_number) + ": truncation " +
                    std::to_string(out.truncation) + " outside [0, 1]");
  }
  const double occ = values[1];
  if (occ != 0.0 && occ != 1.0 && occ != 2.0 && occ != 3.0) {
    throw DataError("line " + std::to_string(line_number) + ": occlusion must be 0..3, got " +
                    fields[2]);
  }
  out.occlusion = static_cast<int>(occ);
  if (!(h > 0.0 && w > 0.0 && l > 0.0)) {
    throw DataError("line " + std::to_string(line_number) + ": non-positive box dimensions");
  }
  // Camera frame (x right, y down, z forward, origin at box bottom) to the
  // internal frame (x forward, y left, z up, z at box center).
  out.box = make_box(z_cam, -x_cam, -y_cam + 0.5 * h, h, w, l, -rotation_y - 0.5 * kPi);
  return out;
}

std::vector<LabeledBox> parse_kitti_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label file: " + path);
  std::vector<LabeledBox> boxes;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    boxes.push_back(parse_kitti_label_line(line, line_number));
  }
  return boxes;
}

// ---------------------------------------------------------------------------
// Frame JSONL

namespace {

nlohmann::ordered_json box_to_json(const Box3D& b) {
  return nlohmann::ordered_json::array({b.x, b.y, b.z, b.h, b.w, b.l, b.theta});
}

Box3D box_from_json(const nlohmann::json& j, int line_number) {
  if (!j.is_array() || j.size() != 7) {
    throw DataError("line " + std::to_string(line_number) + ": box must be a 7-element array");
  }
  Box3D b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>(),
          j[4].get<double>(), j[5].get<double>(), j[6].get<double>()};
  return b;
}

}  // namespace

std::string frame_to_json(const Frame& frame) {
  nlohmann::ordered_json j;
  j["frame_id"] = frame.frame_id;
  nlohmann::ordered_json gts = nlohmann::ordered_json::array();
  for (const LabeledBox& gt : frame.ground_truth) {
    nlohmann::ordered_json g;
    g["class"] = gt.class_name;
    g["truncation"] = gt.truncation;
    g["occlusion"] = gt.occlusion;
    g["alpha"] = gt.alpha;
    g["bbox2d"] = gt.bbox2d;
    g["box"] = box_to_json(gt.box);
    if (gt.score.has_value()) {
      g["score"] = *gt.score;
    } else {
      g["score"] = nullptr;
    }
    gts.push_back(std::move(g));
  }
  j["ground_truth"] = std::move(gts);

  nlohmann::ordered_json props;
  nlohmann::ordered_json boxes = nlohmann::ordered_json::array();
  for (const Box3D& b : frame.proposals.boxes) boxes.push_back(box_to_json(b));
  props["boxes"] = std::move(boxes);
  nlohmann::ordered_json features = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < frame.proposals.features.rows(); ++i) {
    std::vector<double> row(frame.proposals.features.row(i).begin(),
                            frame.proposals.features.row(i).end());
    features.push_back(std::move(row));
  }
  props["features"] = std::move(features);
  props["classes"] = frame.proposals.class_labels;
  props["scores"] = frame.proposals.scores;
  j["proposals"] = std::move(props);
  return j.dump();
}

Frame frame_from_json(const std::string& text, int line_number) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("line " + std::to_string(line_number) + ": malformed JSON: " + e.what());
  }
  Frame frame;
  try {
    frame.frame_id = j.at("frame_id").get<std::string>();
    if (frame.frame_id.empty()) {
      throw DataError("line " + std::to_string(line_number) + ": empty frame_id");
    }
    for (const auto& g : j.at("ground_truth")) {
      LabeledBox gt;
      gt.class_name = g.at("class").get<std::string>();
      gt.truncation = g.at("truncation").get<double>();
      gt.occlusion = g.at("occlusion").get<int>();
      gt.alpha = g.at("alpha").get<double>();
      const auto& bb = g.at("bbox2d");
      for (int i = 0; i < 4; ++i) gt.bbox2d[static_cast<std::size_t>(i)] = bb.at(i).get<double>();
      gt.box = box_from_json(g.at("box"), line_number);
      if (!g.at("score").is_null()) gt.score = g.at("score").get<double>();
      if (!gt.is_ignored() && !is_valid_box(gt.box)) {
        throw DataError("line " + std::to_string(line_number) + ": invalid ground-truth box");
      }
      frame.ground_truth.push_back(std::move(gt));
    }
    const auto& props = j.at("proposals");
    for (const auto& b : props.at("boxes")) {
      frame.proposals.boxes.push_back(box_from_json(b, line_number));
      if (!is_valid_box(frame.proposals.boxes.back())) {
        throw DataError("line " + std::to_string(line_number) + ": invalid proposal box");
      }
    }
    const auto& features = props.at("features");
    const int n = static_cast<int>(frame.proposals.boxes.size());
    if (static_cast<int>(features.size()) != n) {
      throw DataError("line " + std::to_string(line_number) + ": " + std::to_string(n) +
                      " proposal boxes but " + std::to_string(features.size()) +
                      " feature rows");
    }
    int d = -1;
    for (int i = 0; i < n; ++i) {
      const auto row = features[i].get<std::vector<double>>();
      if (d < 0) {
        d = static_cast<int>(row.size());
        frame.proposals.features.resize(n, d);
      } else if (static_cast<int>(row.size()) != d) {
        throw DataError("line " + std::to_string(line_number) +
                        ": inconsistent feature dims (" + std::to_string(row.size()) + " vs " +
                        std::to_string(d) + ")");
      }
      for (int c = 0; c < d; ++c) frame.proposals.features(i, c) = row[static_cast<std::size_t>(c)];
    }
    if (n == 0) frame.proposals.features.resize(0, 0);
    frame.proposals.class_labels = props.at("classes").get<std::vector<std::string>>();
    frame.proposals.scores = props.at("scores").get<std::vector<double>>();
    if (!frame.proposals.consistent()) {
      throw DataError("line " + std::to_string(line_number) +
                      ": proposal arrays have inconsistent lengths");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("line " + std::to_string(line_number) + ": " + e.what());
  }
  return frame;
}

std::vector<Frame> load_frames(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open frame file: " + path);
  std::vector<Frame> frames;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    frames.push_back(frame_from_json(line, line_number));
  }
  return frames;
}

void save_frames(const std::vector<Frame>& frames, const std::string& path) {
  std::string out;
  for (const Frame& frame : frames) {
    out += frame_to_json(frame);
    out += '\n';
  }
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Scene generation

ScenePattern scene_pattern_from_string(const std::string& name) {
  if (name == "parallel_parking") return ScenePattern::parallel_parking;
  if (name == "multi_lane") return ScenePattern::multi_lane;
  if (name == "mixed") return ScenePattern::mixed;
  if (name == "uniform") return ScenePattern::uniform;
  throw DataError("unknown scene pattern '" + name + "'");
}

std::string to_string(ScenePattern p) {
  switch (p) {
    case ScenePattern::parallel_parking:
      return "parallel_parking";
    case ScenePattern::multi_lane:
      return "multi_lane";
    case ScenePattern::mixed:
      return "mixed";
    case ScenePattern::uniform:
      return "uniform";
  }
  return "unknown";
}

namespace {

struct CarSize {
  double h, w, l;
};

CarSize draw_car_size(Rng& rng) {
  return CarSize{rng.uniform(1.40, 1.70), rng.uniform(1.60, 1.90), rng.uniform(3.80, 4.60)};
}

void append_row(std::vector<Box3D>& boxes, Rng& rng, int count, double x0, double y0,
                double heading, double step_dx, double step_dy, double spacing,
                double jitter_sd, double min_spacing) {
  double along = 0.0;
  for (int i = 0; i < count; ++i) {
    const CarSize size = draw_car_size(rng);
    boxes.push_back(make_box(x0 + step_dx * along, y0 + step_dy * along, 0.5 * size.h, size.h,
                             size.w, size.l, heading));
    along += std::max(min_spacing, spacing + rng.normal(0.0, jitter_sd));
  }
}

std::vector<Box3D> layout_parallel_parking(Rng& rng, const SceneSpec& spec) {
  std::vector<Box3D> boxes;
  const int n = spec.num_objects;
  const int rows = n >= 10 ? 2 : 1;
  // One street per scene at an arbitrary orientation; parked cars line up
  // along it and share its heading exactly.
  const double heading = normalize_angle(rng.uniform(-kPi, kPi));
  const double ux = std::cos(heading);
  const double uy = std::sin(heading);
  const double base_x = rng.uniform(8.0, 16.0);
  const double base_y = rng.uniform(-6.0, 6.0);
  int placed = 0;
  for (int r = 0; r < rows; ++r) {
    const int count = r + 1 == rows ? n - placed : (n + 1) / 2;
    placed += count;
    const double side = (r == 0 ? 3.5 : -3.5) + rng.uniform(-0.4, 0.4);
    const double x0 = base_x - uy * side + ux * rng.uniform(-3.0, 3.0);
    const double y0 = base_y + ux * side + uy * rng.uniform(-3.0, 3.0);
    append_row(boxes, rng, count, x0, y0, heading, ux, uy, spec.row_spacing,
               spec.spacing_jitter_sd, 5.2);
  }
  return boxes;
}

std::vector<Box3D> layout_multi_lane(Rng& rng, const SceneSpec& spec) {
  std::vector<Box3D> boxes;
  const int n = spec.num_objects;
  const int lanes = (n >= 9 && rng.uniform() < 0.5) ? 3 : 2;
  int placed = 0;
  for (int lane = 0; lane < lanes; ++lane) {
    const int count = lane + 1 == lanes ? n - placed : (n + lanes - 1) / lanes;
    placed += count;
    const double y = (lane - 0.5 * (lanes - 1)) * 3.5;
    const double heading =
        normalize_angle((lane % 2 == 0 ? 0.0 : kPi) + rng.uniform(-0.05, 0.05));
    const double x0 = rng.uniform(5.0, 14.0);
    append_row(boxes, rng, count, x0, y, heading, 1.0, 0.0, spec.row_spacing * 1.4,
               spec.spacing_jitter_sd, 6.0);
  }
  return boxes;
}

// Perpendicular-parked clusters with per-cluster headings, plus one driving
// lane. In-cluster gaps are a fraction of row_spacing, so default specs give
// sub-6 m spacing inside clusters while clusters stay far apart.
std::vector<Box3D> layout_mixed(Rng& rng, const SceneSpec& spec) {
  std::vector<Box3D> boxes;
  const int n = spec.num_objects;
  const int lane_count = n / 4;
  const int cluster_total = n - lane_count;
  const int clusters = std::max(1, cluster_total / 8 + (cluster_total % 8 ? 1 : 0));
  int placed = 0;
  for (int c = 0; c < clusters; ++c) {
    const int count =
        c + 1 == clusters ? cluster_total - placed : (cluster_total + clusters - 1) / clusters;
    placed += count;
    const double cx = 10.0 + 32.0 * c + rng.uniform(-3.0, 3.0);
    const double cy = rng.uniform(-8.0, 8.0);
    // Perpendicular parking along the lot axis: cars face +x or -x, so each
    // cluster's stalls share one depth line.
    const double heading =
        normalize_angle((rng.uniform() < 0.5 ? 0.0 : kPi) + rng.uniform(-0.06, 0.06));
    // Cars parked side by side: the row runs perpendicular to the heading.
    const double dir = heading + 0.5 * kPi;
    const double spacing = std::max(2.4, spec.row_spacing * 0.4);
    append_row(boxes, rng, count, cx, cy, heading, std::cos(dir), std::sin(dir), spacing,
               spec.spacing_jitter_sd, 2.3);
  }
  if (lane_count > 0) {
    const double heading = normalize_angle(rng.uniform() < 0.5 ? 0.0 : kPi);
    append_row(boxes, rng, lane_count, rng.uniform(5.0, 12.0), 14.0, heading, 1.0, 0.0,
               spec.row_spacing * 1.4, spec.spacing_jitter_sd, 6.0);
  }
  return boxes;
}

std::vector<Box3D> layout_uniform(Rng& rng, const SceneSpec& spec) {
  std::vector<Box3D> boxes;
  for (int i = 0; i < spec.num_objects; ++i) {
    const CarSize size = draw_car_size(rng);
    boxes.push_back(make_box(rng.uniform(5.0, 55.0), rng.uniform(-15.0, 15.0), 0.5 * size.h,
                             size.h, size.w, size.l, rng.uniform(-kPi, kPi)));
  }
  return boxes;
}

LabeledBox ground_truth_from_box(const Box3D& box) {
  LabeledBox gt;
  gt.class_name = "Car";
  gt.truncation = 0.0;
  gt.occlusion = 0;
  gt.alpha = normalize_angle(box.theta - std::atan2(box.y, box.x));
  // Pinhole proxy for the image-plane height; synthetic frames have no
  // camera, and difficulty gating only reads bottom - top.
  const double height_px = 715.0 * box.h / std::max(box.x, 1.0);
  gt.bbox2d = {600.0, 150.0, 600.0 + 0.8 * height_px, 150.0 + height_px};
  gt.box = box;
  return gt;
}

// Scale-normalized box encoding used for feature synthesis.
Eigen::Matrix<double, 7, 1> feature_encoding(const Box3D& box) {
  Eigen::Matrix<double, 7, 1> u;
  u << box.x / 10.0, box.y / 10.0, box.z, box.h, box.w, box.l, box.theta;
  return u;
}

}  // namespace

Frame generate_scene(const SceneSpec& spec) {
  if (spec.num_objects < 0 || spec.num_distractors < 0) {
    throw std::invalid_argument("generate_scene: negative object count");
  }
  if (spec.heading_noise_sd < 0.0 || spec.center_noise_sd < 0.0 || spec.feature_noise_sd < 0.0) {
    throw std::invalid_argument("generate_scene: negative noise sd");
  }
  if (spec.feature_dim < 1) throw std::invalid_argument("generate_scene: feature_dim must be >= 1");

  // The feature map depends on the base seed only so that every frame of a
  // dataset shares the same feature geometry.
  Rng map_rng = Rng(spec.seed).stream("feature_map");
  nn::Matrix feature_map(spec.feature_dim, 7);
  for (Eigen::Index i = 0; i < feature_map.size(); ++i) {
    feature_map.data()[i] = map_rng.normal(0.0, 1.0 / std::sqrt(7.0));
  }

  Rng rng = Rng(spec.seed).stream("scene").substream(spec.frame_index);

  std::vector<Box3D> gt_boxes;
  switch (spec.pattern) {
    case ScenePattern::parallel_parking:
      gt_boxes = layout_parallel_parking(rng, spec);
      break;
    case ScenePattern::multi_lane:
      gt_boxes = layout_multi_lane(rng, spec);
      break;
    case ScenePattern::mixed:
      gt_boxes = layout_mixed(rng, spec);
      break;
    case ScenePattern::uniform:
      gt_boxes = layout_uniform(rng, spec);
      break;
  }

  Frame frame;
  {
    char id[16];
    std::snprintf(id, sizeof(id), "%06llu",
                  static_cast<unsigned long long>(spec.frame_index));
    frame.frame_id = id;
  }
  for (const Box3D& box : gt_boxes) frame.ground_truth.push_back(ground_truth_from_box(box));

  const int n_proposals = static_cast<int>(gt_boxes.size()) + spec.num_distractors;
  frame.proposals.features.resize(n_proposals, spec.feature_dim);
  frame.proposals.boxes.reserve(n_proposals);

  auto add_proposal = [&](const Box3D& proposal_box, const Box3D& true_box, double score) {
    Eigen::Matrix<double, 7, 1> u = feature_encoding(true_box);
    for (int c = 0; c < 7; ++c) u[c] += rng.normal(0.0, spec.feature_noise_sd);
    const int row = static_cast<int>(frame.proposals.boxes.size());
    frame.proposals.features.row(row) = (feature_map * u).transpose();
    frame.proposals.boxes.push_back(proposal_box);
    frame.proposals.class_labels.push_back("Car");
    frame.proposals.scores.push_back(score);
  };

  for (const Box3D& gt : gt_boxes) {
    const Box3D proposal = make_box(gt.x + rng.normal(0.0, spec.center_noise_sd),
                                    gt.y + rng.normal(0.0, spec.center_noise_sd),
                                    gt.z + rng.normal(0.0, spec.center_noise_sd), gt.h, gt.w,
                                    gt.l, gt.theta + rng.normal(0.0, spec.heading_noise_sd));
    add_proposal(proposal, gt, rng.uniform(0.5, 1.0));
  }
  for (int i = 0; i < spec.num_distractors; ++i) {
    const CarSize size = draw_car_size(rng);
    const Box3D distractor =
        make_box(rng.uniform(5.0, 55.0), rng.uniform(-12.0, 12.0),
                 0.5 * size.h + rng.normal(0.0, spec.center_noise_sd), size.h, size.w, size.l,
                 rng.uniform(-kPi, kPi));
    add_proposal(distractor, distractor, rng.uniform(0.1, 0.7));
  }
  if (n_proposals == 0) frame.proposals.features.resize(0, 0);
  return frame;
}

}  // namespace relate3d
