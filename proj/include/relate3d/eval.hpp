#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "relate3d/data_io.hpp"
#include "relate3d/geometry.hpp"

namespace relate3d {

struct DetectionResult {
  std::string class_name;
  Box3D box;
  double score = 0.0;
};

struct FrameDetections {
  std::string frame_id;
  std::vector<DetectionResult> detections;
};

enum class Difficulty { easy = 0, moderate = 1, hard = 2 };
enum class RecallMode { r11, r40 };

const char* to_string(Difficulty d);
const char* to_string(RecallMode m);
RecallMode recall_mode_from_string(const std::string& name);

// Official KITTI gating: minimum image-box height, maximum occlusion and
// truncation per level. DontCare is excluded everywhere.
bool difficulty_filter(const LabeledBox& gt, Difficulty level);

using IouFn = std::function<double(const Box3D&, const Box3D&)>;

struct FrameMatches {
  std::vector<bool> tp;         // aligned with the input detection order
  std::vector<int> matched_gt;  // -1 when unmatched
  int num_matchable_gt = 0;
};

// Greedy matching in descending score order (ties by input index): each
// detection claims the unmatched ground truth of highest IoU when that IoU
// clears the threshold. Ignored/DontCare ground truth neither matches nor
// counts toward recall.
FrameMatches match_frame(const std::vector<DetectionResult>& dets,
                         const std::vector<LabeledBox>& gts, const IouFn& iou, double threshold,
                         const std::vector<bool>* gt_ignored = nullptr);

struct PrPoint {
  double score = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

struct ApResult {
  double ap = 0.0;
  bool no_ground_truth = false;  // num_gt was 0; AP defined as 0
  std::vector<PrPoint> curve;
};

// Interpolated AP: precision(r) = max precision at recall >= r, averaged
// over 11 (r = 0, 0.1, ..., 1) or 40 (r = 1/40, ..., 1) recall positions.
// Detections with equal scores enter the curve together.
ApResult ap_interpolated(std::vector<std::pair<double, bool>> scored_tp_flags, int num_gt,
                         RecallMode mode);

struct EvalConfig {
  std::vector<std::string> classes{"Car"};
  RecallMode recall_mode = RecallMode::r40;
  // Optional per-class overrides; defaults are 0.7 for Car, 0.5 otherwise.
  std::map<std::string, double> iou_3d_overrides;
  std::map<std::string, double> iou_bev_overrides;

  double iou_threshold_3d(const std::string& cls) const;
  double iou_threshold_bev(const std::string& cls) const;
};

struct ApCell {
  ApResult ap_3d;
  ApResult ap_bev;
  int num_gt = 0;
  int tp = 0;  // counts for the 3D metric with every detection admitted
  int fp = 0;
  int fn = 0;
};

struct ApReport {
  RecallMode recall_mode = RecallMode::r40;
  std::map<std::string, std::array<ApCell, 3>> per_class;  // [difficulty]
};

// Pooled matching across frames, one PR sweep per class x difficulty x
// metric. Every detection frame_id must exist in gt_frames.
ApReport evaluate(const std::vector<Frame>& gt_frames,
                  const std::vector<FrameDetections>& detections, const EvalConfig& config);

std::string report_to_json(const ApReport& report);
std::string report_to_table(const ApReport& report);
// (class, difficulty, metric, score, recall, precision) rows for plotting.
std::string report_pr_csv(const ApReport& report);

// Detections JSONL: {"frame_id": str, "detections": [{"class", "box", "score"}]}
std::vector<FrameDetections> load_detections(const std::string& path);
void save_detections(const std::vector<FrameDetections>& detections, const std::string& path);
std::string detections_to_json(const FrameDetections& frame);
FrameDetections detections_from_json(const std::string& text, int line_number = 0);

}  // namespace relate3d
