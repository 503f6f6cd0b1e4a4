#include "relate3d/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "relate3d/errors.hpp"
#include "relate3d/io_util.hpp"

namespace relate3d {

const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::easy:
      return "easy";
    case Difficulty::moderate:
      return "moderate";
    case Difficulty::hard:
      return "hard";
  }
  return "unknown";
}

const char* to_string(RecallMode m) { return m == RecallMode::r11 ? "r11" : "r40"; }

RecallMode recall_mode_from_string(const std::string& name) {
  if (name == "r11") return RecallMode::r11;
  if (name == "r40") return RecallMode::r40;
  throw DataError("unknown recall mode '" + name + "' (expected r11 or r40)");
}

bool difficulty_filter(const LabeledBox& gt, Difficulty level) {
  if (gt.is_ignored()) return false;
  static constexpr double kMinHeight[3] = {40.0, 25.0, 25.0};
  static constexpr int kMaxOcclusion[3] = {0, 1, 2};
  static constexpr double kMaxTruncation[3] = {0.15, 0.30, 0.50};
  const int i = static_cast<int>(level);
  return gt.bbox_height() >= kMinHeight[i] && gt.occlusion <= kMaxOcclusion[i] &&
         gt.truncation <= kMaxTruncation[i];
}

FrameMatches match_frame(const std::vector<DetectionResult>& dets,
                         const std::vector<LabeledBox>& gts, const IouFn& iou, double threshold,
                         const std::vector<bool>* gt_ignored) {
  FrameMatches out;
  out.tp.assign(dets.size(), false);
  out.matched_gt.assign(dets.size(), -1);

  std::vector<bool> matchable(gts.size(), false);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const bool ignored = gts[g].is_ignored() || (gt_ignored && (*gt_ignored)[g]);
    matchable[g] = !ignored;
    if (matchable[g]) ++out.num_matchable_gt;
  }

  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });

  std::vector<bool> gt_used(gts.size(), false);
  for (int d : order) {
    double best_iou = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!matchable[g] || gt_used[g]) continue;
      const double o = iou(dets[d].box, gts[g].box);
      if (o > best_iou) {
        best_iou = o;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best_iou >= threshold) {
      out.tp[d] = true;
      out.matched_gt[d] = best_gt;
      gt_used[best_gt] = true;
    }
  }
  return out;
}

ApResult ap_interpolated(std::vector<std::pair<double, bool>> scored_tp_flags, int num_gt,
                         RecallMode mode) {
  ApResult result;
  if (num_gt <= 0) {
    result.no_ground_truth = true;
    return result;
  }
  std::stable_sort(scored_tp_flags.begin(), scored_tp_flags.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  // One PR point per distinct score threshold; equal scores enter together.
  int tp = 0;
  int fp = 0;
  std::size_t i = 0;
  while (i < scored_tp_flags.size()) {
    const double score = scored_tp_flags[i].first;
    while (i < scored_tp_flags.size() && scored_tp_flags[i].first == score) {
      if (scored_tp_flags[i].second) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    PrPoint point;
    point.score = score;
    point.recall = static_cast<double>(tp) / num_gt;
    point.precision = static_cast<double>(tp) / (tp + fp);
    result.curve.push_back(point);
  }

  auto interpolated_precision = [&](double recall) {
    double best = 0.0;
    for (const PrPoint& p : result.curve) {
      if (p.recall >= recall) best = std::max(best, p.precision);
    }
    return best;
  };

  const int samples = mode == RecallMode::r11 ? 11 : 40;
  double total = 0.0;
  for (int s = 0; s < samples; ++s) {
    const double recall = mode == RecallMode::r11 ? s / 10.0 : (s + 1) / 40.0;
    total += interpolated_precision(recall);
  }
  result.ap = total / samples;
  return result;
}

double EvalConfig::iou_threshold_3d(const std::string& cls) const {
  auto it = iou_3d_overrides.find(cls);
  if (it != iou_3d_overrides.end()) return it->second;
  return cls == "Car" ? 0.7 : 0.5;
}

double EvalConfig::iou_threshold_bev(const std::string& cls) const {
  auto it = iou_bev_overrides.find(cls);
  if (it != iou_bev_overrides.end()) return it->second;
  return cls == "Car" ? 0.7 : 0.5;
}

ApReport evaluate(const std::vector<Frame>& gt_frames,
                  const std::vector<FrameDetections>& detections, const EvalConfig& config) {
  std::map<std::string, const Frame*> frames_by_id;
  for (const Frame& f : gt_frames) {
    if (!frames_by_id.emplace(f.frame_id, &f).second) {
      throw DataError("evaluate: duplicate ground-truth frame id '" + f.frame_id + "'");
    }
  }
  std::map<std::string, const FrameDetections*> dets_by_id;
  for (const FrameDetections& d : detections) {
    if (frames_by_id.find(d.frame_id) == frames_by_id.end()) {
      throw DataError("evaluate: detections reference unknown frame id '" + d.frame_id + "'");
    }
    if (!dets_by_id.emplace(d.frame_id, &d).second) {
      throw DataError("evaluate: duplicate detection frame id '" + d.frame_id + "'");
    }
  }

  ApReport report;
  report.recall_mode = config.recall_mode;
  const std::vector<FrameDetections> empty_dets;

  for (const std::string& cls : config.classes) {
    std::array<ApCell, 3> cells;
    for (int level = 0; level < 3; ++level) {
      const Difficulty difficulty = static_cast<Difficulty>(level);
      for (int metric = 0; metric < 2; ++metric) {
        const bool is_3d = metric == 0;
        const IouFn iou = is_3d ? IouFn(iou_3d) : IouFn(iou_bev);
        const double threshold =
            is_3d ? config.iou_threshold_3d(cls) : config.iou_threshold_bev(cls);

        std::vector<std::pair<double, bool>> pooled;
        int num_gt = 0;
        for (const Frame& frame : gt_frames) {
          std::vector<DetectionResult> frame_dets;
          auto dit = dets_by_id.find(frame.frame_id);
          if (dit != dets_by_id.end()) {
            for (const DetectionResult& det : dit->second->detections) {
              if (det.class_name == cls) frame_dets.push_back(det);
            }
          }
          std::vector<bool> ignored(frame.ground_truth.size(), false);
          for (std::size_t g = 0; g < frame.ground_truth.size(); ++g) {
            const LabeledBox& gt = frame.ground_truth[g];
            ignored[g] =
                gt.class_name != cls || !difficulty_filter(gt, difficulty);
          }
          const FrameMatches matches =
              match_frame(frame_dets, frame.ground_truth, iou, threshold, &ignored);
          num_gt += matches.num_matchable_gt;
          for (std::size_t d = 0; d < frame_dets.size(); ++d) {
            pooled.emplace_back(frame_dets[d].score, matches.tp[d]);
          }
        }

        ApResult ap = ap_interpolated(pooled, num_gt, config.recall_mode);
        if (is_3d) {
          cells[level].num_gt = num_gt;
          int tp = 0;
          for (const auto& [score, flag] : pooled) {
            if (flag) ++tp;
          }
          cells[level].tp = tp;
          cells[level].fp = static_cast<int>(pooled.size()) - tp;
          cells[level].fn = num_gt - tp;
          cells[level].ap_3d = std::move(ap);
        } else {
          cells[level].ap_bev = std::move(ap);
        }
      }
    }
    report.per_class.emplace(cls, std::move(cells));
  }
  return report;
}

std::string report_to_json(const ApReport& report) {
  nlohmann::ordered_json j;
  j["recall_mode"] = to_string(report.recall_mode);
  nlohmann::ordered_json classes;
  for (const auto& [cls, cells] : report.per_class) {
    nlohmann::ordered_json per_difficulty;
    for (int level = 0; level < 3; ++level) {
      const ApCell& cell = cells[static_cast<std::size_t>(level)];
      nlohmann::ordered_json c;
      c["ap_3d"] = cell.ap_3d.ap;
      c["ap_bev"] = cell.ap_bev.ap;
      c["num_gt"] = cell.num_gt;
      c["tp"] = cell.tp;
      c["fp"] = cell.fp;
      c["fn"] = cell.fn;
      c["no_ground_truth"] = cell.ap_3d.no_ground_truth;
      per_difficulty[to_string(static_cast<Difficulty>(level))] = std::move(c);
    }
    classes[cls] = std::move(per_difficulty);
  }
  j["classes"] = std::move(classes);
  return j.dump();
}

std::string report_to_table(const ApReport& report) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %-10s %8s %8s %6s %6s %6s\n", "class", "difficulty",
                "3D AP", "BEV AP", "TP", "FP", "FN");
  out += line;
  for (const auto& [cls, cells] : report.per_class) {
    for (int level = 0; level < 3; ++level) {
      const ApCell& cell = cells[static_cast<std::size_t>(level)];
      std::snprintf(line, sizeof(line), "%-12s %-10s %8.4f %8.4f %6d %6d %6d\n", cls.c_str(),
                    to_string(static_cast<Difficulty>(level)), cell.ap_3d.ap, cell.ap_bev.ap,
                    cell.tp, cell.fp, cell.fn);
      out += line;
    }
  }
  return out;
}

std::string report_pr_csv(const ApReport& report) {
  std::string out = "class,difficulty,metric,score,recall,precision\n";
  char line[256];
  for (const auto& [cls, cells] : report.per_class) {
    for (int level = 0; level < 3; ++level) {
      const ApCell& cell = cells[static_cast<std::size_t>(level)];
      for (int metric = 0; metric < 2; ++metric) {
        const ApResult& ap = metric == 0 ? cell.ap_3d : cell.ap_bev;
        for (const PrPoint& p : ap.curve) {
          std::snprintf(line, sizeof(line), "%s,%s,%s,%.17g,%.17g,%.17g\n", cls.c_str(),
                        to_string(static_cast<Difficulty>(level)), metric == 0 ? "3d" : "bev",
                        p.score, p.recall, p.precision);
          out += line;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detections JSONL

std::string detections_to_json(const FrameDetections& frame) {
  nlohmann::ordered_json j;
  j["frame_id"] = frame.frame_id;
  nlohmann::ordered_json dets = nlohmann::ordered_json::array();
  for (const DetectionResult& det : frame.detections) {
    nlohmann::ordered_json d;
    d["class"] = det.class_name;
    d["box"] = {det.box.x, det.box.y, det.box.z, det.box.h, det.box.w, det.box.l, det.box.theta};
    d["score"] = det.score;
    dets.push_back(std::move(d));
  }
  j["detections"] = std::move(dets);
  return j.dump();
}

FrameDetections detections_from_json(const std::string& text, int line_number) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("line " + std::to_string(line_number) + ": malformed JSON: " + e.what());
  }
  FrameDetections frame;
  try {
    frame.frame_id = j.at("frame_id").get<std::string>();
    for (const auto& d : j.at("detections")) {
      DetectionResult det;
      det.class_name = d.at("class").get<std::string>();
      const auto& b = d.at("box");
      if (!b.is_array() || b.size() != 7) {
        throw DataError("line " + std::to_string(line_number) + ": box must have 7 entries");
      }
      det.box = Box3D{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                      b[3].get<double>(), b[4].get<double>(), b[5].get<double>(),
                      b[6].get<double>()};
      det.score = d.at("score").get<double>();
      if (!is_valid_box(det.box) || !std::isfinite(det.score)) {
        throw DataError("line " + std::to_string(line_number) + ": invalid detection");
      }
      frame.detections.push_back(std::move(det));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("line " + std::to_string(line_number) + ": " + e.what());
  }
  return frame;
}

std::vector<FrameDetections> load_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open detections file: " + path);
  std::vector<FrameDetections> frames;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    frames.push_back(detections_from_json(line, line_number));
  }
  return frames;
}

void save_detections(const std::vector<FrameDetections>& detections, const std::string& path) {
  std::string out;
  for (const FrameDetections& frame : detections) {
    out += detections_to_json(frame);
    out += '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace relate3d
