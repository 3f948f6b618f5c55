#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

#include "hvpr/geometry.hpp"

// Detection matching and 40-recall-point average precision.
namespace hvpr::eval {

struct Detection {
  Box3D box;
  double score = 0.0;
  std::string scene_id;
};

struct SceneTruth {
  std::string scene_id;
  std::vector<Box3D> boxes;
};

enum class IouKind { bev, volume };

// Greedy matching in the given order (callers sort by descending score):
// each detection takes the highest-IoU unmatched GT of its scene and is a
// true positive iff that IoU ≥ iou_thr.
std::vector<bool> match_detections(const std::vector<Detection>& dets, const std::vector<SceneTruth>& truth,
                                   double iou_thr, IouKind kind = IouKind::bev);

// Interpolated precision sampled at recall r = 1/40 … 40/40. `flags` must be
// ordered by descending score.
double average_precision_40(const std::vector<bool>& flags, std::size_t num_gt);

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct EvalReport {
  std::string label = "Car";
  double iou_threshold = 0.7;
  std::size_t num_scenes = 0;
  std::size_t num_gt = 0;
  std::size_t num_detections = 0;
  std::size_t true_positives = 0;
  double ap = 0.0;
  std::vector<PrPoint> pr;  // the 40 interpolated samples
};

// Sorts detections by score (stable), matches and integrates.
EvalReport evaluate(std::vector<Detection> dets, const std::vector<SceneTruth>& truth, double iou_thr,
                    IouKind kind = IouKind::bev);

std::string format_report(const EvalReport& report);
nlohmann::json report_json(const EvalReport& report);

}  // namespace hvpr::eval
