#include "hvpr/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>

namespace hvpr::eval {

namespace {

constexpr int kRecallPoints = 40;

std::vector<PrPoint> interpolated_curve(const std::vector<bool>& flags, std::size_t num_gt) {
  std::vector<PrPoint> samples(kRecallPoints);
  for (int i = 0; i < kRecallPoints; ++i) samples[i].recall = static_cast<double>(i + 1) / kRecallPoints;
  if (num_gt == 0) return samples;
  std::vector<PrPoint> raw;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i]) ++tp;
    raw.push_back({static_cast<double>(tp) / static_cast<double>(num_gt),
                   static_cast<double>(tp) / static_cast<double>(i + 1)});
  }
  for (auto& s : samples) {
    double best = 0.0;
    for (const PrPoint& p : raw) {
      if (p.recall >= s.recall - 1e-12) best = std::max(best, p.precision);
    }
    s.precision = best;
  }
  return samples;
}

}  // namespace

std::vector<bool> match_detections(const std::vector<Detection>& dets, const std::vector<SceneTruth>& truth,
                                   double iou_thr, IouKind kind) {
  std::map<std::string, const SceneTruth*> by_scene;
  std::map<std::string, std::vector<bool>> used;
  for (const SceneTruth& s : truth) {
    by_scene[s.scene_id] = &s;
    used[s.scene_id].assign(s.boxes.size(), false);
  }
  std::vector<bool> flags(dets.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto it = by_scene.find(dets[i].scene_id);
    if (it == by_scene.end()) continue;
    auto& taken = used[dets[i].scene_id];
    double best = -1.0;
    long best_gt = -1;
    for (std::size_t g = 0; g < it->second->boxes.size(); ++g) {
      if (taken[g]) continue;
      const Box3D& gt = it->second->boxes[g];
      const double iou = kind == IouKind::bev ? rotated_bev_iou(dets[i].box, gt) : rotated_iou_3d(dets[i].box, gt);
      if (iou > best) {
        best = iou;
        best_gt = static_cast<long>(g);
      }
    }
    if (best_gt >= 0 && best >= iou_thr) {
      flags[i] = true;
      taken[static_cast<std::size_t>(best_gt)] = true;
    }
  }
  return flags;
}

double average_precision_40(const std::vector<bool>& flags, std::size_t num_gt) {
  if (num_gt == 0) return 0.0;
  double total = 0.0;
  for (const PrPoint& p : interpolated_curve(flags, num_gt)) total += p.precision;
  return total / kRecallPoints;
}

EvalReport evaluate(std::vector<Detection> dets, const std::vector<SceneTruth>& truth, double iou_thr,
                    IouKind kind) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  EvalReport r;
  r.iou_threshold = iou_thr;
  r.num_scenes = truth.size();
  for (const SceneTruth& s : truth) r.num_gt += s.boxes.size();
  r.num_detections = dets.size();
  const auto flags = match_detections(dets, truth, iou_thr, kind);
  r.true_positives = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
  r.ap = average_precision_40(flags, r.num_gt);
  r.pr = interpolated_curve(flags, r.num_gt);
  return r;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "class " << r.label << " AP@40 " << r.ap << " iou " << r.iou_threshold << " scenes " << r.num_scenes
     << " gt " << r.num_gt << " dets " << r.num_detections << " tp " << r.true_positives << '\n';
  for (const PrPoint& p : r.pr) os << "pr " << p.recall << ' ' << p.precision << '\n';
  return os.str();
}

nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json pr = nlohmann::json::array();
  for (const PrPoint& p : r.pr) pr.push_back({{"recall", p.recall}, {"precision", p.precision}});
  return {{"class", r.label},       {"ap40", r.ap},
          {"iou_threshold", r.iou_threshold}, {"scenes", r.num_scenes},
          {"num_gt", r.num_gt},      {"num_detections", r.num_detections},
          {"true_positives", r.true_positives}, {"pr", pr}};
}

}  // namespace hvpr::eval
