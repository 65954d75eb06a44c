#include "iod/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "iod/errors.hpp"

namespace iod {

std::vector<double> coco_iou_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
    return t;
}

double average_precision(std::vector<EvalDetection> detections,
                         const std::vector<EvalGroundTruth>& gts, double iou_thresh) {
    check_contract(!gts.empty(), "average_precision: no ground truth for this class");
    if (detections.empty()) return 0.0;

    std::stable_sort(detections.begin(), detections.end(),
                     [](const EvalDetection& a, const EvalDetection& b) {
                         if (a.score != b.score) return a.score > b.score;
                         return a.image_id < b.image_id;
                     });

    std::vector<bool> matched(gts.size(), false);
    const std::size_t npos = gts.size();
    std::vector<double> precision, recall;
    std::size_t tp = 0, fp = 0;
    for (const auto& det : detections) {
        double best = 0.0;
        std::size_t best_idx = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (matched[g] || gts[g].image_id != det.image_id) continue;
            const double v = iou(det.box, gts[g].box);
            if (v > best) {
                best = v;
                best_idx = g;
            }
        }
        if (best_idx < gts.size() && best >= iou_thresh) {
            matched[best_idx] = true;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(npos));
    }

    // 101-point interpolation: mean over recall grid of the max precision at
    // recall >= r.
    double ap = 0.0;
    for (int k = 0; k <= 100; ++k) {
        const double r = static_cast<double>(k) / 100.0;
        double best_p = 0.0;
        for (std::size_t i = 0; i < precision.size(); ++i)
            if (recall[i] >= r && precision[i] > best_p) best_p = precision[i];
        ap += best_p;
    }
    return ap / 101.0;
}

double EvalResult::class_ap(int class_id) const {
    auto it = per_class.find(class_id);
    check_contract(it != per_class.end(), "EvalResult: class not evaluated");
    double acc = 0.0;
    for (double v : it->second) acc += v;
    return acc / static_cast<double>(it->second.size());
}

double EvalResult::class_ap50(int class_id) const {
    auto it = per_class.find(class_id);
    check_contract(it != per_class.end(), "EvalResult: class not evaluated");
    return it->second.front();
}

double EvalResult::map() const {
    check_contract(!per_class.empty(), "EvalResult: nothing evaluated");
    double acc = 0.0;
    for (const auto& [id, aps] : per_class) acc += class_ap(id);
    return acc / static_cast<double>(per_class.size());
}

double EvalResult::ap50() const {
    double acc = 0.0;
    for (const auto& [id, aps] : per_class) acc += aps.front();
    return acc / static_cast<double>(per_class.size());
}

double EvalResult::ap75() const {
    double acc = 0.0;
    for (const auto& [id, aps] : per_class) acc += aps[5];
    return acc / static_cast<double>(per_class.size());
}

double EvalResult::group_ap(const std::vector<int>& class_ids) const {
    double acc = 0.0;
    int n = 0;
    for (int id : class_ids) {
        if (!per_class.count(id)) continue;
        acc += class_ap(id);
        ++n;
    }
    check_contract(n > 0, "EvalResult: group has no evaluated class");
    return acc / n;
}

EvalResult evaluate_detections(const std::map<int, std::vector<EvalDetection>>& detections,
                               const std::map<int, std::vector<EvalGroundTruth>>& gts) {
    EvalResult result;
    const auto thresholds = coco_iou_thresholds();
    for (const auto& [class_id, gt] : gts) {
        if (gt.empty()) {
            result.absent_classes.push_back(class_id);
            continue;
        }
        std::vector<EvalDetection> dets;
        if (auto it = detections.find(class_id); it != detections.end()) dets = it->second;
        std::vector<double> aps;
        aps.reserve(thresholds.size());
        for (double t : thresholds) aps.push_back(average_precision(dets, gt, t));
        result.per_class.emplace(class_id, std::move(aps));
    }
    return result;
}

GapMetrics gap_metrics(double ap_incremental, double ap_joint) {
    check_contract(ap_joint > 0.0, "gap_metrics: joint AP must be positive");
    GapMetrics g;
    g.abs_gap = ap_joint - ap_incremental;
    g.rel_gap = g.abs_gap / ap_joint;
    return g;
}

std::string format_ap(double ap) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", ap * 100.0);
    return buf;
}

}  // namespace iod
