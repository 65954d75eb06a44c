#pragma once

#include <map>
#include <string>
#include <vector>

#include "iod/box.hpp"
#include "iod/errors.hpp"

namespace iod {

// One scored detection attributed to an evaluation image. Class identity is
// handled outside: average_precision works on a single class at a time.
struct EvalDetection {
    long image_id = 0;
    Box box;
    double score = 0.0;
};

struct EvalGroundTruth {
    long image_id = 0;
    Box box;
};

// COCO-style thresholds 0.50 .. 0.95 step 0.05.
std::vector<double> coco_iou_thresholds();

// Greedy matching (highest score first, one match per ground-truth box,
// match iff IoU >= thresh), then area under the 101-point interpolated
// precision-recall curve. No ground truth: indeterminate, caller excludes.
double average_precision(std::vector<EvalDetection> detections,
                         const std::vector<EvalGroundTruth>& gts, double iou_thresh);

struct EvalResult {
    // class id -> AP per threshold (same order as coco_iou_thresholds()).
    std::map<int, std::vector<double>> per_class;
    std::vector<int> absent_classes;  // no ground truth; excluded from means

    double class_ap(int class_id) const;          // mean over thresholds
    double class_ap50(int class_id) const;
    double map() const;                            // mean over evaluated classes
    double ap50() const;
    double ap75() const;
    // Mean AP over an id subset; classes without ground truth are skipped.
    double group_ap(const std::vector<int>& class_ids) const;
};

// detections/gts keyed by class id.
EvalResult evaluate_detections(const std::map<int, std::vector<EvalDetection>>& detections,
                               const std::map<int, std::vector<EvalGroundTruth>>& gts);

struct GapMetrics {
    double abs_gap = 0.0;
    double rel_gap = 0.0;  // fraction of the joint AP
};

// AbsGap = ap_joint - ap_incremental; RelGap = AbsGap / ap_joint.
GapMetrics gap_metrics(double ap_incremental, double ap_joint);

// "52.4" style fixed precision used in text tables (AP x100, 1 decimal).
std::string format_ap(double ap);

}  // namespace iod
