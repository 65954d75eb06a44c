#pragma once

#include <vector>

#include "iod/detector.hpp"
#include "iod/tensor.hpp"

namespace iod {

struct KdConfig {
    double alpha = 1.0;
    double beta = 1.0;
    bool mean_reduction = false;  // divide each loss by the location count

    void validate() const;
};

// Frozen distillation sources: the previous-stage detector with its classes
// and the current-stage detector with the new classes. Either teacher may
// be absent (e.g. no old teacher at the first incremental stage).
struct TeacherPair {
    const DetectorModel* old_teacher = nullptr;
    std::vector<int> old_classes;
    const DetectorModel* current_teacher = nullptr;
    std::vector<int> current_classes;

    void validate() const;  // frozen teachers, disjoint class sets
};

struct CrossHeadFeatures {
    Tensor embeddings;  // [D,G,G], teacher cls head applied to student neck
    Tensor boxes;       // [4,G,G], teacher reg head decoded on student neck
};

// Runs the frozen teacher's heads on the student's neck features. Gradients
// flow into the student only.
CrossHeadFeatures cross_head_features(const Tensor& student_neck, const DetectorModel& teacher);

// Per-location sigmoid of the teacher's maximal class logit; treated as a
// constant weight map (no gradient into the logits).
Tensor focal_weight(const Tensor& teacher_logits);

// sum_p ||E_teacher(p) - E_student_cross(p)||^2 * w(p)
Tensor cls_kd_loss(const Tensor& e_teacher, const Tensor& e_student_cross, const Tensor& w);

// sum_p (1 - IoU(B_teacher(p), B_student_cross(p))) * w(p); zero-area boxes
// make that location's IoU 0 and bump the degenerate diagnostic.
Tensor reg_kd_loss(const Tensor& b_teacher, const Tensor& b_student_cross, const Tensor& w);

// alpha * cls + beta * reg, summed over both teachers; each teacher routes
// through its own head and its own class prototypes.
Tensor cakd_loss(const DetectorModel& student, const TeacherPair& teachers, const Tensor& image,
                 const KdConfig& cfg);

}  // namespace iod
