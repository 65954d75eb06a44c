#include "iod/cakd.hpp"

#include <cmath>
#include <set>

#include "iod/diagnostics.hpp"

namespace iod {

void KdConfig::validate() const {
    check_contract(alpha >= 0.0, "KdConfig: alpha must be >= 0");
    check_contract(beta >= 0.0, "KdConfig: beta must be >= 0");
}

void TeacherPair::validate() const {
    check_contract(old_teacher != nullptr || current_teacher != nullptr,
                   "TeacherPair: at least one teacher required");
    auto check_frozen = [](const DetectorModel& m, const char* which) {
        for (const auto& [name, t] : m.params())
            check_contract(!t.requires_grad(),
                           std::string("TeacherPair: ") + which + " teacher parameter " + name +
                               " must be frozen");
    };
    if (old_teacher) check_frozen(*old_teacher, "old");
    if (current_teacher) check_frozen(*current_teacher, "current");
    std::set<int> old_set(old_classes.begin(), old_classes.end());
    for (int c : current_classes)
        check_contract(!old_set.count(c),
                       "TeacherPair: class " + std::to_string(c) + " appears in both teachers");
}

CrossHeadFeatures cross_head_features(const Tensor& student_neck, const DetectorModel& teacher) {
    check_contract(student_neck.shape().size() == 3, "cross_head_features: neck must be [D,G,G]");
    if (student_neck.dim(0) != teacher.arch().embed_dim)
        throw DimensionError("cross_head_features: student feature dim " +
                             std::to_string(student_neck.dim(0)) +
                             " does not match teacher embed dim " +
                             std::to_string(teacher.arch().embed_dim));
    CrossHeadFeatures out;
    out.embeddings = cls_embeddings(teacher, student_neck);
    out.boxes = decode_boxes(reg_raw(teacher, student_neck), teacher.arch().s_max);
    return out;
}

Tensor focal_weight(const Tensor& teacher_logits) {
    check_contract(teacher_logits.shape().size() == 3 && teacher_logits.dim(0) >= 1,
                   "focal_weight: logits must be [C,G,G] with C >= 1");
    const int c = teacher_logits.dim(0);
    const int gh = teacher_logits.dim(1), gw = teacher_logits.dim(2);
    const std::int64_t cells = static_cast<std::int64_t>(gh) * gw;
    Eigen::ArrayXd w(cells);
    for (std::int64_t p = 0; p < cells; ++p) {
        double m = teacher_logits[p];
        for (int k = 1; k < c; ++k) m = std::max(m, teacher_logits[k * cells + p]);
        w[p] = 1.0 / (1.0 + std::exp(-m));
    }
    return Tensor::from_array({gh, gw}, std::move(w));
}

Tensor cls_kd_loss(const Tensor& e_teacher, const Tensor& e_student_cross, const Tensor& w) {
    if (e_teacher.shape() != e_student_cross.shape())
        throw DimensionError("cls_kd_loss: embedding shapes disagree");
    check_contract(e_teacher.shape().size() == 3, "cls_kd_loss: embeddings must be [D,G,G]");
    const int d = e_teacher.dim(0);
    const std::int64_t cells = e_teacher.size() / d;
    check_contract(w.size() == cells, "cls_kd_loss: weight map size mismatch");

    Tensor diff = sub(e_teacher, e_student_cross);
    Tensor sq = mul(diff, diff);
    // Broadcast the constant weight map over the channel axis.
    Eigen::ArrayXd tiled(sq.size());
    for (int k = 0; k < d; ++k) tiled.segment(k * cells, cells) = w.data();
    return sum(mul(sq, Tensor::from_array(e_teacher.shape(), std::move(tiled))));
}

namespace {
struct CornerMaps {
    Tensor x1, y1, x2, y2, area;
};

CornerMaps corner_maps(const Tensor& boxes) {
    Tensor cx = slice_axis0(boxes, 0);
    Tensor cy = slice_axis0(boxes, 1);
    Tensor w = slice_axis0(boxes, 2);
    Tensor h = slice_axis0(boxes, 3);
    CornerMaps m;
    m.x1 = sub(cx, mul_const(w, 0.5));
    m.y1 = sub(cy, mul_const(h, 0.5));
    m.x2 = add(cx, mul_const(w, 0.5));
    m.y2 = add(cy, mul_const(h, 0.5));
    m.area = mul(w, h);
    return m;
}
}  // namespace

Tensor reg_kd_loss(const Tensor& b_teacher, const Tensor& b_student_cross, const Tensor& w) {
    if (b_teacher.shape() != b_student_cross.shape())
        throw DimensionError("reg_kd_loss: box map shapes disagree");
    check_contract(b_teacher.shape().size() == 3 && b_teacher.dim(0) == 4,
                   "reg_kd_loss: boxes must be [4,G,G]");
    const std::int64_t cells = b_teacher.size() / 4;
    check_contract(w.size() == cells, "reg_kd_loss: weight map size mismatch");
    const Shape map_shape{b_teacher.dim(1), b_teacher.dim(2)};

    // Locations where either box has no area take IoU = 0 by definition.
    Eigen::ArrayXd valid(cells);
    std::uint64_t degenerate = 0;
    for (std::int64_t p = 0; p < cells; ++p) {
        const double area_t = b_teacher[2 * cells + p] * b_teacher[3 * cells + p];
        const double area_s = b_student_cross[2 * cells + p] * b_student_cross[3 * cells + p];
        const bool ok = area_t > 0.0 && area_s > 0.0;
        valid[p] = ok ? 1.0 : 0.0;
        if (!ok) ++degenerate;
    }
    if (degenerate)
        diagnostics().degenerate_iou.fetch_add(degenerate, std::memory_order_relaxed);

    CornerMaps t = corner_maps(b_teacher);
    CornerMaps s = corner_maps(b_student_cross);
    Tensor iw = relu(sub(minimum(t.x2, s.x2), maximum(t.x1, s.x1)));
    Tensor ih = relu(sub(minimum(t.y2, s.y2), maximum(t.y1, s.y1)));
    Tensor inter = mul(iw, ih);
    Tensor uni = sub(add(t.area, s.area), inter);

    Tensor valid_t = Tensor::from_array(map_shape, valid);
    // Shift degenerate denominators away from zero; those cells are masked
    // to IoU 0 afterwards anyway.
    Tensor safe_uni = add(uni, Tensor::from_array(map_shape, Eigen::ArrayXd(1.0 - valid)));
    Tensor iou_map = mul(div(inter, safe_uni), valid_t);
    return sum(mul(rsub_const(1.0, iou_map), w));
}

Tensor cakd_loss(const DetectorModel& student, const TeacherPair& teachers, const Tensor& image,
                 const KdConfig& cfg) {
    cfg.validate();
    teachers.validate();

    Tensor student_neck = encode_image(student, image);
    const double cells = static_cast<double>(student_neck.dim(1)) * student_neck.dim(2);
    const double norm = cfg.mean_reduction ? 1.0 / cells : 1.0;

    Tensor total = Tensor::zeros({1});
    auto add_teacher = [&](const DetectorModel& teacher, const std::vector<int>& classes) {
        if (classes.empty()) return;
        Tensor e_teacher, b_teacher, w;
        {
            NoGradGuard guard;  // the teacher side is all constants
            Tensor t_neck = encode_image(teacher, image);
            e_teacher = cls_embeddings(teacher, t_neck);
            b_teacher = decode_boxes(reg_raw(teacher, t_neck), teacher.arch().s_max);
            Tensor logits = region_text_scores(e_teacher, teacher.prototypes(classes),
                                               teacher.eta(), teacher.zeta());
            w = focal_weight(logits);
        }
        CrossHeadFeatures cross = cross_head_features(student_neck, teacher);
        Tensor cls = cls_kd_loss(e_teacher, cross.embeddings, w);
        Tensor reg = reg_kd_loss(b_teacher, cross.boxes, w);
        total = add(total, add(mul_const(cls, cfg.alpha * norm), mul_const(reg, cfg.beta * norm)));
    };

    if (teachers.old_teacher) add_teacher(*teachers.old_teacher, teachers.old_classes);
    if (teachers.current_teacher) add_teacher(*teachers.current_teacher, teachers.current_classes);
    return total;
}

}  // namespace iod
