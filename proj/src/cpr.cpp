#include "iod/cpr.hpp"

#include <algorithm>
#include <cmath>

#include "iod/diagnostics.hpp"
#include "iod/rng.hpp"

namespace iod {

void CprConfig::validate() const {
    check_contract(gamma >= 0.0, "CprConfig: gamma must be >= 0");
    check_contract(delta >= 0.0, "CprConfig: delta must be >= 0");
    check_contract(lambda >= 0.0, "CprConfig: lambda must be >= 0");
    check_contract(floor_thresh >= 0.0 && floor_thresh < 1.0,
                   "CprConfig: floor_thresh must be in [0,1)");
    check_contract(iou_gate > 0.0 && iou_gate < 1.0, "CprConfig: iou_gate must be in (0,1)");
    check_contract(kmeans_k >= 1, "CprConfig: kmeans_k must be positive");
}

TextPrototypes UnknownSuperCategories::as_prototypes() const {
    TextPrototypes out;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const int id = super_id(static_cast<int>(c));
        out.class_ids.push_back(id);
        out.embeddings.emplace(id, centroids[c]);
    }
    return out;
}

std::vector<PseudoLabel> generate_pseudo_labels(const DetectorModel& old_model,
                                                const Tensor& image,
                                                const std::vector<int>& seen_classes,
                                                const CprConfig& cfg, double nms_iou) {
    cfg.validate();
    if (seen_classes.empty()) return {};
    for (int id : seen_classes)
        check_contract(old_model.has_class_prototype(id),
                       "generate_pseudo_labels: old model was not trained on class " +
                           std::to_string(id));
    // detect() requires a threshold strictly inside (0,1); a zero floor
    // keeps everything with positive score.
    const double thresh = std::max(cfg.floor_thresh, 1e-9);
    auto detections =
        detect(old_model, image, old_model.prototypes(seen_classes), thresh, nms_iou);
    std::vector<PseudoLabel> out;
    out.reserve(detections.size());
    for (const auto& det : detections) out.push_back({det.box, det.class_id, det.score});
    return out;
}

Tensor shannon_entropy(const Tensor& dist) {
    Tensor safe = clamp_min(dist, 1e-12);
    return neg(sum(mul(dist, log(safe))));
}

Tensor enhanced_pseudo_cls_loss(const Tensor& p_t, double s, const Tensor& class_dist,
                                const CprConfig& cfg) {
    cfg.validate();
    check_contract(p_t.size() == 1, "enhanced_pseudo_cls_loss: p_t must be scalar");
    check_contract(s >= 0.0 && s <= 1.0, "enhanced_pseudo_cls_loss: s must be in [0,1]");
    check_contract(p_t.value() <= 1.0, "enhanced_pseudo_cls_loss: p_t must be a probability");
    double mass = 0.0;
    for (std::int64_t i = 0; i < class_dist.size(); ++i) {
        check_contract(class_dist[i] >= 0.0,
                       "enhanced_pseudo_cls_loss: class_dist entries must be nonnegative");
        mass += class_dist[i];
    }
    check_contract(std::abs(mass - 1.0) < 1e-6, "enhanced_pseudo_cls_loss: class_dist must sum to 1");

    if (p_t.value() < 1e-12)
        diagnostics().log_prob_clamps.fetch_add(1, std::memory_order_relaxed);
    Tensor p = clamp_min(p_t, 1e-12);

    Tensor gap = abs(rsub_const(s, p));                       // |s - p_t|
    Tensor term1 = mul(pow_const(gap, cfg.gamma), neg(log(p)));
    const double reg_weight = cfg.lambda * std::pow(1.0 - s, cfg.delta);
    Tensor term2 = mul_const(shannon_entropy(class_dist), reg_weight);
    return add(term1, term2);
}

TextPrototypes build_general_vocabulary(int n_common, int n_super, std::uint64_t rng_seed,
                                        int dim, int id_base) {
    check_contract(n_common >= 0 && n_super >= 0,
                   "build_general_vocabulary: counts must be nonnegative");
    std::vector<int> ids;
    for (int i = 0; i < n_common + n_super; ++i) ids.push_back(id_base + i);
    return TextPrototypes::synthetic(ids, dim, Rng::derive_seed(rng_seed, "general-vocab"));
}

std::vector<DiscoveredForeground> filter_by_gt_overlap(std::vector<DiscoveredForeground> dets,
                                                       const std::vector<Annotation>& gts,
                                                       double iou_gate) {
    check_contract(iou_gate > 0.0 && iou_gate < 1.0, "filter_by_gt_overlap: gate must be in (0,1)");
    std::vector<DiscoveredForeground> kept;
    for (auto& d : dets) {
        double best = 0.0;
        for (const auto& g : gts) best = std::max(best, iou(d.box, g.box));
        if (best < iou_gate) kept.push_back(std::move(d));
    }
    return kept;
}

std::vector<DiscoveredForeground> discover_unknown_foreground(
    const DetectorModel& model, const TextPrototypes& vocab, const Tensor& image,
    const std::vector<Annotation>& gt_annotations, double iou_gate, double score_thresh,
    double nms_iou) {
    if (vocab.count() == 0) return {};
    auto detections = detect(model, image, vocab, score_thresh, nms_iou);
    std::vector<DiscoveredForeground> fg;
    fg.reserve(detections.size());
    for (const auto& det : detections) fg.push_back({det.box, det.class_id, det.score});
    return filter_by_gt_overlap(std::move(fg), gt_annotations, iou_gate);
}

UnknownSuperCategories cluster_unknown_categories(const std::map<int, long>& frequencies,
                                                  const TextPrototypes& vocab_embeddings, int k,
                                                  std::uint64_t rng_seed, int super_id_base) {
    UnknownSuperCategories out;
    out.super_id_base = super_id_base;
    out.frequencies = frequencies;
    if (frequencies.empty()) return out;
    check_contract(k >= 1 && k <= static_cast<int>(frequencies.size()),
                   "cluster_unknown_categories: need 1 <= K <= |C_F|");

    std::vector<int> cats;
    std::vector<double> weights;
    for (const auto& [cat, count] : frequencies) {  // std::map: ascending, deterministic
        check_contract(count > 0, "cluster_unknown_categories: nonpositive frequency");
        cats.push_back(cat);
        weights.push_back(static_cast<double>(count));
    }

    const int dim = vocab_embeddings.embedding(cats[0]).dim(0);
    Eigen::MatrixXd points(cats.size(), dim);
    for (std::size_t i = 0; i < cats.size(); ++i) {
        const auto& e = vocab_embeddings.embedding(cats[i]).data();
        for (int d = 0; d < dim; ++d) points(static_cast<Eigen::Index>(i), d) = e[d];
    }

    auto result = weighted_kmeans(points, weights, k, Rng::derive_seed(rng_seed, "unknown-kmeans"));
    for (int c = 0; c < k; ++c) {
        Eigen::ArrayXd row(dim);
        for (int d = 0; d < dim; ++d) row[d] = result.centroids(c, d);
        out.centroids.push_back(Tensor::from_array({dim}, row));
    }
    for (std::size_t i = 0; i < cats.size(); ++i) out.member_map[cats[i]] = result.assignment[i];
    return out;
}

std::vector<PseudoLabel> relabel_with_super_categories(
    const std::vector<DiscoveredForeground>& fg, const UnknownSuperCategories& supers) {
    if (fg.empty()) return {};
    check_contract(!supers.empty(),
                   "relabel_with_super_categories: empty super-category set for nonempty F");
    std::vector<PseudoLabel> out;
    out.reserve(fg.size());
    for (const auto& d : fg) {
        auto it = supers.member_map.find(d.vocab_category);
        check_contract(it != supers.member_map.end(),
                       "relabel_with_super_categories: category " +
                           std::to_string(d.vocab_category) + " was never clustered");
        out.push_back({d.box, supers.super_id(it->second), d.score});
    }
    return out;
}

}  // namespace iod
