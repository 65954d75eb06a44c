#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "iod/detector.hpp"
#include "iod/kmeans.hpp"
#include "iod/synth.hpp"
#include "iod/tensor.hpp"

namespace iod {

// Old-model detection kept as soft supervision; s is the raw detection
// confidence and doubles as the training target strength.
struct PseudoLabel {
    Box box;
    int class_id = 0;
    double s = 0.0;
};

struct CprConfig {
    double gamma = 2.0;
    double delta = 1.0;
    double lambda = 0.1;
    double floor_thresh = 0.05;
    double iou_gate = 0.5;
    int kmeans_k = 4;

    void validate() const;
};

// Clusters of general-vocabulary categories acting as stand-in classes for
// unannotated future-task objects. The centroid embedding is the training
// prototype of its super-category.
struct UnknownSuperCategories {
    std::vector<Tensor> centroids;     // each [D]
    std::map<int, int> member_map;     // vocab category -> centroid index
    std::map<int, long> frequencies;   // vocab category -> count in F
    int super_id_base = 10000;

    bool empty() const { return centroids.empty(); }
    int super_id(int centroid_index) const { return super_id_base + centroid_index; }
    TextPrototypes as_prototypes() const;
};

struct DiscoveredForeground {
    Box box;
    int vocab_category = 0;
    double score = 0.0;
};

// All old-model detections on the seen classes above the floor threshold,
// carrying their raw score as s (no hard binarization).
std::vector<PseudoLabel> generate_pseudo_labels(const DetectorModel& old_model,
                                                const Tensor& image,
                                                const std::vector<int>& seen_classes,
                                                const CprConfig& cfg, double nms_iou);

// -|s - p_t|^gamma * log(p_t) + lambda * (1 - s)^delta * H(class_dist).
// p_t is clamped at 1e-12 (diagnostics count the clamp); class_dist must be
// a probability vector.
Tensor enhanced_pseudo_cls_loss(const Tensor& p_t, double s, const Tensor& class_dist,
                                const CprConfig& cfg);

// Entropy in nats of a probability vector, differentiable in the input.
Tensor shannon_entropy(const Tensor& dist);

// Seeded synthetic stand-in for the general vocabulary; ids start at
// id_base and stay disjoint from task categories.
TextPrototypes build_general_vocabulary(int n_common, int n_super, std::uint64_t rng_seed,
                                        int dim, int id_base = 1000);

// Detections against the general vocabulary whose best IoU with any ground
// truth box stays below the gate: the set F of unannotated foreground.
std::vector<DiscoveredForeground> discover_unknown_foreground(
    const DetectorModel& model, const TextPrototypes& vocab, const Tensor& image,
    const std::vector<Annotation>& gt_annotations, double iou_gate, double score_thresh,
    double nms_iou);

// Overlap filter used by discover_unknown_foreground, split out for direct
// testing of the gate semantics.
std::vector<DiscoveredForeground> filter_by_gt_overlap(std::vector<DiscoveredForeground> dets,
                                                       const std::vector<Annotation>& gts,
                                                       double iou_gate);

// Frequency-weighted K-Means over the text embeddings of the discovered
// categories. K must not exceed the number of distinct categories; an empty
// frequency map yields an empty result.
UnknownSuperCategories cluster_unknown_categories(const std::map<int, long>& frequencies,
                                                  const TextPrototypes& vocab_embeddings, int k,
                                                  std::uint64_t rng_seed,
                                                  int super_id_base = 10000);

// Replaces each discovered label with its super-category id.
std::vector<PseudoLabel> relabel_with_super_categories(
    const std::vector<DiscoveredForeground>& fg, const UnknownSuperCategories& supers);

}  // namespace iod
