#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <set>
#include <vector>

#include "iod/box.hpp"
#include "iod/coco.hpp"
#include "iod/tensor.hpp"

namespace iod {

// Visual signature of one category: a unique hue plus a blob shape.
struct CategoryStyle {
    int class_id = 0;
    double r = 0.0, g = 0.0, b = 0.0;
    bool ellipse = false;
};

struct SceneSpec {
    int image_size = 32;
    std::vector<CategoryStyle> palette;
    int objects_min = 1;
    int objects_max = 3;
    double min_extent = 0.15;  // blob size as a fraction of the image
    double max_extent = 0.35;
    double background = 0.08;
    double noise = 0.02;
    double max_overlap_iou = 0.3;
    // Optional co-occurrence bias over palette positions; size 0 disables it.
    Eigen::MatrixXd cooccurrence_bias;

    // Evenly spaced hues, shapes alternating rectangle/ellipse.
    static SceneSpec desk_default(int n_categories, int image_size = 32);

    void validate() const;
    int palette_index(int class_id) const;
};

struct Annotation {
    Box box;
    int class_id = 0;
};

struct AnnotatedImage {
    Tensor image;  // [3,S,S], values in [0,1]
    std::vector<Annotation> annotations;
    long image_id = 0;
};

// Ordered disjoint category sets, one per incremental stage.
struct TaskSequence {
    std::vector<std::vector<int>> stage_classes;

    int stage_count() const { return static_cast<int>(stage_classes.size()); }
    std::vector<int> classes_up_to(int stage) const;  // union of stages [0, stage]
    std::vector<int> universe() const;
};

// Renders seeded axis-aligned blobs; each annotation box tightly bounds the
// drawn pixels of its blob. Pure in (spec, seed).
AnnotatedImage generate_scene(const SceneSpec& spec, std::uint64_t rng_seed);

// Keeps only annotations whose class is in the given set; pixels untouched.
AnnotatedImage annotate_for_task(const AnnotatedImage& img, const std::set<int>& classes);

// Disjoint ordered partition of the universe into |split| stages.
TaskSequence build_task_sequence(const std::vector<int>& universe, const std::vector<int>& split,
                                 std::uint64_t rng_seed);

std::vector<AnnotatedImage> generate_dataset(const SceneSpec& spec, int count,
                                             std::uint64_t rng_seed, long id_base = 1);

// COCO-format export; a "synth" extension block records the generation
// recipe so images can be regenerated from annotations alone.
CocoDataset dataset_to_coco(const std::vector<AnnotatedImage>& images, const SceneSpec& spec,
                            std::uint64_t rng_seed, long id_base = 1);
std::vector<AnnotatedImage> regenerate_from_coco(const CocoDataset& ds);

nlohmann::json scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const nlohmann::json& j);

}  // namespace iod
