#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "iod/box.hpp"
#include "iod/tensor.hpp"

namespace iod {

// Addresses one output-channel filter of a named convolution layer -- the
// granularity at which importance is estimated and freezing applies.
struct KernelId {
    std::string layer_name;
    int out_channel = 0;

    auto operator<=>(const KernelId&) const = default;
};

std::string to_string(const KernelId& id);

struct ConvSpec {
    std::string name;
    int out_channels = 0;
    int in_channels = 0;
    int ksize = 3;
    int stride = 1;
    int padding = 1;
};

// Fixed desk-scale architecture: a small strided conv backbone producing a
// D-dim embedding per grid cell, a 1x1 conv classification-embedding head
// and a 1x1 conv box regression head.
struct ArchDescriptor {
    int image_size = 32;
    int image_channels = 3;
    int embed_dim = 16;
    double s_max = 0.5;
    std::vector<ConvSpec> backbone;

    static ArchDescriptor desk_default();

    int total_stride() const;
    int grid_size() const;  // image_size / total_stride
};

// Per-class text prototype embeddings. Tensors may alias a model's trained
// prototype parameters; synthetic() draws fresh seeded unit vectors.
struct TextPrototypes {
    std::vector<int> class_ids;            // ordered; defines logit channel order
    std::map<int, Tensor> embeddings;      // class id -> [D]
    std::uint64_t provenance_seed = 0;

    static TextPrototypes synthetic(const std::vector<int>& ids, int dim, std::uint64_t seed);

    int count() const { return static_cast<int>(class_ids.size()); }
    const Tensor& embedding(int class_id) const;
    TextPrototypes subset(const std::vector<int>& ids) const;
};

struct Detection {
    Box box;
    int class_id = 0;
    double score = 0.0;
    int cell_index = 0;  // flat grid cell that produced it (NMS tie-break)
};

struct DetectSettings {
    double score_thresh = 0.25;
    double nms_iou = 0.5;
};

// Named parameter store plus the architecture that interprets it. Cloned
// per stage; teachers are clones with gradients disabled.
class DetectorModel {
  public:
    DetectorModel() = default;
    DetectorModel(ArchDescriptor arch, std::uint64_t init_seed);

    const ArchDescriptor& arch() const { return arch_; }
    std::uint64_t init_seed() const { return init_seed_; }

    bool has_param(const std::string& name) const;
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    const std::map<std::string, Tensor>& params() const { return params_; }

    Tensor& eta() { return param("eta"); }
    Tensor& zeta() { return param("zeta"); }
    const Tensor& eta() const { return param("eta"); }
    const Tensor& zeta() const { return param("zeta"); }

    // Prototypes for classes this model has been trained on live in the
    // parameter store as "proto/<class_id>".
    void add_class_prototype(int class_id, const Tensor& init);
    bool has_class_prototype(int class_id) const;
    const Tensor& class_prototype(int class_id) const;
    std::vector<int> prototype_class_ids() const;
    TextPrototypes prototypes(const std::vector<int>& class_ids) const;

    // All (layer, out_channel) pairs of every conv parameter, in the total
    // KernelId order.
    std::vector<KernelId> conv_kernel_ids() const;
    bool is_conv_weight(const std::string& name) const;

    // When set, only the listed kernels may be updated by an optimizer;
    // every other conv kernel must stay bit-identical. Non-conv parameters
    // are unaffected.
    void set_freeze_mask(std::set<KernelId> selected);
    void clear_freeze_mask();
    const std::optional<std::set<KernelId>>& freeze_mask() const { return freeze_mask_; }

    void set_trainable(bool trainable);
    void zero_grads();
    DetectorModel clone() const;

  private:
    ArchDescriptor arch_;
    std::uint64_t init_seed_ = 0;
    std::map<std::string, Tensor> params_;
    std::optional<std::set<KernelId>> freeze_mask_;
};

// --- forward pipeline ----------------------------------------------------

// Backbone pass: [3,H,W] -> neck features [D,G,G]. H and W must be
// divisible by the backbone's total stride.
Tensor encode_image(const DetectorModel& model, const Tensor& image);

// Classification head: neck features -> region embeddings [D,G,G].
Tensor cls_embeddings(const DetectorModel& model, const Tensor& neck);

// Raw regression head output [4,G,G] (pre-decode).
Tensor reg_raw(const DetectorModel& model, const Tensor& neck);

// Region-text matching: logit(j, cell) = eta * <Norm(e_cell), Norm(p_j)> + zeta.
Tensor region_text_scores(const Tensor& embeddings, const TextPrototypes& prototypes,
                          const Tensor& eta, const Tensor& zeta);

// Decodes raw head output to (cx, cy, w, h) maps [4,G,G]; centers are
// sigmoid-anchored inside their cell, sizes sigmoid-bounded by s_max.
Tensor decode_boxes(const Tensor& raw, double s_max);

// Convenience: neck -> decoded boxes.
Tensor regress_boxes(const Tensor& neck, const DetectorModel& model);

Box box_at_cell(const Tensor& decoded, int cell_index);

// Full inference: thresholded sigmoid scores, per-class NMS, detections
// sorted by descending score (ties broken by lower cell index).
std::vector<Detection> detect(const DetectorModel& model, const Tensor& image,
                              const TextPrototypes& vocab, double score_thresh, double nms_iou);

std::vector<Detection> nms_per_class(std::vector<Detection> candidates, double nms_iou);

// --- checkpointing ---------------------------------------------------------

void save_checkpoint(const DetectorModel& model, const std::string& path);
DetectorModel load_checkpoint(const std::string& path);
std::string checkpoint_json(const DetectorModel& model);
DetectorModel checkpoint_from_json(const std::string& text);

}  // namespace iod
