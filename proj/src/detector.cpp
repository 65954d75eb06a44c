#include "iod/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "iod/rng.hpp"

namespace iod {

using nlohmann::json;

std::string to_string(const KernelId& id) {
    return id.layer_name + "[" + std::to_string(id.out_channel) + "]";
}

ArchDescriptor ArchDescriptor::desk_default() {
    ArchDescriptor a;
    a.image_size = 32;
    a.image_channels = 3;
    a.embed_dim = 16;
    a.s_max = 0.5;
    a.backbone = {
        {"conv1", 8, 3, 3, 2, 1},
        {"conv2", 16, 8, 3, 2, 1},
        {"conv3", 16, 16, 3, 1, 1},
    };
    return a;
}

int ArchDescriptor::total_stride() const {
    int s = 1;
    for (const auto& c : backbone) s *= c.stride;
    return s;
}

int ArchDescriptor::grid_size() const { return image_size / total_stride(); }

// --- TextPrototypes --------------------------------------------------------

TextPrototypes TextPrototypes::synthetic(const std::vector<int>& ids, int dim,
                                         std::uint64_t seed) {
    TextPrototypes out;
    out.provenance_seed = seed;
    for (int id : ids) {
        check_contract(!out.embeddings.count(id),
                       "TextPrototypes: duplicate class id " + std::to_string(id));
        Rng rng = Rng::substream(seed, "proto", static_cast<std::uint64_t>(id));
        Eigen::ArrayXd v(dim);
        for (int k = 0; k < dim; ++k) v[k] = rng.normal();
        const double norm = std::sqrt((v * v).sum());
        check_contract(norm > 0.0, "TextPrototypes: degenerate draw");
        v /= norm;
        out.class_ids.push_back(id);
        out.embeddings.emplace(id, Tensor::from_array({dim}, v));
    }
    return out;
}

const Tensor& TextPrototypes::embedding(int class_id) const {
    auto it = embeddings.find(class_id);
    check_contract(it != embeddings.end(),
                   "TextPrototypes: unknown class id " + std::to_string(class_id));
    return it->second;
}

TextPrototypes TextPrototypes::subset(const std::vector<int>& ids) const {
    TextPrototypes out;
    out.provenance_seed = provenance_seed;
    for (int id : ids) {
        out.class_ids.push_back(id);
        out.embeddings.emplace(id, embedding(id));
    }
    return out;
}

// --- DetectorModel -----------------------------------------------------------

DetectorModel::DetectorModel(ArchDescriptor arch, std::uint64_t init_seed)
    : arch_(std::move(arch)), init_seed_(init_seed) {
    check_contract(!arch_.backbone.empty(), "DetectorModel: empty backbone");
    check_contract(arch_.image_size % arch_.total_stride() == 0,
                   "DetectorModel: image size not divisible by total stride");

    auto init_conv = [&](const std::string& name, int cout, int cin, int k) {
        Rng rng = Rng::substream(init_seed_, "init/" + name);
        const double scale = std::sqrt(2.0 / (cin * k * k));
        Eigen::ArrayXd w(static_cast<Eigen::Index>(cout) * cin * k * k);
        for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = rng.normal() * scale;
        params_.emplace(name + ".weight", Tensor::from_array({cout, cin, k, k}, std::move(w)));
        params_.emplace(name + ".bias", Tensor::zeros({cout}));
    };

    for (const auto& spec : arch_.backbone)
        init_conv(spec.name, spec.out_channels, spec.in_channels, spec.ksize);
    init_conv("cls_head", arch_.embed_dim, arch_.embed_dim, 1);
    init_conv("reg_head", 4, arch_.embed_dim, 1);
    params_.emplace("eta", Tensor::scalar(1.0));
    params_.emplace("zeta", Tensor::scalar(0.0));
}

bool DetectorModel::has_param(const std::string& name) const { return params_.count(name) > 0; }

Tensor& DetectorModel::param(const std::string& name) {
    auto it = params_.find(name);
    check_contract(it != params_.end(), "DetectorModel: unknown parameter " + name);
    return it->second;
}

const Tensor& DetectorModel::param(const std::string& name) const {
    auto it = params_.find(name);
    check_contract(it != params_.end(), "DetectorModel: unknown parameter " + name);
    return it->second;
}

void DetectorModel::add_class_prototype(int class_id, const Tensor& init) {
    const std::string name = "proto/" + std::to_string(class_id);
    check_contract(!params_.count(name), "DetectorModel: prototype already present for class " +
                                             std::to_string(class_id));
    check_dims(init.shape() == Shape{arch_.embed_dim},
               "add_class_prototype: embedding dim mismatch");
    params_.emplace(name, init.clone_detached(init.requires_grad()));
}

bool DetectorModel::has_class_prototype(int class_id) const {
    return params_.count("proto/" + std::to_string(class_id)) > 0;
}

const Tensor& DetectorModel::class_prototype(int class_id) const {
    return param("proto/" + std::to_string(class_id));
}

std::vector<int> DetectorModel::prototype_class_ids() const {
    std::vector<int> ids;
    for (const auto& [name, t] : params_)
        if (name.rfind("proto/", 0) == 0) ids.push_back(std::stoi(name.substr(6)));
    std::sort(ids.begin(), ids.end());
    return ids;
}

TextPrototypes DetectorModel::prototypes(const std::vector<int>& class_ids) const {
    TextPrototypes out;
    out.provenance_seed = init_seed_;
    for (int id : class_ids) {
        out.class_ids.push_back(id);
        out.embeddings.emplace(id, class_prototype(id));  // shares the parameter tensor
    }
    return out;
}

bool DetectorModel::is_conv_weight(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) return false;
    return name.size() > 7 && name.ends_with(".weight") && it->second.shape().size() == 4;
}

std::vector<KernelId> DetectorModel::conv_kernel_ids() const {
    std::vector<KernelId> ids;
    for (const auto& [name, t] : params_) {
        if (!is_conv_weight(name)) continue;
        const std::string layer = name.substr(0, name.size() - 7);
        for (int c = 0; c < t.dim(0); ++c) ids.push_back({layer, c});
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

void DetectorModel::set_freeze_mask(std::set<KernelId> selected) {
    const auto all = conv_kernel_ids();
    for (const auto& id : selected)
        check_contract(std::binary_search(all.begin(), all.end(), id),
                       "freeze mask: unknown kernel " + to_string(id));
    freeze_mask_ = std::move(selected);
}

void DetectorModel::clear_freeze_mask() { freeze_mask_.reset(); }

void DetectorModel::set_trainable(bool trainable) {
    for (auto& [name, t] : params_) t.set_requires_grad(trainable);
}

void DetectorModel::zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
}

DetectorModel DetectorModel::clone() const {
    DetectorModel out;
    out.arch_ = arch_;
    out.init_seed_ = init_seed_;
    out.freeze_mask_ = freeze_mask_;
    for (const auto& [name, t] : params_)
        out.params_.emplace(name, t.clone_detached(t.requires_grad()));
    return out;
}

// --- forward pipeline ----------------------------------------------------------

Tensor encode_image(const DetectorModel& model, const Tensor& image) {
    const auto& arch = model.arch();
    if (image.shape().size() != 3 || image.dim(0) != arch.image_channels)
        throw DimensionError("encode_image: expected [" + std::to_string(arch.image_channels) +
                             ",H,W], got " + shape_str(image.shape()));
    const int stride = arch.total_stride();
    if (image.dim(1) % stride != 0 || image.dim(2) % stride != 0)
        throw DimensionError("encode_image: spatial dims " + std::to_string(image.dim(1)) + "x" +
                             std::to_string(image.dim(2)) + " not divisible by total stride " +
                             std::to_string(stride));
    Tensor x = image;
    for (const auto& spec : arch.backbone) {
        x = conv2d(x, model.param(spec.name + ".weight"), spec.stride, spec.padding);
        x = channel_bias_add(x, model.param(spec.name + ".bias"));
        x = silu(x);
    }
    return x;
}

Tensor cls_embeddings(const DetectorModel& model, const Tensor& neck) {
    Tensor e = conv2d(neck, model.param("cls_head.weight"), 1, 0);
    return channel_bias_add(e, model.param("cls_head.bias"));
}

Tensor reg_raw(const DetectorModel& model, const Tensor& neck) {
    Tensor r = conv2d(neck, model.param("reg_head.weight"), 1, 0);
    return channel_bias_add(r, model.param("reg_head.bias"));
}

Tensor region_text_scores(const Tensor& embeddings, const TextPrototypes& prototypes,
                          const Tensor& eta, const Tensor& zeta) {
    check_contract(embeddings.shape().size() == 3, "region_text_scores: embeddings must be [D,G,G]");
    const int d = embeddings.dim(0);
    const int gh = embeddings.dim(1), gw = embeddings.dim(2);
    check_contract(prototypes.count() > 0, "region_text_scores: empty prototype set");

    std::vector<Tensor> rows;
    rows.reserve(prototypes.class_ids.size());
    for (int id : prototypes.class_ids) {
        const Tensor& p = prototypes.embedding(id);
        if (p.shape() != Shape{d})
            throw DimensionError("region_text_scores: prototype dim " + shape_str(p.shape()) +
                                 " does not match embedding dim " + std::to_string(d));
        rows.push_back(l2_normalize(p));
    }
    Tensor proto_mat = stack_axis0(rows);                        // [C,D]
    Tensor cells = l2_normalize(embeddings);                     // per-cell unit norm
    Tensor sims = matmul(proto_mat, reshape(cells, {d, gh * gw}));  // [C,G*G]
    Tensor logits = add_scalar(mul_scalar(sims, eta), zeta);
    return reshape(logits, {prototypes.count(), gh, gw});
}

Tensor decode_boxes(const Tensor& raw, double s_max) {
    check_contract(raw.shape().size() == 3 && raw.dim(0) == 4,
                   "decode_boxes: raw head output must be [4,G,G]");
    const int gh = raw.dim(1), gw = raw.dim(2);
    Tensor s = sigmoid(raw);
    Tensor tx = slice_axis0(s, 0);
    Tensor ty = slice_axis0(s, 1);
    Tensor tw = slice_axis0(s, 2);
    Tensor th = slice_axis0(s, 3);

    Eigen::ArrayXd cols(static_cast<Eigen::Index>(gh) * gw), rows(static_cast<Eigen::Index>(gh) * gw);
    for (int i = 0; i < gh; ++i)
        for (int j = 0; j < gw; ++j) {
            cols[static_cast<Eigen::Index>(i) * gw + j] = j;
            rows[static_cast<Eigen::Index>(i) * gw + j] = i;
        }
    Tensor col_t = Tensor::from_array({gh, gw}, cols);
    Tensor row_t = Tensor::from_array({gh, gw}, rows);

    Tensor cx = mul_const(add(tx, col_t), 1.0 / gw);
    Tensor cy = mul_const(add(ty, row_t), 1.0 / gh);
    Tensor w = mul_const(tw, s_max);
    Tensor h = mul_const(th, s_max);
    return stack_axis0({cx, cy, w, h});
}

Tensor regress_boxes(const Tensor& neck, const DetectorModel& model) {
    return decode_boxes(reg_raw(model, neck), model.arch().s_max);
}

Box box_at_cell(const Tensor& decoded, int cell_index) {
    const std::int64_t cells = decoded.size() / 4;
    check_contract(cell_index >= 0 && cell_index < cells, "box_at_cell: cell out of range");
    return Box{decoded[cell_index], decoded[cells + cell_index], decoded[2 * cells + cell_index],
               decoded[3 * cells + cell_index]};
}

std::vector<Detection> nms_per_class(std::vector<Detection> candidates, double nms_iou) {
    // Descending score; equal scores break toward the lower cell index.
    std::sort(candidates.begin(), candidates.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.cell_index != b.cell_index) return a.cell_index < b.cell_index;
        return a.class_id < b.class_id;
    });
    std::vector<Detection> kept;
    std::vector<bool> suppressed(candidates.size(), false);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (suppressed[i]) continue;
        kept.push_back(candidates[i]);
        for (std::size_t j = i + 1; j < candidates.size(); ++j) {
            if (suppressed[j] || candidates[j].class_id != candidates[i].class_id) continue;
            if (iou(candidates[i].box, candidates[j].box) > nms_iou) suppressed[j] = true;
        }
    }
    return kept;
}

std::vector<Detection> detect(const DetectorModel& model, const Tensor& image,
                              const TextPrototypes& vocab, double score_thresh, double nms_iou) {
    check_contract(score_thresh > 0.0 && score_thresh < 1.0, "detect: score_thresh must be in (0,1)");
    check_contract(nms_iou > 0.0 && nms_iou < 1.0, "detect: nms_iou must be in (0,1)");
    NoGradGuard guard;
    Tensor neck = encode_image(model, image);
    Tensor logits = region_text_scores(cls_embeddings(model, neck), vocab, model.eta(), model.zeta());
    Tensor scores = sigmoid(logits);
    Tensor boxes = regress_boxes(neck, model);

    const int c = logits.dim(0);
    const std::int64_t cells = static_cast<std::int64_t>(logits.dim(1)) * logits.dim(2);
    std::vector<Detection> candidates;
    for (int k = 0; k < c; ++k)
        for (std::int64_t cell = 0; cell < cells; ++cell) {
            const double s = scores[k * cells + cell];
            if (s > score_thresh)
                candidates.push_back({box_at_cell(boxes, static_cast<int>(cell)),
                                      vocab.class_ids[k], s, static_cast<int>(cell)});
        }
    return nms_per_class(std::move(candidates), nms_iou);
}

// --- checkpointing ----------------------------------------------------------------

std::string checkpoint_json(const DetectorModel& model) {
    json arch;
    arch["image_size"] = model.arch().image_size;
    arch["image_channels"] = model.arch().image_channels;
    arch["embed_dim"] = model.arch().embed_dim;
    arch["s_max"] = model.arch().s_max;
    arch["backbone"] = json::array();
    for (const auto& c : model.arch().backbone)
        arch["backbone"].push_back({{"name", c.name},
                                    {"out_channels", c.out_channels},
                                    {"in_channels", c.in_channels},
                                    {"ksize", c.ksize},
                                    {"stride", c.stride},
                                    {"padding", c.padding}});

    json params = json::object();
    for (const auto& [name, t] : model.params()) {
        json entry;
        entry["shape"] = t.shape();
        std::vector<double> data(t.data().data(), t.data().data() + t.size());
        entry["data"] = data;
        params[name] = std::move(entry);
    }

    json doc;
    doc["format"] = "iod-checkpoint";
    doc["version"] = 1;
    doc["init_seed"] = model.init_seed();
    doc["arch"] = std::move(arch);
    doc["params"] = std::move(params);
    return doc.dump();
}

DetectorModel checkpoint_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("checkpoint: ") + e.what(), e.byte);
    }
    if (doc.value("format", "") != "iod-checkpoint")
        throw IntegrityError("checkpoint: unexpected format tag");
    if (doc.value("version", 0) != 1)
        throw IntegrityError("checkpoint: unsupported version");

    ArchDescriptor arch;
    const json& a = doc.at("arch");
    arch.image_size = a.at("image_size").get<int>();
    arch.image_channels = a.at("image_channels").get<int>();
    arch.embed_dim = a.at("embed_dim").get<int>();
    arch.s_max = a.at("s_max").get<double>();
    for (const auto& c : a.at("backbone"))
        arch.backbone.push_back({c.at("name").get<std::string>(), c.at("out_channels").get<int>(),
                                 c.at("in_channels").get<int>(), c.at("ksize").get<int>(),
                                 c.at("stride").get<int>(), c.at("padding").get<int>()});

    DetectorModel model(arch, doc.at("init_seed").get<std::uint64_t>());
    // Prototype parameters are created by training, not by the constructor.
    for (const auto& [name, entry] : doc.at("params").items()) {
        Shape shape = entry.at("shape").get<Shape>();
        std::vector<double> data = entry.at("data").get<std::vector<double>>();
        Tensor t = Tensor::from_vector(shape, data);
        if (model.has_param(name))
            model.param(name) = t;
        else if (name.rfind("proto/", 0) == 0)
            model.add_class_prototype(std::stoi(name.substr(6)), t);
        else
            throw IntegrityError("checkpoint: unknown parameter " + name);
    }
    return model;
}

void save_checkpoint(const DetectorModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << checkpoint_json(model);
    if (!out) throw IoError("write failed: " + path);
}

DetectorModel load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return checkpoint_from_json(buf.str());
}

}  // namespace iod
