#include "iod/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "iod/rng.hpp"

namespace iod {

namespace {

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r1 = 0, g1 = 0, b1 = 0;
    if (hp < 1)      { r1 = c; g1 = x; }
    else if (hp < 2) { r1 = x; g1 = c; }
    else if (hp < 3) { g1 = c; b1 = x; }
    else if (hp < 4) { g1 = x; b1 = c; }
    else if (hp < 5) { r1 = x; b1 = c; }
    else             { r1 = c; b1 = x; }
    const double m = v - c;
    r = r1 + m;
    g = g1 + m;
    b = b1 + m;
}

}  // namespace

SceneSpec SceneSpec::desk_default(int n_categories, int image_size) {
    check_contract(n_categories >= 1, "SceneSpec: need at least one category");
    SceneSpec spec;
    spec.image_size = image_size;
    for (int k = 0; k < n_categories; ++k) {
        CategoryStyle style;
        style.class_id = k;
        hsv_to_rgb(static_cast<double>(k) / n_categories, 0.85, 0.9, style.r, style.g, style.b);
        style.ellipse = (k % 2 == 1);
        spec.palette.push_back(style);
    }
    return spec;
}

void SceneSpec::validate() const {
    check_contract(image_size >= 8, "SceneSpec: image_size too small");
    check_contract(!palette.empty(), "SceneSpec: empty palette");
    check_contract(objects_min >= 0 && objects_max >= objects_min,
                   "SceneSpec: invalid objects range");
    check_contract(min_extent > 0 && max_extent >= min_extent && max_extent <= 1.0,
                   "SceneSpec: invalid extent range");
    for (std::size_t i = 0; i < palette.size(); ++i)
        for (std::size_t j = i + 1; j < palette.size(); ++j) {
            check_contract(palette[i].class_id != palette[j].class_id,
                           "SceneSpec: duplicate class id in palette");
            const bool same_color = palette[i].r == palette[j].r && palette[i].g == palette[j].g &&
                                    palette[i].b == palette[j].b;
            check_contract(!same_color, "SceneSpec: palette colors must be distinct");
        }
    if (cooccurrence_bias.size() > 0) {
        check_contract(
            cooccurrence_bias.rows() == static_cast<Eigen::Index>(palette.size()) &&
                cooccurrence_bias.cols() == static_cast<Eigen::Index>(palette.size()),
            "SceneSpec: bias matrix must be palette-sized");
        check_contract(cooccurrence_bias.minCoeff() >= 0.0,
                       "SceneSpec: bias entries must be nonnegative");
    }
}

int SceneSpec::palette_index(int class_id) const {
    for (std::size_t i = 0; i < palette.size(); ++i)
        if (palette[i].class_id == class_id) return static_cast<int>(i);
    throw ContractError("SceneSpec: class id " + std::to_string(class_id) + " not in palette");
}

std::vector<int> TaskSequence::classes_up_to(int stage) const {
    std::vector<int> out;
    for (int t = 0; t <= stage && t < stage_count(); ++t)
        out.insert(out.end(), stage_classes[t].begin(), stage_classes[t].end());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> TaskSequence::universe() const { return classes_up_to(stage_count() - 1); }

AnnotatedImage generate_scene(const SceneSpec& spec, std::uint64_t rng_seed) {
    spec.validate();
    Rng rng(rng_seed);
    const int s = spec.image_size;
    const int n_cat = static_cast<int>(spec.palette.size());

    Eigen::ArrayXd pixels(static_cast<Eigen::Index>(3) * s * s);
    for (Eigen::Index i = 0; i < pixels.size(); ++i)
        pixels[i] = spec.background + spec.noise * rng.uniform();

    const int n_objects = rng.uniform_int(spec.objects_min, spec.objects_max);

    const bool biased = spec.cooccurrence_bias.size() > 0;
    std::vector<double> weights(n_cat, 1.0);
    if (biased)
        for (int k = 0; k < n_cat; ++k)
            weights[k] = spec.cooccurrence_bias.row(k).sum() + 1e-9;

    // Category choices. With a bias matrix the first two objects are drawn
    // jointly proportional to the pair entry, so generated pair counts track
    // the matrix directly; later objects chain off the previous category.
    std::vector<int> cats(n_objects, 0);
    if (!biased) {
        for (int obj = 0; obj < n_objects; ++obj)
            cats[obj] = static_cast<int>(rng.weighted_index(weights));
    } else if (n_objects >= 1) {
        if (n_objects == 1) {
            cats[0] = static_cast<int>(rng.weighted_index(weights));
        } else {
            std::vector<double> pair_w;
            pair_w.reserve(static_cast<std::size_t>(n_cat) * n_cat);
            for (int i = 0; i < n_cat; ++i)
                for (int j = 0; j < n_cat; ++j)
                    pair_w.push_back(i == j ? 0.0 : spec.cooccurrence_bias(i, j) + 1e-9);
            const int pick = static_cast<int>(rng.weighted_index(pair_w));
            cats[0] = pick / n_cat;
            cats[1] = pick % n_cat;
        }
        for (int obj = 2; obj < n_objects; ++obj) {
            std::vector<double> row(n_cat);
            for (int k = 0; k < n_cat; ++k)
                row[k] = spec.cooccurrence_bias(cats[obj - 1], k) + 1e-9;
            cats[obj] = static_cast<int>(rng.weighted_index(row));
        }
    }

    AnnotatedImage out;
    out.image_id = static_cast<long>(rng_seed);
    std::vector<Box> placed;
    for (int obj = 0; obj < n_objects; ++obj) {
        const CategoryStyle& style = spec.palette[cats[obj]];

        // Sample a placement; retry a few times to limit blob overlap.
        Box box;
        for (int attempt = 0; attempt < 20; ++attempt) {
            const double fw = rng.uniform(spec.min_extent, spec.max_extent);
            const double fh = rng.uniform(spec.min_extent, spec.max_extent);
            const double cx = rng.uniform(fw / 2 + 0.02, 1.0 - fw / 2 - 0.02);
            const double cy = rng.uniform(fh / 2 + 0.02, 1.0 - fh / 2 - 0.02);
            box = Box{cx, cy, fw, fh};
            bool ok = true;
            for (const auto& other : placed)
                if (iou(box, other) > spec.max_overlap_iou) ok = false;
            if (ok) break;
        }
        placed.push_back(box);

        int px0 = static_cast<int>(std::floor(box.x1() * s));
        int py0 = static_cast<int>(std::floor(box.y1() * s));
        int px1 = static_cast<int>(std::ceil(box.x2() * s));
        int py1 = static_cast<int>(std::ceil(box.y2() * s));
        px0 = std::max(0, px0);
        py0 = std::max(0, py0);
        px1 = std::min(s, std::max(px1, px0 + 3));
        py1 = std::min(s, std::max(py1, py0 + 3));

        // Draw and record the tight extent of actually painted pixels.
        int minx = s, miny = s, maxx = -1, maxy = -1;
        const double ecx = (px0 + px1) / 2.0, ecy = (py0 + py1) / 2.0;
        const double ea = (px1 - px0) / 2.0, eb = (py1 - py0) / 2.0;
        for (int y = py0; y < py1; ++y)
            for (int x = px0; x < px1; ++x) {
                if (style.ellipse) {
                    const double dx = (x + 0.5 - ecx) / ea;
                    const double dy = (y + 0.5 - ecy) / eb;
                    if (dx * dx + dy * dy > 1.0) continue;
                }
                pixels[static_cast<Eigen::Index>(0) * s * s + y * s + x] = style.r;
                pixels[static_cast<Eigen::Index>(1) * s * s + y * s + x] = style.g;
                pixels[static_cast<Eigen::Index>(2) * s * s + y * s + x] = style.b;
                minx = std::min(minx, x);
                miny = std::min(miny, y);
                maxx = std::max(maxx, x);
                maxy = std::max(maxy, y);
            }
        if (maxx < minx) continue;  // nothing painted (degenerate placement)

        Box tight = Box::from_corners(static_cast<double>(minx) / s, static_cast<double>(miny) / s,
                                      static_cast<double>(maxx + 1) / s,
                                      static_cast<double>(maxy + 1) / s);
        out.annotations.push_back({tight, style.class_id});
    }

    out.image = Tensor::from_array({3, s, s}, std::move(pixels));
    return out;
}

AnnotatedImage annotate_for_task(const AnnotatedImage& img, const std::set<int>& classes) {
    AnnotatedImage out;
    out.image = img.image;
    out.image_id = img.image_id;
    for (const auto& ann : img.annotations)
        if (classes.count(ann.class_id)) out.annotations.push_back(ann);
    return out;
}

TaskSequence build_task_sequence(const std::vector<int>& universe, const std::vector<int>& split,
                                 std::uint64_t rng_seed) {
    long total = 0;
    for (int sz : split) {
        if (sz <= 0) throw ConfigError("build_task_sequence: stage sizes must be positive");
        total += sz;
    }
    if (total != static_cast<long>(universe.size()))
        throw ConfigError("build_task_sequence: split sizes sum to " + std::to_string(total) +
                          " but universe has " + std::to_string(universe.size()) + " categories");

    std::vector<int> shuffled = universe;
    Rng rng = Rng::substream(rng_seed, "task-split");
    rng.shuffle(shuffled);

    TaskSequence seq;
    std::size_t cursor = 0;
    for (int sz : split) {
        std::vector<int> stage(shuffled.begin() + cursor, shuffled.begin() + cursor + sz);
        std::sort(stage.begin(), stage.end());
        seq.stage_classes.push_back(std::move(stage));
        cursor += sz;
    }
    return seq;
}

std::vector<AnnotatedImage> generate_dataset(const SceneSpec& spec, int count,
                                             std::uint64_t rng_seed, long id_base) {
    std::vector<AnnotatedImage> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        AnnotatedImage img =
            generate_scene(spec, Rng::derive_seed(rng_seed, "scene/" + std::to_string(i)));
        img.image_id = id_base + i;
        out.push_back(std::move(img));
    }
    return out;
}

nlohmann::json scene_spec_to_json(const SceneSpec& spec) {
    nlohmann::json j;
    j["image_size"] = spec.image_size;
    j["objects_min"] = spec.objects_min;
    j["objects_max"] = spec.objects_max;
    j["min_extent"] = spec.min_extent;
    j["max_extent"] = spec.max_extent;
    j["background"] = spec.background;
    j["noise"] = spec.noise;
    j["max_overlap_iou"] = spec.max_overlap_iou;
    j["palette"] = nlohmann::json::array();
    for (const auto& st : spec.palette)
        j["palette"].push_back({{"class_id", st.class_id},
                                {"r", st.r},
                                {"g", st.g},
                                {"b", st.b},
                                {"ellipse", st.ellipse}});
    if (spec.cooccurrence_bias.size() > 0) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index i = 0; i < spec.cooccurrence_bias.rows(); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index k = 0; k < spec.cooccurrence_bias.cols(); ++k)
                row.push_back(spec.cooccurrence_bias(i, k));
            rows.push_back(std::move(row));
        }
        j["cooccurrence_bias"] = std::move(rows);
    }
    return j;
}

SceneSpec scene_spec_from_json(const nlohmann::json& j) {
    SceneSpec spec;
    spec.image_size = j.at("image_size").get<int>();
    spec.objects_min = j.at("objects_min").get<int>();
    spec.objects_max = j.at("objects_max").get<int>();
    spec.min_extent = j.at("min_extent").get<double>();
    spec.max_extent = j.at("max_extent").get<double>();
    spec.background = j.at("background").get<double>();
    spec.noise = j.at("noise").get<double>();
    spec.max_overlap_iou = j.at("max_overlap_iou").get<double>();
    for (const auto& st : j.at("palette"))
        spec.palette.push_back({st.at("class_id").get<int>(), st.at("r").get<double>(),
                                st.at("g").get<double>(), st.at("b").get<double>(),
                                st.at("ellipse").get<bool>()});
    if (j.contains("cooccurrence_bias")) {
        const auto& rows = j.at("cooccurrence_bias");
        const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
        spec.cooccurrence_bias.resize(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index k = 0; k < n; ++k)
                spec.cooccurrence_bias(i, k) = rows[i][k].get<double>();
    }
    spec.validate();
    return spec;
}

CocoDataset dataset_to_coco(const std::vector<AnnotatedImage>& images, const SceneSpec& spec,
                            std::uint64_t rng_seed, long id_base) {
    CocoDataset ds;
    const int s = spec.image_size;
    for (const auto& st : spec.palette)
        ds.categories.push_back({st.class_id, "class_" + std::to_string(st.class_id)});
    long ann_id = 1;
    for (const auto& img : images) {
        char name[32];
        std::snprintf(name, sizeof(name), "synth_%06ld.png", img.image_id);
        ds.images.push_back({img.image_id, name, s, s});
        for (const auto& ann : img.annotations)
            ds.annotations.push_back({ann_id++, img.image_id, ann.class_id,
                                      {ann.box.x1() * s, ann.box.y1() * s, ann.box.w * s,
                                       ann.box.h * s}});
    }
    ds.extensions["synth"] = {{"spec", scene_spec_to_json(spec)},
                              {"seed", rng_seed},
                              {"count", images.size()},
                              {"id_base", id_base}};
    return ds;
}

std::vector<AnnotatedImage> regenerate_from_coco(const CocoDataset& ds) {
    if (!ds.extensions.contains("synth"))
        throw ContractError("regenerate_from_coco: dataset has no synth generation recipe");
    const auto& ext = ds.extensions.at("synth");
    const SceneSpec spec = scene_spec_from_json(ext.at("spec"));
    const std::uint64_t seed = ext.at("seed").get<std::uint64_t>();
    const long id_base = ext.at("id_base").get<long>();
    const int count = ext.at("count").get<int>();
    const int s = spec.image_size;

    std::vector<AnnotatedImage> pool = generate_dataset(spec, count, seed, id_base);
    std::map<long, AnnotatedImage*> by_id;
    for (auto& img : pool) {
        img.annotations.clear();  // the manifest's annotations are authoritative
        by_id[img.image_id] = &img;
    }

    std::vector<AnnotatedImage> out;
    for (const auto& im : ds.images) {
        auto it = by_id.find(im.id);
        if (it == by_id.end())
            throw IntegrityError("regenerate_from_coco: image id " + std::to_string(im.id) +
                                 " is outside the generation recipe");
        out.push_back(*it->second);
    }
    std::map<long, std::size_t> index_of;
    for (std::size_t i = 0; i < out.size(); ++i) index_of[out[i].image_id] = i;
    for (const auto& a : ds.annotations) {
        Box box = Box::from_corners(a.bbox[0] / s, a.bbox[1] / s, (a.bbox[0] + a.bbox[2]) / s,
                                    (a.bbox[1] + a.bbox[3]) / s);
        out[index_of.at(a.image_id)].annotations.push_back({box, a.category_id});
    }
    return out;
}

}  // namespace iod
