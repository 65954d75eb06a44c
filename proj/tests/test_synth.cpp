#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iod/rng.hpp"
#include "iod/synth.hpp"

using namespace iod;

namespace {

// Spearman rank correlation with average ranks for ties.
double spearman(std::vector<double> a, std::vector<double> b) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(v.size());
        std::size_t i = 0;
        while (i < idx.size()) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    std::vector<double> ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("forced object count yields exactly one annotation") {
    SceneSpec spec = SceneSpec::desk_default(4);
    spec.objects_min = spec.objects_max = 1;
    AnnotatedImage img = generate_scene(spec, 77);
    CHECK(img.annotations.size() == 1);
}

TEST_CASE("same seed reproduces the scene byte for byte") {
    SceneSpec spec = SceneSpec::desk_default(6);
    AnnotatedImage a = generate_scene(spec, 123);
    AnnotatedImage b = generate_scene(spec, 123);
    REQUIRE(a.image.size() == b.image.size());
    for (int i = 0; i < a.image.size(); ++i) CHECK(a.image[i] == b.image[i]);
    REQUIRE(a.annotations.size() == b.annotations.size());
    for (std::size_t i = 0; i < a.annotations.size(); ++i) {
        CHECK(a.annotations[i].class_id == b.annotations[i].class_id);
        CHECK(a.annotations[i].box.cx == b.annotations[i].box.cx);
        CHECK(a.annotations[i].box.w == b.annotations[i].box.w);
    }
}

TEST_CASE("blob pixel centroid lies inside its annotation box") {
    SceneSpec spec = SceneSpec::desk_default(8);
    spec.objects_min = spec.objects_max = 1;
    spec.noise = 0.0;
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        AnnotatedImage img = generate_scene(spec, seed);
        REQUIRE(img.annotations.size() == 1);
        const int s = spec.image_size;
        double sx = 0, sy = 0;
        long count = 0;
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                if (img.image[y * s + x] != spec.background) {  // painted pixel (red channel)
                    sx += x + 0.5;
                    sy += y + 0.5;
                    ++count;
                }
            }
        REQUIRE(count > 0);
        const double cx = sx / count / s, cy = sy / count / s;
        const Box& b = img.annotations[0].box;
        CHECK(cx >= b.x1());
        CHECK(cx <= b.x2());
        CHECK(cy >= b.y1());
        CHECK(cy <= b.y2());
    }
}

TEST_CASE("annotation boxes stay inside the unit square") {
    SceneSpec spec = SceneSpec::desk_default(8);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        AnnotatedImage img = generate_scene(spec, seed);
        for (const auto& ann : img.annotations) {
            CHECK(ann.box.x1() >= 0.0);
            CHECK(ann.box.y1() >= 0.0);
            CHECK(ann.box.x2() <= 1.0);
            CHECK(ann.box.y2() <= 1.0);
            CHECK(ann.box.w > 0.0);
            CHECK(ann.box.h > 0.0);
        }
    }
}

TEST_CASE("annotate_for_task filters labels and keeps pixels") {
    SceneSpec spec = SceneSpec::desk_default(6);
    spec.objects_min = spec.objects_max = 4;
    AnnotatedImage img = generate_scene(spec, 9);

    std::set<int> present;
    for (const auto& a : img.annotations) present.insert(a.class_id);

    SUBCASE("filter keeps only requested classes") {
        const int keep = *present.begin();
        AnnotatedImage filtered = annotate_for_task(img, {keep});
        CHECK(!filtered.annotations.empty());
        for (const auto& a : filtered.annotations) CHECK(a.class_id == keep);
        // Pixels shared, untouched.
        CHECK(filtered.image.data().data() == img.image.data().data());
    }
    SUBCASE("disjoint task empties the list but keeps the image") {
        AnnotatedImage filtered = annotate_for_task(img, {999});
        CHECK(filtered.annotations.empty());
        CHECK(filtered.image.size() == img.image.size());
    }
    SUBCASE("superset task is the identity") {
        std::set<int> all(present.begin(), present.end());
        AnnotatedImage filtered = annotate_for_task(img, all);
        CHECK(filtered.annotations.size() == img.annotations.size());
    }
}

TEST_CASE("stage datasets contain no labels from other stages") {
    SceneSpec spec = SceneSpec::desk_default(8);
    TaskSequence seq = build_task_sequence({0, 1, 2, 3, 4, 5, 6, 7}, {4, 4}, 3);
    std::set<int> stage0(seq.stage_classes[0].begin(), seq.stage_classes[0].end());
    for (const auto& img : generate_dataset(spec, 40, 5)) {
        AnnotatedImage t0 = annotate_for_task(img, stage0);
        for (const auto& ann : t0.annotations) CHECK(stage0.count(ann.class_id) == 1);
    }
}

TEST_CASE("build_task_sequence contracts") {
    std::vector<int> universe{0, 1, 2, 3, 4, 5, 6, 7};
    SUBCASE("4+4 split covers the universe disjointly") {
        TaskSequence seq = build_task_sequence(universe, {4, 4}, 11);
        REQUIRE(seq.stage_count() == 2);
        CHECK(seq.stage_classes[0].size() == 4);
        CHECK(seq.stage_classes[1].size() == 4);
        std::vector<int> all = seq.universe();
        CHECK(all == universe);
        for (int c : seq.stage_classes[0])
            CHECK(std::find(seq.stage_classes[1].begin(), seq.stage_classes[1].end(), c) ==
                  seq.stage_classes[1].end());
    }
    SUBCASE("single stage equals the universe") {
        TaskSequence seq = build_task_sequence(universe, {8}, 11);
        CHECK(seq.stage_classes[0] == universe);
    }
    SUBCASE("deterministic per seed") {
        TaskSequence a = build_task_sequence(universe, {4, 4}, 11);
        TaskSequence b = build_task_sequence(universe, {4, 4}, 11);
        CHECK(a.stage_classes == b.stage_classes);
    }
    SUBCASE("size mismatch is a config error") {
        CHECK_THROWS_AS(build_task_sequence(universe, {4, 3}, 11), ConfigError);
    }
}

TEST_CASE("co-occurrence bias shapes generated pair counts") {
    const int n = 6;
    SceneSpec spec = SceneSpec::desk_default(n);
    spec.objects_min = 2;
    spec.objects_max = 2;
    spec.cooccurrence_bias = Eigen::MatrixXd::Zero(n, n);
    Rng rng(404);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double w = rng.uniform(1.0, 50.0);
            spec.cooccurrence_bias(i, j) = w;
            spec.cooccurrence_bias(j, i) = w;
        }

    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < 1000; ++i) {
        AnnotatedImage img = generate_scene(spec, 5000 + i);
        std::set<int> present;
        for (const auto& a : img.annotations) present.insert(a.class_id);
        for (int a : present)
            for (int b : present)
                if (a < b) {
                    counts(a, b) += 1;
                    counts(b, a) += 1;
                }
    }

    std::vector<double> bias_flat, count_flat;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            bias_flat.push_back(spec.cooccurrence_bias(i, j));
            count_flat.push_back(counts(i, j));
        }
    CHECK(spearman(bias_flat, count_flat) >= 0.9);
}

TEST_CASE("COCO round trip regenerates the same pixels and boxes") {
    SceneSpec spec = SceneSpec::desk_default(5);
    auto images = generate_dataset(spec, 8, 31);
    CocoDataset ds = dataset_to_coco(images, spec, 31);
    CocoDataset parsed = parse_coco(coco_json(ds));
    auto back = regenerate_from_coco(parsed);

    REQUIRE(back.size() == images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        CHECK(back[i].image_id == images[i].image_id);
        for (int p = 0; p < images[i].image.size(); ++p)
            CHECK(back[i].image[p] == images[i].image[p]);
        REQUIRE(back[i].annotations.size() == images[i].annotations.size());
        for (std::size_t k = 0; k < images[i].annotations.size(); ++k) {
            CHECK(back[i].annotations[k].class_id == images[i].annotations[k].class_id);
            CHECK(back[i].annotations[k].box.cx ==
                  doctest::Approx(images[i].annotations[k].box.cx).epsilon(1e-12));
            CHECK(back[i].annotations[k].box.w ==
                  doctest::Approx(images[i].annotations[k].box.w).epsilon(1e-12));
        }
    }
}

TEST_CASE("coco parser rejects malformed and inconsistent input") {
    CHECK_THROWS_AS(parse_coco("{ not json"), ParseError);
    try {
        parse_coco("[1,2,");
    } catch (const ParseError& e) {
        CHECK(e.byte > 0);
    }
    // Annotation referencing an unknown category.
    const char* bad = R"({"images":[{"id":1,"file_name":"x"}],
                          "annotations":[{"id":1,"image_id":1,"category_id":9,"bbox":[0,0,1,1]}],
                          "categories":[{"id":1,"name":"a"}]})";
    CHECK_THROWS_AS(parse_coco(bad), IntegrityError);
}
