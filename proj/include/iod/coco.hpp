#pragma once

#include <array>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "iod/errors.hpp"

namespace iod {

// COCO-style annotation containers. bbox is [x, y, w, h] in pixels with
// (x, y) the top-left corner.
struct CocoImage {
    long id = 0;
    std::string file_name;
    int width = 0;
    int height = 0;
};

struct CocoAnnotation {
    long id = 0;
    long image_id = 0;
    int category_id = 0;
    std::array<double, 4> bbox{0, 0, 0, 0};
    double confidence = -1.0;  // < 0 means absent (plain ground truth)
};

struct CocoCategory {
    int id = 0;
    std::string name;
};

struct CocoDataset {
    std::vector<CocoImage> images;
    std::vector<CocoAnnotation> annotations;
    std::vector<CocoCategory> categories;
    nlohmann::json extensions = nlohmann::json::object();  // extra top-level keys, kept verbatim

    bool has_category(int id) const;
    bool has_image(long id) const;
};

// Parsing rejects malformed JSON with the byte offset and cross-checks
// annotation references against images and categories.
CocoDataset parse_coco(const std::string& text);
CocoDataset load_coco(const std::string& path);
std::string coco_json(const CocoDataset& ds);
void save_coco(const CocoDataset& ds, const std::string& path);

}  // namespace iod
