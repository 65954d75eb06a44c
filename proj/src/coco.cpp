#include "iod/coco.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace iod {

using nlohmann::json;

bool CocoDataset::has_category(int id) const {
    for (const auto& c : categories)
        if (c.id == id) return true;
    return false;
}

bool CocoDataset::has_image(long id) const {
    for (const auto& im : images)
        if (im.id == id) return true;
    return false;
}

CocoDataset parse_coco(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("coco: ") + e.what(), e.byte);
    }

    CocoDataset ds;
    try {
        if (!doc.is_object()) throw IntegrityError("coco: top level must be an object");
        for (const auto& im : doc.value("images", json::array())) {
            CocoImage c;
            c.id = im.at("id").get<long>();
            c.file_name = im.value("file_name", "");
            c.width = im.value("width", 0);
            c.height = im.value("height", 0);
            ds.images.push_back(std::move(c));
        }
        for (const auto& cat : doc.value("categories", json::array())) {
            CocoCategory c;
            c.id = cat.at("id").get<int>();
            c.name = cat.value("name", "");
            ds.categories.push_back(std::move(c));
        }
        for (const auto& an : doc.value("annotations", json::array())) {
            CocoAnnotation a;
            a.id = an.at("id").get<long>();
            a.image_id = an.at("image_id").get<long>();
            a.category_id = an.at("category_id").get<int>();
            const auto& bb = an.at("bbox");
            if (!bb.is_array() || bb.size() != 4)
                throw IntegrityError("coco: annotation " + std::to_string(a.id) +
                                     " bbox must have 4 entries");
            for (int i = 0; i < 4; ++i) a.bbox[static_cast<std::size_t>(i)] = bb[i].get<double>();
            a.confidence = an.value("confidence", -1.0);
            ds.annotations.push_back(std::move(a));
        }
        for (auto& [key, value] : doc.items())
            if (key != "images" && key != "annotations" && key != "categories")
                ds.extensions[key] = value;
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("coco: ") + e.what());
    }

    std::set<long> image_ids;
    for (const auto& im : ds.images)
        if (!image_ids.insert(im.id).second)
            throw IntegrityError("coco: duplicate image id " + std::to_string(im.id));
    std::set<int> cat_ids;
    for (const auto& c : ds.categories)
        if (!cat_ids.insert(c.id).second)
            throw IntegrityError("coco: duplicate category id " + std::to_string(c.id));
    for (const auto& a : ds.annotations) {
        if (!image_ids.count(a.image_id))
            throw IntegrityError("coco: annotation " + std::to_string(a.id) +
                                 " references unknown image " + std::to_string(a.image_id));
        if (!cat_ids.count(a.category_id))
            throw IntegrityError("coco: annotation " + std::to_string(a.id) +
                                 " references unknown category " + std::to_string(a.category_id));
    }
    return ds;
}

CocoDataset load_coco(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_coco(buf.str());
}

std::string coco_json(const CocoDataset& ds) {
    json doc;
    doc["images"] = json::array();
    for (const auto& im : ds.images)
        doc["images"].push_back({{"id", im.id},
                                 {"file_name", im.file_name},
                                 {"width", im.width},
                                 {"height", im.height}});
    doc["annotations"] = json::array();
    for (const auto& a : ds.annotations) {
        json an = {{"id", a.id},
                   {"image_id", a.image_id},
                   {"category_id", a.category_id},
                   {"bbox", a.bbox}};
        if (a.confidence >= 0.0) an["confidence"] = a.confidence;
        doc["annotations"].push_back(std::move(an));
    }
    doc["categories"] = json::array();
    for (const auto& c : ds.categories)
        doc["categories"].push_back({{"id", c.id}, {"name", c.name}});
    for (const auto& [key, value] : ds.extensions.items()) doc[key] = value;
    return doc.dump(2);
}

void save_coco(const CocoDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << coco_json(ds) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace iod
