#include "iod/iks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace iod {

using nlohmann::json;

void IksConfig::validate() const {
    check_contract(rho >= 0.0, "IksConfig: rho must be >= 0");
    check_contract(ratio_base > 0.0 && ratio_base <= 1.0, "IksConfig: ratio_base in (0,1]");
    check_contract(ratio_incremental > 0.0 && ratio_incremental <= 1.0,
                   "IksConfig: ratio_incremental in (0,1]");
}

void ImportanceLedger::append(int task_index, std::map<KernelId, double> importance) {
    for (const auto& [id, v] : importance)
        check_contract(v >= 0.0, "ImportanceLedger: negative importance for " + to_string(id));
    records_.push_back({task_index, std::move(importance)});
}

double ImportanceLedger::history_sum(const KernelId& id) const {
    double acc = 0.0;
    for (const auto& rec : records_) {
        auto it = rec.importance.find(id);
        if (it != rec.importance.end()) acc += it->second;
    }
    return acc;
}

std::string ImportanceLedger::to_json() const {
    json doc;
    doc["format"] = "iod-ledger";
    doc["version"] = 1;
    doc["records"] = json::array();
    for (const auto& rec : records_) {
        json entries = json::array();
        for (const auto& [id, v] : rec.importance)
            entries.push_back({{"layer", id.layer_name}, {"channel", id.out_channel}, {"value", v}});
        doc["records"].push_back({{"task", rec.task_index}, {"entries", std::move(entries)}});
    }
    return doc.dump();
}

ImportanceLedger ImportanceLedger::from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("ledger: ") + e.what(), e.byte);
    }
    if (doc.value("format", "") != "iod-ledger") throw IntegrityError("ledger: bad format tag");
    ImportanceLedger ledger;
    for (const auto& rec : doc.at("records")) {
        std::map<KernelId, double> importance;
        for (const auto& e : rec.at("entries"))
            importance[{e.at("layer").get<std::string>(), e.at("channel").get<int>()}] =
                e.at("value").get<double>();
        ledger.append(rec.at("task").get<int>(), std::move(importance));
    }
    return ledger;
}

void ImportanceLedger::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << to_json();
}

ImportanceLedger ImportanceLedger::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

std::map<KernelId, double> kernel_importance(DetectorModel& model,
                                             const std::vector<AnnotatedImage>& dataset,
                                             const SampleLossFn& loss_fn) {
    check_contract(!dataset.empty(), "kernel_importance: empty dataset");

    // Conv weights need gradients regardless of the model's current training
    // setup; previous flags are restored on exit.
    std::map<std::string, bool> saved;
    for (const auto& [name, t] : model.params()) {
        saved[name] = t.requires_grad();
        if (model.is_conv_weight(name)) model.param(name).set_requires_grad(true);
    }

    std::map<KernelId, double> acc;
    for (const auto& id : model.conv_kernel_ids()) acc[id] = 0.0;

    for (const auto& sample : dataset) {
        model.zero_grads();
        Tensor loss = loss_fn(model, sample);
        backward(loss);
        for (const auto& [name, t] : model.params()) {
            if (!model.is_conv_weight(name)) continue;
            const std::string layer = name.substr(0, name.size() - 7);
            const int cout = t.dim(0);
            const std::int64_t per = t.size() / cout;
            if (!t.has_grad()) continue;  // constant loss: zero contribution
            const auto& g = t.grad();
            for (int c = 0; c < cout; ++c) {
                double k_acc = 0.0;
                for (std::int64_t j = 0; j < per; ++j) {
                    const double v = g[c * per + j];
                    k_acc += v * v;
                }
                acc[{layer, c}] += k_acc;
            }
        }
    }

    model.zero_grads();
    for (const auto& [name, flag] : saved) model.param(name).set_requires_grad(flag);

    const double inv_n = 1.0 / static_cast<double>(dataset.size());
    for (auto& [id, v] : acc) v *= inv_n;
    return acc;
}

std::map<KernelId, double> differential_importance(const std::map<KernelId, double>& current,
                                                   const ImportanceLedger& ledger, double rho) {
    std::map<KernelId, double> delta;
    for (const auto& [id, v] : current) delta[id] = v - rho * ledger.history_sum(id);
    return delta;
}

std::vector<KernelId> select_top_k(const std::map<KernelId, double>& delta, double ratio) {
    check_contract(ratio > 0.0 && ratio <= 1.0, "select_top_k: ratio must be in (0,1]");
    check_contract(!delta.empty(), "select_top_k: empty importance map");
    const auto n_sel = static_cast<std::size_t>(
        std::ceil(ratio * static_cast<double>(delta.size())));

    std::vector<std::pair<KernelId, double>> ranked(delta.begin(), delta.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<KernelId> out;
    out.reserve(n_sel);
    for (std::size_t i = 0; i < n_sel; ++i) out.push_back(ranked[i].first);
    std::sort(out.begin(), out.end());
    return out;
}

void apply_freeze_mask(DetectorModel& model, const std::set<KernelId>& selected) {
    model.set_freeze_mask(selected);  // validates membership
}

}  // namespace iod
