#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "iod/detector.hpp"
#include "iod/synth.hpp"

namespace iod {

struct IksConfig {
    double rho = 1.0;
    double ratio_base = 0.20;
    double ratio_incremental = 0.12;

    void validate() const;
};

// Per-task kernel importance records, persisted across stages so the
// differential can subtract the weighted history.
class ImportanceLedger {
  public:
    struct Record {
        int task_index = 0;
        std::map<KernelId, double> importance;
    };

    void append(int task_index, std::map<KernelId, double> importance);
    const std::vector<Record>& records() const { return records_; }
    bool empty() const { return records_.empty(); }
    double history_sum(const KernelId& id) const;

    std::string to_json() const;
    static ImportanceLedger from_json(const std::string& text);
    void save(const std::string& path) const;
    static ImportanceLedger load(const std::string& path);

  private:
    std::vector<Record> records_;
};

using SampleLossFn = std::function<Tensor(DetectorModel&, const AnnotatedImage&)>;

// Fisher-style importance per kernel: mean over samples of the summed
// squared per-parameter loss gradients within the kernel. One pass over the
// dataset, gradients reset per sample.
std::map<KernelId, double> kernel_importance(DetectorModel& model,
                                             const std::vector<AnnotatedImage>& dataset,
                                             const SampleLossFn& loss_fn);

// delta_I(k) = I_t(k) - rho * sum of historical I_i(k).
std::map<KernelId, double> differential_importance(const std::map<KernelId, double>& current,
                                                   const ImportanceLedger& ledger, double rho);

// ceil(ratio * |kernels|) ids with the largest delta, ties broken by the
// KernelId total order; the result is sorted by KernelId.
std::vector<KernelId> select_top_k(const std::map<KernelId, double>& delta, double ratio);

// After this, optimizer steps may update only the selected kernels (plus
// non-convolution parameters); everything else must stay bit-identical.
void apply_freeze_mask(DetectorModel& model, const std::set<KernelId>& selected);

}  // namespace iod
