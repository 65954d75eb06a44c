#pragma once

#include <atomic>
#include <cstdint>

namespace iod {

// Counters for numerically degenerate events that are defined away rather
// than raised (log clamps, zero-area IoU). Tests reset and inspect them.
struct Diagnostics {
    std::atomic<std::uint64_t> log_prob_clamps{0};
    std::atomic<std::uint64_t> degenerate_iou{0};

    void reset() {
        log_prob_clamps = 0;
        degenerate_iou = 0;
    }

    static Diagnostics& instance() {
        static Diagnostics d;
        return d;
    }
};

inline Diagnostics& diagnostics() { return Diagnostics::instance(); }

}  // namespace iod
