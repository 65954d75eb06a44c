#pragma once

#include <algorithm>

#include "iod/diagnostics.hpp"

namespace iod {

// Axis-aligned box in normalized image coordinates, center form.
struct Box {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    static Box from_corners(double x1, double y1, double x2, double y2) {
        return {(x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1};
    }

    double x1() const { return cx - w / 2.0; }
    double y1() const { return cy - h / 2.0; }
    double x2() const { return cx + w / 2.0; }
    double y2() const { return cy + h / 2.0; }
    double area() const { return w * h; }
};

// Intersection-over-union. A zero-area operand yields 0 and bumps the
// degenerate-input diagnostic instead of raising.
inline double iou(const Box& a, const Box& b) {
    if (a.area() <= 0.0 || b.area() <= 0.0) {
        diagnostics().degenerate_iou.fetch_add(1, std::memory_order_relaxed);
        return 0.0;
    }
    const double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
    const double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return inter / uni;
}

}  // namespace iod
