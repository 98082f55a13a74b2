// Central finite-difference oracle for autodiff gradients. Test-only:
// independent of the backward implementation it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sapt/ops.hpp"
#include "sapt/value.hpp"

namespace sapt::testing {

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)});
}

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst;  // "<leaf_idx>[coord]"
    bool ok(double rtol) const { return max_rel_err < rtol; }
};

// build_loss must rebuild the graph from the same leaves on every call.
// Coordinates are sampled with a fixed stride so large leaves stay cheap.
inline GradCheckReport grad_check(const std::function<Value()>& build_loss, const std::vector<Value>& leaves,
                                  std::size_t max_coords_per_leaf = 24, double step = 1e-4) {
    for (const Value& leaf : leaves) {
        const_cast<Value&>(leaf).zero_grad();
    }
    Value loss = build_loss();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const Value& leaf : leaves) {
        analytic.push_back(leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.numel(), 0.0));
    }

    GradCheckReport report;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Value leaf = leaves[li];
        const std::size_t n = leaf.numel();
        const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_coords_per_leaf));
        for (std::size_t c = 0; c < n; c += stride) {
            const double orig = leaf.data()[c];
            leaf.data()[c] = orig + step;
            const double up = build_loss().item();
            leaf.data()[c] = orig - step;
            const double down = build_loss().item();
            leaf.data()[c] = orig;
            const double fd = (up - down) / (2.0 * step);
            const double err = rel_err(fd, analytic[li][c]);
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst = "leaf " + std::to_string(li) + "[" + std::to_string(c) + "] fd=" + std::to_string(fd) +
                               " ad=" + std::to_string(analytic[li][c]);
            }
        }
        leaf.zero_grad();
    }
    return report;
}

}  // namespace sapt::testing
