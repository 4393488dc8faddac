#pragma once

#include "mfstop/common.hpp"

namespace mfstop {

// Uniform time grid t0 = s_0 < s_1 < ... < s_n = T.
struct TimeGrid {
    double t0 = 0.0;
    double T = 1.0;
    int n_steps = 1;

    int nodes() const { return n_steps + 1; }
    double dt() const { return (T - t0) / n_steps; }
    // Computed as a convex combination so time(n_steps) == T exactly.
    double time(int node) const {
        const double a = static_cast<double>(node) / n_steps;
        return t0 * (1.0 - a) + T * a;
    }

    void validate() const {
        if (!(T > t0)) throw UsageError("TimeGrid: T must exceed t0");
        if (n_steps < 1) throw UsageError("TimeGrid: n_steps must be >= 1");
    }

    bool operator==(const TimeGrid&) const = default;
};

} // namespace mfstop
