#pragma once

#include <algorithm>

namespace mfstop {

// Per-coordinate transition probabilities shared by the lattice solvers, the
// brute-force tree and the simulator's two-point mode. Keeping a single source
// for these formulas is what makes cross-checks exact instead of O(dt)-close.

struct TwoPointProbs {
    double up = 0.5, down = 0.5;
    bool clipped = false;
};

// Jump x -> x +/- h with the drift folded into the probabilities:
// mean matches b*dt exactly, variance is h^2 - (b*dt)^2.
inline TwoPointProbs two_point_probs(double b, double dt, double h) {
    TwoPointProbs p;
    p.up = 0.5 + 0.5 * b * dt / h;
    if (p.up < 0.0 || p.up > 1.0) {
        p.up = std::clamp(p.up, 0.0, 1.0);
        p.clipped = true;
    }
    p.down = 1.0 - p.up;
    return p;
}

struct TrinomialProbs {
    double up = 0.0, mid = 1.0, down = 0.0;
    bool clipped = false;
};

// Moment-matched jump to {x+h, x, x-h}: mean b*dt, second moment
// sigma^2*dt + (b*dt)^2. Needs dt <= h^2 / sigma^2 for nonnegative weights;
// out-of-range weights are clamped and renormalised, flagged via `clipped`.
inline TrinomialProbs trinomial_probs(double b, double sigma, double dt, double h) {
    TrinomialProbs p;
    const double m1 = b * dt;
    const double m2 = sigma * sigma * dt + m1 * m1;
    p.up = 0.5 * (m2 / (h * h) + m1 / h);
    p.down = 0.5 * (m2 / (h * h) - m1 / h);
    p.mid = 1.0 - p.up - p.down;
    if (p.up < 0.0 || p.down < 0.0 || p.mid < 0.0) {
        p.clipped = true;
        p.up = std::max(p.up, 0.0);
        p.down = std::max(p.down, 0.0);
        p.mid = std::max(p.mid, 0.0);
        const double s = p.up + p.mid + p.down;
        p.up /= s;
        p.mid /= s;
        p.down /= s;
    }
    return p;
}

} // namespace mfstop
