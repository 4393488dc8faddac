#pragma once

#include <string>
#include <vector>

#include "mfstop/policy.hpp"
#include "mfstop/simulate.hpp"
#include "mfstop/snell.hpp"

namespace mfstop {

struct ChaosRow {
    int N = 0;
    double w1sq_mean = 0.0; // E[sup over nodes of W1^2(m^N(Y_s), reference at s)]
    double w1sq_se = 0.0;
    double w2sq_mean = 0.0; // same with W2, on a subset of replications
    double w2sq_se = 0.0;
    int replications = 0;
    int w2_replications = 0;
};

struct ChaosReport {
    std::vector<ChaosRow> rows;
    double slope = 0.0; // log-log slope of w1sq_mean against N
    int cloud_size = 0;
    double picard_gap = 0.0;
    int picard_iterations = 0;
    bool picard_converged = false;
    double flow_bias_proxy = 0.0; // sup-node W1 between the M and M/2 clouds, subsampled
};

struct ChaosParams {
    std::vector<int> Ns = {8, 32, 128};
    int replications = 64;
    int cloud_multiple = 10; // reference cloud size M = cloud_multiple * max N
    double picard_tol = 1e-3;
    int picard_kmax = 8;
    int bias_subsample = 512; // atoms per side in the flow bias proxy
    int w2_replications = 8;
};

// Propagation-of-chaos sweep: one large reference cloud approximates the limit
// flow; each (N, replication) runs an independent N-system from an iid draw of
// m0 and measures the sup-over-time squared distance to an N-atom subsample of
// the cloud at uniformly drawn indices, a same-size assignment problem. The
// subsample is an iid N-draw of the cloud's occupation law, so its own
// fluctuation is of the same order and the coupling decay rate survives.
ChaosReport chaos_experiment(const Model& model, const EmpiricalMeasure& m0, const TimeGrid& grid,
                             const SurvivalLaw& law, std::uint64_t seed, const ChaosParams& params);

// least-squares slope of log(w1sq_mean) against log(N)
double rate_fit(const std::vector<ChaosRow>& rows);

struct ConvergenceRow {
    int N = 0;
    std::string backend; // "lattice" or "lsmc"
    double value_rollout = 0.0;
    double rollout_se = 0.0;
    double value_table = 0.0; // table value at the initial configuration
    double oracle = std::numeric_limits<double>::quiet_NaN();
    double cauchy_diff = std::numeric_limits<double>::quiet_NaN();
};

struct ConvergenceReport {
    std::vector<ConvergenceRow> rows;
    bool has_oracle = false;
    double tol_disc = 0.0; // 3x the value shift under one time refinement
};

struct ConvergenceParams {
    std::vector<int> Ns = {2, 4, 8};
    int rollout_reps = 2000;
    int lattice_max = 3; // lattice cascade up to here, regression beyond
    LatticeSpec spec;
    LatticeKernel kernel = LatticeKernel::Trinomial;
    LsmcOptions lsmc;
    double eta = -1.0; // policy slack, -1 = table default
};

// Value ladder V^N for increasing N: solve, read the table value at the
// proportionally resampled initial configuration, and re-simulate the greedy
// policy for a lower-bound estimate. Decoupled models also get the exact
// mean-field oracle from the single-particle table.
ConvergenceReport value_convergence_experiment(const Model& model, const EmpiricalMeasure& m0,
                                               const TimeGrid& grid, std::uint64_t seed,
                                               const ConvergenceParams& params);

} // namespace mfstop
