#pragma once

#include <bit>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mfstop/kernels.hpp"
#include "mfstop/model.hpp"
#include "mfstop/simulate.hpp"

namespace mfstop {

// A regime is the set of still-running particles, packed as a bitmask
// (bit k set = particle k alive).
namespace regime {
inline int alive_count(std::uint32_t i) { return std::popcount(i); }
inline bool is_alive(std::uint32_t i, int k) { return (i >> k) & 1u; }
inline std::uint32_t drop(std::uint32_t i, int k) { return i & ~(1u << k); }
inline std::uint32_t full(int n) { return n >= 32 ? ~0u : (1u << n) - 1u; }
std::vector<int> alive_list(std::uint32_t i, int n);
} // namespace regime

std::uint32_t regime_of(const EmpiricalMeasure& m);
Eigen::MatrixXd positions_of(const EmpiricalMeasure& m);

enum class LatticeKernel : std::uint8_t {
    Trinomial, // matches b*dt and sigma^2*dt + (b*dt)^2, needs dt <= h^2/sigma^2
    TwoPoint   // x -> x +/- h, drift in the probabilities, sigma implied by h
};

// Shared one-dimensional spatial grid, applied per coordinate of the product state.
struct LatticeSpec {
    double x_min = -1.0;
    double x_max = 1.0;
    int n_x = 2;
    // value_at clamps queries this far beyond the bounds and errors past it
    double clamp_tolerance = std::numeric_limits<double>::infinity();

    double h() const { return (x_max - x_min) / (n_x - 1); }
    double point(int j) const { return x_min + j * h(); }
    void validate() const;
};

struct LsmcFit {
    Eigen::VectorXd coef; // empty = no usable fit at this node
    int samples = 0;
    bool ridged = false;
};

// Discrete value function v^N(node, x-config, regime). Two backends:
//   Lattice: per (node, regime) a flat array over the N-fold product of the
//            spatial grid, index = sum_k idx_k * n_x^k.
//   Lsmc:    per node one pooled regression on moments of the empirical
//            measure, covering all alive-count layers; exact terminal payoff.
struct ValueTable {
    enum class Backend : std::uint8_t { Lattice = 0, Lsmc = 1 };
    Backend backend = Backend::Lattice;

    std::string model_name; // built-in name; tables are rebuilt via make_builtin on load
    nlohmann::json model_params;
    Model model; // not serialized, reconstructed from name/params
    int n_particles = 1;
    TimeGrid grid;

    LatticeSpec spec;
    LatticeKernel kernel = LatticeKernel::Trinomial;
    std::vector<std::vector<std::vector<double>>> values; // [node][regime][flat point]

    int n_features = 0;
    std::vector<LsmcFit> fits; // one per node, shared by all regimes

    double interp_error_estimate = 0.0; // max central 2nd difference / 8 over the tables
    double eta_default = 0.0;           // policy slack: 10x interp estimate (lattice), 0 (lsmc)
    long long clip_events = 0;          // kernel probabilities clamped into [0,1]
    long long boundary_events = 0;      // transitions clamped at the lattice edge
    mutable long long query_clamps = 0; // value_at queries pulled back into range
    std::vector<std::string> warnings;

    // v^N at a time node for an N x d configuration and a regime. Lattice:
    // multilinear interpolation, exact at grid points. Lsmc: max of the fitted
    // continuation and the single-drop obstacle, recursing down the layers.
    double value_at(int node, const Eigen::Ref<const Eigen::MatrixXd>& x, std::uint32_t regime) const;

    // terminal payoff g applied to the configuration's x-marginal
    double terminal_of(const Eigen::Ref<const Eigen::MatrixXd>& x) const;
};

void save_table(const std::string& path, const ValueTable& table);
ValueTable load_table(const std::string& path);

// Symmetric regression features for an N-particle 1-d configuration, moments
// of the empirical measure over (position, indicator):
// [1, R, R^2, A1, A2, A1^2, R*A1, D1, D2, A1*D1] with R the alive fraction,
// Ap = sum_alive x^p/N and Dp the same power sums over stopped particles. One
// regression per node covers every regime. It models only the payoff still to
// be earned by alive particles; frozen ones pay their terminal reward exactly,
// so that known part is subtracted from targets and added back on evaluation.
inline constexpr int kLsmcFeatures = 10;
Eigen::VectorXd lsmc_features(const Eigen::Ref<const Eigen::MatrixXd>& x, std::uint32_t regime, int N);

struct CascadeOptions {
    double max_table_doubles = 3.2e8; // memory guard on nodes * 2^N * n_x^N
};

// Regime-cascade backward induction on the product lattice (d = 1, N <= 3).
// Regimes are processed by increasing alive count; each value is the max of the
// same-node single-drop obstacle and the running-reward-plus-expectation term,
// so regime monotonicity holds by construction.
ValueTable solve_cascade(const Model& model, int N, const TimeGrid& grid, const LatticeSpec& spec,
                         LatticeKernel kernel = LatticeKernel::Trinomial,
                         const CascadeOptions& opts = {});

// Independent single-particle solver for decoupled models (the oracle the
// cascade must reproduce on additive instances). Shares only the per-step
// transition probability helpers with solve_cascade.
struct SingleTable {
    TimeGrid grid;
    LatticeSpec spec;
    LatticeKernel kernel = LatticeKernel::Trinomial;
    std::vector<std::vector<double>> v; // [node][ix]
    double interp_error_estimate = 0.0;
    long long clip_events = 0;
    long long boundary_events = 0;
    mutable long long query_clamps = 0;

    double value_at(int node, double x) const;
};
SingleTable solve_single(const Model& model, const TimeGrid& grid, const LatticeSpec& spec,
                         LatticeKernel kernel = LatticeKernel::Trinomial);

// Exact enumeration of the discrete-time objective over all adapted stopping
// profiles, two-point noise, for cross-checking the cascade at tiny sizes.
double brute_force_value(const Model& model, const EmpiricalMeasure& y0, const TimeGrid& grid,
                         double h);

struct LsmcOptions {
    int n_paths = 4000;           // paths per fitting round
    int improvement_rounds = 2;   // greedy re-simulate + refit passes
    int eval_paths = 4000;        // fresh-seed rollout for the value estimate
    double exploration_fraction = 0.3; // iid-rule share kept during improvement rounds
    SurvivalLaw exploration;      // empty node_prob = uniform nodes / never 0.5
    int min_layer_samples = 32;   // below this a node keeps no fit
};

struct LsmcResult {
    ValueTable table;
    double value = 0.0;     // fresh rollout under the fitted policy (lower-biased)
    double std_error = 0.0;
    int rounds = 0;
};

// Regression Monte Carlo backend for N beyond the lattice budget (d = 1).
// Fitted value iteration: per node one pooled regression of the one-step
// Bellman target on empirical-measure moments, refined over rounds whose
// simulations follow the current greedy policy.
LsmcResult solve_lsmc(const Model& model, const EmpiricalMeasure& y0, const TimeGrid& grid,
                      std::uint64_t seed, const LsmcOptions& opts = {});

} // namespace mfstop
