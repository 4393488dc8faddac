#pragma once

#include <map>
#include <memory>
#include <vector>

#include "mfstop/grid.hpp"
#include "mfstop/measure.hpp"
#include "mfstop/model.hpp"
#include "mfstop/rng.hpp"

namespace mfstop {

// Distribution of a particle's stopping node; -1 encodes "runs past T".
struct SurvivalLaw {
    std::vector<double> node_prob; // node_prob[j] = P(stop exactly at node j), size nodes
    double never_prob = 0.0;

    static SurvivalLaw uniform_nodes(int n_steps);
    static SurvivalLaw point(int node, int n_steps);
    static SurvivalLaw never(int n_steps);

    void validate() const;
    double survival_at(int node) const; // P(stop node > given node) = P(alive at node)
    int sample(Rng& rng) const;
};

// Closed-loop per-node stopping decisions (implemented by the policy module).
// Returns indices stopped at this node, in stopping order; `alive` reflects
// earlier same-node stops on reentry, but implementations are expected to do
// their whole cascade in one call.
class NodeDecider {
public:
    virtual ~NodeDecider() = default;
    virtual std::vector<int> decide(int node, double t, const Eigen::MatrixXd& x,
                                    const std::vector<std::uint8_t>& alive) const = 0;
};

struct StoppingRule {
    enum class Kind { Never, FixedNodes, IidSurvival, PolicyDriven };
    Kind kind = Kind::Never;
    std::vector<int> fixed_nodes; // per particle (or size 1 = broadcast); -1 = never
    SurvivalLaw law;
    std::shared_ptr<const NodeDecider> decider;

    static StoppingRule never() { return {}; }
    static StoppingRule fixed(std::vector<int> nodes);
    static StoppingRule iid(SurvivalLaw law);
    static StoppingRule policy(std::shared_ptr<const NodeDecider> d);
};

// Pre-sampled i.i.d. stopping nodes as a fixed rule (one draw per particle from
// the caller's RNG, in particle order).
StoppingRule iid_stopping_rule(const SurvivalLaw& law, int n_particles, Rng& rng);

enum class NoiseKernel {
    Gaussian,       // Euler-Maruyama, one standard normal per coordinate per step
    LatticeTwoPoint // x -> x +/- h per coordinate, drift in the probabilities
};

struct SimulateOptions {
    NoiseKernel kernel = NoiseKernel::Gaussian;
    double lattice_h = 0.0;     // required for LatticeTwoPoint
    bool record_measures = false;
    std::uint64_t replication = 0;
    // Per-particle stream ids; defaults to 0..N-1. Permuting initial states
    // together with stream ids permutes the realised paths identically.
    std::vector<std::uint64_t> stream_ids;
    // Frozen measure flow: when set, coefficients read flow->at_node[s] instead
    // of the system's own empirical measure (used by the mean-field iteration).
    const MeasureFlow* frozen_flow = nullptr;
};

struct ParticlePaths {
    TimeGrid grid;
    int n = 0;
    int dim = 1;
    // Node-major storage; indicator value at node s is the post-decision
    // (cadlag) value, i.e. a particle stopped at node s already carries 0 there.
    std::vector<double> xs;           // nodes * n * dim
    std::vector<std::uint8_t> alive;  // nodes * n
    std::vector<int> stop_node;       // per particle; -1 = never stopped (ran past T)
    std::vector<std::vector<int>> stops_at; // per node, stop order within the node
    std::uint64_t seed = 0;
    std::uint64_t replication = 0;
    std::vector<std::uint64_t> stream_ids;
    std::vector<EmpiricalMeasure> recorded_measures; // only when record_measures

    double x(int node, int k, int j = 0) const {
        return xs[(static_cast<size_t>(node) * n + k) * dim + j];
    }
    bool is_alive(int node, int k) const { return alive[static_cast<size_t>(node) * n + k] != 0; }
    EmpiricalMeasure measure_at(int node) const;
};

// Forward simulation of the stopped interacting system. y0 supplies the initial
// positions and indicators (uniform weights required); stopped particles freeze
// and keep contributing indicator-0 atoms to the empirical measure. The measure
// used for the step s -> s+1 reflects stops decided at node s.
ParticlePaths simulate_system(const Model& model, const EmpiricalMeasure& y0,
                              const TimeGrid& grid, const StoppingRule& rule, std::uint64_t seed,
                              const SimulateOptions& opts = {});

// Pathwise objective: sum over nodes of dt * (alive-average of f) plus the
// terminal reward at T. Matches the backward-induction conventions exactly.
std::vector<double> node_rewards(const Model& model, const ParticlePaths& paths);
double objective_of_paths(const Model& model, const ParticlePaths& paths);

// Mean-field fixed point: iterate "simulate a particle cloud against a frozen
// flow, freeze the resulting empirical flow" until the flow stops moving. Noise
// and stopping draws are reused across iterations (common random numbers), so
// the map is deterministic and the gap hits zero exactly for decoupled models.
struct McKeanVlasovResult {
    MeasureFlow flow;
    int iterations = 0;
    double final_gap = 0.0;
    bool converged = false;
    std::vector<double> gaps;         // paired-particle sup-node RMS between iterates
    ParticlePaths cloud;              // last iterate's cloud paths
};
// Stream tag such that cloud particle k draws the same noise as particle k of a
// plain simulate_system run with replication = kCloudReplication.
inline constexpr std::uint64_t kCloudReplication = 0x636c6f7564ULL; // "cloud"
McKeanVlasovResult mckean_vlasov_flow(const Model& model, const EmpiricalMeasure& m0,
                                      const TimeGrid& grid, int M, const StoppingRule& rule,
                                      std::uint64_t seed, double tol = 1e-3, int k_max = 8);

// Deterministic proportional resampling of a weighted measure to M uniform atoms
// (largest-remainder rounding, atom order preserved).
EmpiricalMeasure resample_uniform(const EmpiricalMeasure& m, int M);

// Moment diagnostics: average over particles of sup_s |X_s|^p, and increment
// moments avg sup_{window} |X_s - X_start|^p over dyadic windows.
struct MomentReport {
    double sup_moment = 0.0;
    std::map<int, double> increment_by_window; // window length in steps -> moment
};
MomentReport moment_check(const ParticlePaths& paths, int p);

} // namespace mfstop
