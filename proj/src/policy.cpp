#include "mfstop/policy.hpp"

#include <cmath>
#include <limits>

namespace mfstop {

StoppingPolicy::StoppingPolicy(const ValueTable* table, double eta) : table_(table), eta_(eta) {
    if (table_ == nullptr) throw UsageError("policy needs a value table");
}

double StoppingPolicy::eta() const { return eta_ < 0.0 ? table_->eta_default : eta_; }

std::vector<int> StoppingPolicy::decide(int node, double, const Eigen::MatrixXd& x,
                                        const std::vector<std::uint8_t>& alive) const {
    const int N = table_->n_particles;
    if (static_cast<int>(alive.size()) != N || x.rows() != N)
        throw UsageError("policy: state has wrong particle count");
    std::uint32_t mask = 0;
    for (int k = 0; k < N; ++k)
        if (alive[k]) mask |= 1u << k;

    const double slack = eta();
    std::vector<int> stops;
    while (mask != 0) {
        const double here = table_->value_at(node, x, mask);
        int best_k = -1;
        double best = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < N; ++k) {
            if (!regime::is_alive(mask, k)) continue;
            const double v = table_->value_at(node, x, regime::drop(mask, k));
            if (v > best) { // strict: ties resolve to the smallest index
                best = v;
                best_k = k;
            }
        }
        if (here <= best + slack) {
            stops.push_back(best_k);
            mask = regime::drop(mask, best_k);
        } else {
            break;
        }
    }
    return stops;
}

void PolicyTrace::validate() const {
    int remaining = regime::alive_count(initial_regime);
    std::uint32_t mask = initial_regime;
    int prev_node = -1;
    for (const PolicyEvent& e : events) {
        if (e.node < prev_node) throw ValidationError("policy trace: events out of order");
        prev_node = e.node;
        if (!regime::is_alive(mask, e.index))
            throw ValidationError("policy trace: particle stopped twice or never alive");
        mask = regime::drop(mask, e.index);
        --remaining;
        if (e.remaining != remaining)
            throw ValidationError("policy trace: remaining count inconsistent");
    }
}

PolicyRunResult run_policy(const StoppingPolicy& policy, const Model& model,
                           const EmpiricalMeasure& y0, const TimeGrid& grid, std::uint64_t seed,
                           const SimulateOptions& opts) {
    const StoppingRule rule = StoppingRule::policy(std::make_shared<StoppingPolicy>(policy));
    PolicyRunResult res;
    res.paths = simulate_system(model, y0, grid, rule, seed, opts);
    res.trace.initial_regime = regime_of(y0);
    int remaining = regime::alive_count(res.trace.initial_regime);
    for (int s = 0; s < grid.nodes(); ++s)
        for (int k : res.paths.stops_at[s]) res.trace.events.push_back({s, k, --remaining});
    res.trace.validate();
    res.objective = objective_of_paths(model, res.paths);
    return res;
}

PolicyValue evaluate_policy(const Model& model, const EmpiricalMeasure& y0, const TimeGrid& grid,
                            const StoppingRule& rule, int replications, std::uint64_t seed,
                            const SimulateOptions& opts) {
    if (replications < 2) throw UsageError("policy evaluation needs at least two replications");
    double sum = 0.0, sumsq = 0.0;
    for (int r = 0; r < replications; ++r) {
        SimulateOptions so = opts;
        so.replication = opts.replication + static_cast<std::uint64_t>(r);
        so.record_measures = false;
        const ParticlePaths paths = simulate_system(model, y0, grid, rule, seed, so);
        const double v = objective_of_paths(model, paths);
        sum += v;
        sumsq += v * v;
    }
    PolicyValue out;
    out.replications = replications;
    out.mean = sum / replications;
    const double var = std::max(0.0, (sumsq - sum * sum / replications) / (replications - 1));
    out.std_error = std::sqrt(var / replications);
    return out;
}

double epsilon_optimality(const PolicyValue& value, const ValueTable& table,
                          const EmpiricalMeasure& y0) {
    return table.value_at(0, positions_of(y0), regime_of(y0)) - value.mean;
}

} // namespace mfstop
