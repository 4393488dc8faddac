#pragma once

#include "mfstop/simulate.hpp"
#include "mfstop/snell.hpp"

namespace mfstop {

// Greedy stop rule read off a solved value table. At each node it repeatedly
// compares the current value with the best single-drop value; while the gap is
// within eta it stops the smallest index attaining that best drop, then
// re-examines the shrunken regime. eta < 0 means "use the table's default".
class StoppingPolicy : public NodeDecider {
public:
    explicit StoppingPolicy(const ValueTable* table, double eta = -1.0);

    std::vector<int> decide(int node, double t, const Eigen::MatrixXd& x,
                            const std::vector<std::uint8_t>& alive) const override;

    const ValueTable* table() const { return table_; }
    double eta() const;

private:
    const ValueTable* table_;
    double eta_;
};

struct PolicyEvent {
    int node = 0;      // when the stop happened
    int index = 0;     // which particle
    int remaining = 0; // alive count right after
};

struct PolicyTrace {
    std::uint32_t initial_regime = 0;
    std::vector<PolicyEvent> events;
    void validate() const;
};

struct PolicyRunResult {
    ParticlePaths paths;
    PolicyTrace trace;
    double objective = 0.0;
};

PolicyRunResult run_policy(const StoppingPolicy& policy, const Model& model,
                           const EmpiricalMeasure& y0, const TimeGrid& grid, std::uint64_t seed,
                           const SimulateOptions& opts = {});

struct PolicyValue {
    double mean = 0.0;
    double std_error = 0.0;
    int replications = 0;
};

// Monte Carlo estimate of the objective under an arbitrary stopping rule.
// Replication r runs with opts.replication + r so streams never collide.
PolicyValue evaluate_policy(const Model& model, const EmpiricalMeasure& y0, const TimeGrid& grid,
                            const StoppingRule& rule, int replications, std::uint64_t seed,
                            const SimulateOptions& opts = {});

// Certificate gap: table value at the initial state minus the realized mean.
double epsilon_optimality(const PolicyValue& value, const ValueTable& table,
                          const EmpiricalMeasure& y0);

} // namespace mfstop
