#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mfstop/common.hpp"
#include "mfstop/grid.hpp"

namespace mfstop {

// Atomic measure on R^d x {0,1}. Atom k carries a position x_k, a survival
// indicator i_k (1 = still running, 0 = stopped) and a weight. Weights are
// nonnegative and sum to one; a particle system is the special case of N
// uniform atoms. Positions are stored flat (row-major) to keep hot loops
// allocation-free.
class EmpiricalMeasure {
public:
    EmpiricalMeasure() = default;
    explicit EmpiricalMeasure(int dim) : dim_(dim) {}

    // N uniform atoms from an N x d position matrix and indicator vector.
    static EmpiricalMeasure uniform(const Eigen::MatrixXd& xs, const std::vector<std::uint8_t>& ind);
    // Single unit atom.
    static EmpiricalMeasure dirac(const Eigen::VectorXd& x, int indicator);

    void reserve(int n) {
        xs_.reserve(static_cast<size_t>(n) * std::max(dim_, 1));
        ind_.reserve(n);
        w_.reserve(n);
    }
    void add_atom(const Eigen::Ref<const Eigen::VectorXd>& x, int indicator, double weight);
    void clear() { xs_.clear(); ind_.clear(); w_.clear(); }

    int size() const { return static_cast<int>(w_.size()); }
    int dim() const { return dim_; }
    double weight(int k) const { return w_[k]; }
    int indicator(int k) const { return ind_[k]; }
    Eigen::Map<const Eigen::VectorXd> x(int k) const {
        return Eigen::Map<const Eigen::VectorXd>(xs_.data() + static_cast<size_t>(k) * dim_, dim_);
    }
    double x1(int k) const { return xs_[static_cast<size_t>(k) * dim_]; }

    // In-place mutation for scratch reuse in solvers/simulators.
    void set_x(int k, const Eigen::Ref<const Eigen::VectorXd>& x);
    void set_x1(int k, double v) { xs_[static_cast<size_t>(k) * dim_] = v; }
    void set_indicator(int k, int indicator) { ind_[k] = static_cast<std::uint8_t>(indicator); }
    void set_weight(int k, double w) { w_[k] = w; }

    double total_mass() const;
    double alive_mass() const;
    // Integral of x^power against the alive part m(dx,1), per coordinate.
    Eigen::VectorXd alive_moment(int power) const;

    // Same atoms with the indicator forgotten (all set to 1): measures that agree
    // after this transform have the same x-marginal on R^d.
    EmpiricalMeasure x_marginal() const;

    // Throws UsageError on bad weights/indicators/non-finite positions.
    void validate(double mass_tol = 1e-9) const;

    bool all_alive() const;
    bool uniform_weights(double tol = 1e-12) const;

    bool operator==(const EmpiricalMeasure& o) const {
        return dim_ == o.dim_ && xs_ == o.xs_ && ind_ == o.ind_ && w_ == o.w_;
    }

private:
    int dim_ = 1;
    std::vector<double> xs_;
    std::vector<std::uint8_t> ind_;
    std::vector<double> w_;
};

// p: R^d -> [0,1], the fraction of alive mass at x that keeps running.
// Either a function of x or per-atom values aligned with the measure's atoms.
class TransitionDensity {
public:
    explicit TransitionDensity(std::function<double(const Eigen::Ref<const Eigen::VectorXd>&)> fn)
        : fn_(std::move(fn)) {}
    static TransitionDensity from_values(std::vector<double> per_atom) {
        TransitionDensity d;
        d.values_ = std::move(per_atom);
        return d;
    }
    // Value for atom k of m; throws UsageError if outside [0,1] (names the atom).
    double at(const EmpiricalMeasure& m, int k) const;

private:
    TransitionDensity() = default;
    std::function<double(const Eigen::Ref<const Eigen::VectorXd>&)> fn_;
    std::vector<double> values_;
};

// Partial stopping: alive atom (w,x,1) splits into (w*p(x),x,1) and (w*(1-p(x)),x,0).
// Stopped atoms pass through; zero-weight pieces are pruned.
EmpiricalMeasure stop_with_density(const EmpiricalMeasure& m, const TransitionDensity& p);

// Does m_after arise from m_before by stopping some alive mass in place?
// Checks that the x-marginals match and alive mass does not increase anywhere;
// recovers the per-location density when it holds.
struct PreceqResult {
    bool holds = false;
    std::string why;                  // empty when holds
    std::vector<double> density;      // per alive atom of m_before, in atom order
};
PreceqResult is_preceq(const EmpiricalMeasure& m_after, const EmpiricalMeasure& m_before,
                       double tol = 1e-9);

// Wasserstein distances. Ground metric on R^d x {0,1} is Euclidean with the
// indicator as one extra coordinate: |y - y'|^2 = |x - x'|^2 + (i - i')^2.
enum class TransportMethod {
    Auto,        // sorted for d=1 all-alive uniform, assignment for uniform same-N, LP otherwise
    Sorted,      // monotone matching, d=1, all atoms alive, uniform same-N
    Assignment,  // exact O(N^3) shortest augmenting path, uniform same-N
    GeneralLP,   // exact successive-shortest-path transport, arbitrary weights
};
struct DistanceOptions {
    TransportMethod method = TransportMethod::Auto;
    // Without this flag, inputs that need the general LP (mismatched counts or
    // non-uniform weights) raise UsageError instead of silently costing O(n^3).
    bool allow_general = false;
};
double w2(const EmpiricalMeasure& a, const EmpiricalMeasure& b, DistanceOptions opts = {});
double w1(const EmpiricalMeasure& a, const EmpiricalMeasure& b, DistanceOptions opts = {});

// Pure-stopping approximation of a partially stopped measure. Space is cut into
// axis-aligned cells of side 1/(n*sqrt(d)) (diameter <= 1/n); within each cell the
// alive atoms that keep running are picked greedily (largest p first, closest
// approach) so the selected alive mass matches the cell's target integral of p
// up to one atom's weight.
struct PureStopResult {
    EmpiricalMeasure m_pure;      // all-or-nothing stopped version m^A
    EmpiricalMeasure m_target;    // stop_with_density(m, p)
    std::vector<int> kept_alive;  // atom indices of m left running
    int nonempty_cells = 0;
    double max_atom_weight = 0.0; // among alive atoms
    double err = 0.0;             // w1(m_pure, m_target)
    double bound = 0.0;           // (2/n)*(kept + target alive mass) + max_atom_weight*cells
};
PureStopResult pure_approximation(const EmpiricalMeasure& m, const TransitionDensity& p, int n);

// Flow of measures on a shared time grid.
struct MeasureFlow {
    TimeGrid grid;
    std::vector<EmpiricalMeasure> at_node; // size grid.nodes()

    void validate() const;
};
// Max over nodes of w2 between the node measures. Grids must match exactly.
double flow_distance(const MeasureFlow& a, const MeasureFlow& b, DistanceOptions opts = {});

// Text round-trip: one atom per row, "weight x_1 ... x_d i", '#' starts a comment.
void save_measure(const std::string& path, const EmpiricalMeasure& m);
EmpiricalMeasure load_measure(const std::string& path);

} // namespace mfstop
