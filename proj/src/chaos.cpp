#include "mfstop/chaos.hpp"

#include <algorithm>
#include <cmath>

#include "mfstop/rng.hpp"

namespace mfstop {

namespace {

EmpiricalMeasure sample_iid(const EmpiricalMeasure& m0, int N, Rng& rng) {
    std::vector<double> cum(m0.size());
    double acc = 0.0;
    for (int k = 0; k < m0.size(); ++k) {
        acc += m0.weight(k);
        cum[k] = acc;
    }
    Eigen::MatrixXd xs(N, m0.dim());
    std::vector<std::uint8_t> ind(N);
    for (int k = 0; k < N; ++k) {
        const double u = rng.uniform01() * acc;
        const int at = static_cast<int>(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
        const int j = std::min(at, m0.size() - 1);
        xs.row(k) = m0.x(j).transpose();
        ind[k] = static_cast<std::uint8_t>(m0.indicator(j));
    }
    return EmpiricalMeasure::uniform(xs, ind);
}

EmpiricalMeasure head_measure(const ParticlePaths& paths, int node, int count) {
    Eigen::MatrixXd xs(count, paths.dim);
    std::vector<std::uint8_t> ind(count);
    for (int k = 0; k < count; ++k) {
        for (int j = 0; j < paths.dim; ++j) xs(k, j) = paths.x(node, k, j);
        ind[k] = paths.is_alive(node, k) ? 1 : 0;
    }
    return EmpiricalMeasure::uniform(xs, ind);
}

// Cloud atoms at the given indices (repeats allowed). The cloud is seeded by
// proportional resampling, so its head is not a fair draw of m0; uniformly
// drawn indices are.
EmpiricalMeasure indexed_measure(const ParticlePaths& paths, int node,
                                 const std::vector<int>& idx) {
    const int n = static_cast<int>(idx.size());
    Eigen::MatrixXd xs(n, paths.dim);
    std::vector<std::uint8_t> ind(n);
    for (int k = 0; k < n; ++k) {
        for (int j = 0; j < paths.dim; ++j) xs(k, j) = paths.x(node, idx[k], j);
        ind[k] = paths.is_alive(node, idx[k]) ? 1 : 0;
    }
    return EmpiricalMeasure::uniform(xs, ind);
}

double sup_node_w1(const ParticlePaths& a, const ParticlePaths& b, int count,
                   const DistanceOptions& opts) {
    double sup = 0.0;
    for (int s = 0; s < a.grid.nodes(); ++s)
        sup = std::max(sup, w1(head_measure(a, s, count), head_measure(b, s, count), opts));
    return sup;
}

void mean_se(const std::vector<double>& v, double& mean, double& se) {
    const int n = static_cast<int>(v.size());
    double sum = 0.0, sumsq = 0.0;
    for (double x : v) {
        sum += x;
        sumsq += x * x;
    }
    mean = sum / n;
    const double var = n > 1 ? std::max(0.0, (sumsq - sum * sum / n) / (n - 1)) : 0.0;
    se = std::sqrt(var / n);
}

} // namespace

ChaosReport chaos_experiment(const Model& model, const EmpiricalMeasure& m0, const TimeGrid& grid,
                             const SurvivalLaw& law, std::uint64_t seed,
                             const ChaosParams& params) {
    grid.validate();
    m0.validate();
    law.validate();
    if (params.Ns.empty()) throw UsageError("chaos sweep needs at least one system size");
    if (params.replications < 2) throw UsageError("chaos sweep needs at least two replications");
    std::vector<int> Ns = params.Ns;
    std::sort(Ns.begin(), Ns.end());
    if (Ns.front() < 1) throw UsageError("chaos sweep: system sizes must be positive");

    const int maxN = Ns.back();
    const int M = params.cloud_multiple * maxN;
    if (M < maxN) throw UsageError("chaos sweep: cloud multiple too small");
    const StoppingRule rule = StoppingRule::iid(law);

    ChaosReport rep;
    rep.cloud_size = M;

    const McKeanVlasovResult ref =
        mckean_vlasov_flow(model, m0, grid, M, rule, seed, params.picard_tol, params.picard_kmax);
    rep.picard_gap = ref.final_gap;
    rep.picard_iterations = ref.iterations;
    rep.picard_converged = ref.converged;

    // bias proxy: rerun the fixed point at half the cloud size; the halved cloud
    // shares the first M/2 noise streams, so the gap isolates the flow feedback
    if (M >= 4) {
        const McKeanVlasovResult half = mckean_vlasov_flow(model, m0, grid, M / 2, rule, seed,
                                                           params.picard_tol, params.picard_kmax);
        const int nsub = std::min(params.bias_subsample, M / 2);
        DistanceOptions d1;
        d1.method = TransportMethod::Assignment;
        rep.flow_bias_proxy = sup_node_w1(ref.cloud, half.cloud, nsub, d1);
    }

    DistanceOptions assign;
    assign.method = TransportMethod::Assignment;

    for (int N : Ns) {
        ChaosRow row;
        row.N = N;
        row.replications = params.replications;
        row.w2_replications = std::min(params.w2_replications, params.replications);
        std::vector<double> sup1(params.replications);
        std::vector<double> sup2;
        sup2.reserve(row.w2_replications);
        for (int r = 0; r < params.replications; ++r) {
            Rng init = Rng::stream(seed, static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(N), 2);
            const EmpiricalMeasure y0 = sample_iid(m0, N, init);
            std::vector<int> idx(N);
            for (int k = 0; k < N; ++k)
                idx[k] = std::min(static_cast<int>(init.uniform01() * M), M - 1);
            SimulateOptions so;
            so.replication = static_cast<std::uint64_t>(r);
            const ParticlePaths paths = simulate_system(model, y0, grid, rule, seed, so);

            double s1 = 0.0, s2 = 0.0;
            const bool with_w2 = r < row.w2_replications;
            for (int s = 0; s < grid.nodes(); ++s) {
                const EmpiricalMeasure sys = paths.measure_at(s);
                const EmpiricalMeasure refm = indexed_measure(ref.cloud, s, idx);
                const double d = w1(sys, refm, assign);
                s1 = std::max(s1, d * d);
                if (with_w2) {
                    const double e = w2(sys, refm, assign);
                    s2 = std::max(s2, e * e);
                }
            }
            sup1[r] = s1;
            if (with_w2) sup2.push_back(s2);
        }
        mean_se(sup1, row.w1sq_mean, row.w1sq_se);
        if (!sup2.empty()) mean_se(sup2, row.w2sq_mean, row.w2sq_se);
        rep.rows.push_back(row);
    }

    rep.slope = rate_fit(rep.rows);
    return rep;
}

double rate_fit(const std::vector<ChaosRow>& rows) {
    if (rows.size() < 2) throw UsageError("rate fit needs at least two system sizes");
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (const ChaosRow& r : rows) {
        if (!(r.w1sq_mean > 0.0)) throw EvalError("rate fit: nonpositive distance mean");
        const double x = std::log(static_cast<double>(r.N));
        const double y = std::log(r.w1sq_mean);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = static_cast<double>(rows.size());
    const double denom = n * sxx - sx * sx;
    if (!(std::abs(denom) > 0.0)) throw EvalError("rate fit: system sizes do not vary");
    return (n * sxy - sx * sy) / denom;
}

ConvergenceReport value_convergence_experiment(const Model& model, const EmpiricalMeasure& m0,
                                               const TimeGrid& grid, std::uint64_t seed,
                                               const ConvergenceParams& params) {
    grid.validate();
    m0.validate();
    if (params.Ns.empty()) throw UsageError("value ladder needs at least one system size");
    std::vector<int> Ns = params.Ns;
    std::sort(Ns.begin(), Ns.end());
    if (Ns.front() < 1) throw UsageError("value ladder: system sizes must be positive");
    if (params.rollout_reps < 2) throw UsageError("value ladder needs at least two rollouts");

    ConvergenceReport rep;
    rep.has_oracle = !model.coupled && static_cast<bool>(model.gbar);

    SingleTable oracle_table;
    if (rep.has_oracle) oracle_table = solve_single(model, grid, params.spec, params.kernel);

    double prev_value = std::numeric_limits<double>::quiet_NaN();
    int smallest_lattice = -1;
    for (int N : Ns) {
        ConvergenceRow row;
        row.N = N;
        const EmpiricalMeasure y0 = resample_uniform(m0, N);
        const Eigen::MatrixXd x0 = positions_of(y0);
        const std::uint32_t r0 = regime_of(y0);

        ValueTable table;
        if (N <= params.lattice_max && model.dim == 1) {
            row.backend = "lattice";
            table = solve_cascade(model, N, grid, params.spec, params.kernel);
            if (smallest_lattice < 0) smallest_lattice = N;
        } else {
            row.backend = "lsmc";
            LsmcResult fit = solve_lsmc(model, y0, grid, seed, params.lsmc);
            table = std::move(fit.table);
        }
        row.value_table = table.value_at(0, x0, r0);

        const auto policy = std::make_shared<StoppingPolicy>(&table, params.eta);
        const PolicyValue pv = evaluate_policy(model, y0, grid, StoppingRule::policy(policy),
                                               params.rollout_reps, seed);
        row.value_rollout = pv.mean;
        row.rollout_se = pv.std_error;

        if (rep.has_oracle) {
            double v = 0.0;
            for (int k = 0; k < m0.size(); ++k) {
                if (m0.indicator(k))
                    v += m0.weight(k) * oracle_table.value_at(0, m0.x1(k));
                else
                    v += m0.weight(k) * model.gbar(m0.x(k));
            }
            row.oracle = v;
        }
        if (!std::isnan(prev_value)) row.cauchy_diff = std::abs(row.value_rollout - prev_value);
        prev_value = row.value_rollout;
        rep.rows.push_back(row);
    }

    // Richardson probes on the smallest lattice size calibrate tol_disc. Time:
    // halving dt (stable, first order, so true error is about twice the probe).
    // Space: doubling h (halving h would violate the trinomial stability bound;
    // the second-order probe overstates the error threefold, hence the /3).
    if (smallest_lattice > 0) {
        const EmpiricalMeasure y0 = resample_uniform(m0, smallest_lattice);
        const Eigen::MatrixXd x0 = positions_of(y0);
        const std::uint32_t r0 = regime_of(y0);
        const ValueTable coarse = solve_cascade(model, smallest_lattice, grid, params.spec, params.kernel);
        const double v0 = coarse.value_at(0, x0, r0);
        const TimeGrid fine_t{grid.t0, grid.T, grid.n_steps * 2};
        const ValueTable ref_t = solve_cascade(model, smallest_lattice, fine_t, params.spec, params.kernel);
        double space_probe = 0.0;
        if (params.spec.n_x >= 5 && (params.spec.n_x - 1) % 2 == 0) {
            LatticeSpec wide = params.spec;
            wide.n_x = (params.spec.n_x - 1) / 2 + 1;
            const ValueTable ref_x = solve_cascade(model, smallest_lattice, grid, wide, params.kernel);
            space_probe = std::abs(ref_x.value_at(0, x0, r0) - v0) / 3.0;
        }
        rep.tol_disc =
            3.0 * (2.0 * std::abs(ref_t.value_at(0, x0, r0) - v0) + space_probe);
    }
    return rep;
}

} // namespace mfstop
