#include "mfstop/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "mfstop/kernels.hpp"

namespace mfstop {

SurvivalLaw SurvivalLaw::uniform_nodes(int n_steps) {
    SurvivalLaw law;
    const int nodes = n_steps + 1;
    law.node_prob.assign(nodes, 0.5 / nodes);
    law.never_prob = 0.5;
    return law;
}

SurvivalLaw SurvivalLaw::point(int node, int n_steps) {
    SurvivalLaw law;
    law.node_prob.assign(n_steps + 1, 0.0);
    if (node < 0) {
        law.never_prob = 1.0;
    } else {
        if (node > n_steps) throw UsageError("survival law: point node past the final node");
        law.node_prob[node] = 1.0;
    }
    return law;
}

SurvivalLaw SurvivalLaw::never(int n_steps) { return point(-1, n_steps); }

void SurvivalLaw::validate() const {
    if (node_prob.empty()) throw UsageError("survival law: empty node probabilities");
    double sum = never_prob;
    if (!(never_prob >= 0.0)) throw UsageError("survival law: negative never probability");
    for (size_t j = 0; j < node_prob.size(); ++j) {
        if (!(node_prob[j] >= 0.0))
            throw UsageError("survival law: negative probability at node " + std::to_string(j));
        sum += node_prob[j];
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw UsageError("survival law: probabilities sum to " + std::to_string(sum));
}

double SurvivalLaw::survival_at(int node) const {
    double s = never_prob;
    for (size_t j = node + 1; j < node_prob.size(); ++j) s += node_prob[j];
    return s;
}

int SurvivalLaw::sample(Rng& rng) const {
    const double u = rng.uniform01();
    double acc = 0.0;
    for (size_t j = 0; j < node_prob.size(); ++j) {
        acc += node_prob[j];
        if (u < acc) return static_cast<int>(j);
    }
    return -1;
}

StoppingRule StoppingRule::fixed(std::vector<int> nodes) {
    StoppingRule r;
    r.kind = Kind::FixedNodes;
    r.fixed_nodes = std::move(nodes);
    return r;
}

StoppingRule StoppingRule::iid(SurvivalLaw law) {
    StoppingRule r;
    r.kind = Kind::IidSurvival;
    r.law = std::move(law);
    return r;
}

StoppingRule StoppingRule::policy(std::shared_ptr<const NodeDecider> d) {
    StoppingRule r;
    r.kind = Kind::PolicyDriven;
    r.decider = std::move(d);
    return r;
}

StoppingRule iid_stopping_rule(const SurvivalLaw& law, int n_particles, Rng& rng) {
    law.validate();
    std::vector<int> nodes(n_particles);
    for (int k = 0; k < n_particles; ++k) nodes[k] = law.sample(rng);
    return StoppingRule::fixed(std::move(nodes));
}

EmpiricalMeasure ParticlePaths::measure_at(int node) const {
    Eigen::MatrixXd X(n, dim);
    std::vector<std::uint8_t> ind(n);
    for (int k = 0; k < n; ++k) {
        for (int j = 0; j < dim; ++j) X(k, j) = x(node, k, j);
        ind[k] = alive[static_cast<size_t>(node) * n + k];
    }
    return EmpiricalMeasure::uniform(X, ind);
}

namespace {

// Open-loop stop nodes, resolved before the run. Initially dead atoms never get
// a plan; their stop_node is pinned to 0 below.
std::vector<int> planned_stops(const StoppingRule& rule, int N, int n_steps, std::uint64_t seed,
                               const SimulateOptions& o) {
    std::vector<int> plan(N, -1);
    switch (rule.kind) {
    case StoppingRule::Kind::Never:
        break;
    case StoppingRule::Kind::FixedNodes: {
        const auto& fn = rule.fixed_nodes;
        if (fn.size() != 1 && static_cast<int>(fn.size()) != N)
            throw UsageError("stopping rule: fixed_nodes must have 1 or N entries");
        for (int k = 0; k < N; ++k) {
            const int node = fn.size() == 1 ? fn[0] : fn[k];
            if (node < -1 || node > n_steps)
                throw UsageError("stopping rule: fixed node out of range for particle " +
                                 std::to_string(k));
            plan[k] = node;
        }
        break;
    }
    case StoppingRule::Kind::IidSurvival: {
        rule.law.validate();
        if (static_cast<int>(rule.law.node_prob.size()) != n_steps + 1)
            throw UsageError("stopping rule: survival law node count does not match the grid");
        for (int k = 0; k < N; ++k) {
            Rng draw = Rng::stream(seed, o.replication, o.stream_ids[k], 1);
            plan[k] = rule.law.sample(draw);
        }
        break;
    }
    case StoppingRule::Kind::PolicyDriven:
        if (!rule.decider) throw UsageError("stopping rule: policy rule without a decider");
        break;
    }
    return plan;
}

} // namespace

ParticlePaths simulate_system(const Model& model, const EmpiricalMeasure& y0, const TimeGrid& grid,
                              const StoppingRule& rule, std::uint64_t seed,
                              const SimulateOptions& opts) {
    grid.validate();
    y0.validate();
    if (!y0.uniform_weights())
        throw UsageError("simulate: initial condition must be a uniform particle system");
    const int N = y0.size();
    const int d = y0.dim();
    if (d != model.dim) throw UsageError("simulate: initial condition dimension does not match model");
    const int nodes = grid.nodes();
    const double dt = grid.dt();

    SimulateOptions o = opts;
    if (o.stream_ids.empty()) {
        o.stream_ids.resize(N);
        std::iota(o.stream_ids.begin(), o.stream_ids.end(), std::uint64_t{0});
    }
    if (static_cast<int>(o.stream_ids.size()) != N)
        throw UsageError("simulate: stream_ids must have one entry per particle");
    if (o.kernel == NoiseKernel::LatticeTwoPoint && !(o.lattice_h > 0.0))
        throw UsageError("simulate: two-point kernel needs lattice_h > 0");
    if (o.frozen_flow) {
        if (!(o.frozen_flow->grid == grid))
            throw UsageError("simulate: frozen flow lives on a different time grid");
        if (static_cast<int>(o.frozen_flow->at_node.size()) != nodes)
            throw UsageError("simulate: frozen flow is missing node measures");
    }

    const std::vector<int> plan = planned_stops(rule, N, grid.n_steps, seed, o);

    ParticlePaths P;
    P.grid = grid;
    P.n = N;
    P.dim = d;
    P.xs.resize(static_cast<size_t>(nodes) * N * d);
    P.alive.assign(static_cast<size_t>(nodes) * N, 0);
    P.stop_node.assign(N, -1);
    P.stops_at.resize(nodes);
    P.seed = seed;
    P.replication = o.replication;
    P.stream_ids = o.stream_ids;
    if (o.record_measures) P.recorded_measures.reserve(nodes);

    std::vector<Rng> rngs;
    rngs.reserve(N);
    for (int k = 0; k < N; ++k) rngs.push_back(Rng::stream(seed, o.replication, o.stream_ids[k], 0));

    std::vector<double> x_cur(static_cast<size_t>(N) * d);
    std::vector<std::uint8_t> alive_cur(N);
    for (int k = 0; k < N; ++k) {
        for (int j = 0; j < d; ++j) x_cur[static_cast<size_t>(k) * d + j] = y0.x(k)[j];
        alive_cur[k] = static_cast<std::uint8_t>(y0.indicator(k));
        if (!alive_cur[k]) P.stop_node[k] = 0; // dead from the start, not a run-time stop
    }

    // Scratch measure holding the node state; coefficient callbacks see this
    // (or the frozen flow), never the mutable raw arrays.
    EmpiricalMeasure scratch = y0;
    Eigen::MatrixXd xmat;
    Eigen::VectorXd xk(d), xnew(d);

    for (int s = 0; s < nodes; ++s) {
        const double t = grid.time(s);

        if (rule.kind == StoppingRule::Kind::PolicyDriven) {
            bool any_alive = std::any_of(alive_cur.begin(), alive_cur.end(),
                                         [](std::uint8_t a) { return a != 0; });
            if (any_alive) {
                if (xmat.size() == 0) xmat.resize(N, d);
                for (int k = 0; k < N; ++k)
                    for (int j = 0; j < d; ++j) xmat(k, j) = x_cur[static_cast<size_t>(k) * d + j];
                const std::vector<int> stops = rule.decider->decide(s, t, xmat, alive_cur);
                for (int idx : stops) {
                    if (idx < 0 || idx >= N || !alive_cur[idx])
                        throw UsageError("policy stopped a dead or out-of-range particle at node " +
                                         std::to_string(s));
                    alive_cur[idx] = 0;
                    P.stop_node[idx] = s;
                    P.stops_at[s].push_back(idx);
                }
            }
        } else {
            for (int k = 0; k < N; ++k) {
                if (alive_cur[k] && plan[k] == s) {
                    alive_cur[k] = 0;
                    P.stop_node[k] = s;
                    P.stops_at[s].push_back(k);
                }
            }
        }

        std::copy(x_cur.begin(), x_cur.end(), P.xs.begin() + static_cast<size_t>(s) * N * d);
        std::copy(alive_cur.begin(), alive_cur.end(), P.alive.begin() + static_cast<size_t>(s) * N);
        for (int k = 0; k < N; ++k) {
            scratch.set_x(k, Eigen::Map<const Eigen::VectorXd>(&x_cur[static_cast<size_t>(k) * d], d));
            scratch.set_indicator(k, alive_cur[k]);
        }
        if (o.record_measures) P.recorded_measures.push_back(scratch);
        if (s == nodes - 1) break;

        const EmpiricalMeasure& mstep = o.frozen_flow ? o.frozen_flow->at_node[s] : scratch;

        for (int k = 0; k < N; ++k) {
            if (!alive_cur[k]) continue; // stopped particles freeze in place
            for (int j = 0; j < d; ++j) xk[j] = x_cur[static_cast<size_t>(k) * d + j];
            const Eigen::VectorXd b = model.b(t, xk, mstep);
            if (b.size() != d || !b.allFinite())
                throw EvalError("simulate: drift not finite for particle " + std::to_string(k) +
                                " at node " + std::to_string(s));
            if (o.kernel == NoiseKernel::Gaussian) {
                const Eigen::MatrixXd sig = model.sigma(t, xk, mstep);
                if (sig.rows() != d || !sig.allFinite())
                    throw EvalError("simulate: diffusion not finite for particle " + std::to_string(k) +
                                    " at node " + std::to_string(s));
                Eigen::VectorXd z(sig.cols());
                for (int j = 0; j < z.size(); ++j) z[j] = rngs[k].gaussian();
                xnew = xk + b * dt + std::sqrt(dt) * (sig * z);
            } else {
                for (int j = 0; j < d; ++j) {
                    const TwoPointProbs q = two_point_probs(b[j], dt, o.lattice_h);
                    const double u = rngs[k].uniform01();
                    xnew[j] = xk[j] + (u < q.up ? o.lattice_h : -o.lattice_h);
                }
            }
            if (!xnew.allFinite())
                throw EvalError("simulate: particle " + std::to_string(k) +
                                " left the finite range at node " + std::to_string(s));
            for (int j = 0; j < d; ++j) x_cur[static_cast<size_t>(k) * d + j] = xnew[j];
        }
    }
    return P;
}

std::vector<double> node_rewards(const Model& model, const ParticlePaths& paths) {
    const int nodes = paths.grid.nodes();
    const double dt = paths.grid.dt();
    std::vector<double> r(nodes, 0.0);
    for (int s = 0; s < nodes - 1; ++s) {
        const EmpiricalMeasure m = paths.measure_at(s);
        r[s] = dt * eval_F(model, paths.grid.time(s), m);
    }
    r[nodes - 1] = eval_terminal(model, paths.measure_at(nodes - 1));
    return r;
}

double objective_of_paths(const Model& model, const ParticlePaths& paths) {
    const std::vector<double> r = node_rewards(model, paths);
    double total = 0.0;
    for (double v : r) total += v;
    return total;
}

EmpiricalMeasure resample_uniform(const EmpiricalMeasure& m, int M) {
    m.validate();
    if (M < 1) throw UsageError("resample: target atom count must be positive");
    const int n = m.size();
    std::vector<int> counts(n, 0);
    std::vector<std::pair<double, int>> rem(n);
    long long assigned = 0;
    for (int k = 0; k < n; ++k) {
        const double exact = m.weight(k) * M;
        counts[k] = static_cast<int>(std::floor(exact));
        assigned += counts[k];
        rem[k] = {exact - counts[k], k};
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (long long i = 0; i < M - assigned; ++i) counts[rem[i].second] += 1;

    EmpiricalMeasure out(m.dim());
    out.reserve(M);
    const double w = 1.0 / M;
    for (int k = 0; k < n; ++k)
        for (int c = 0; c < counts[k]; ++c) out.add_atom(m.x(k), m.indicator(k), w);
    return out;
}

namespace {

// Paired-atom RMS in the product metric, maximised over nodes. Both flows come
// from the same cloud so atom order matches; this upper-bounds the node-wise
// Wasserstein distance without any matching work.
double paired_flow_gap(const MeasureFlow& a, const MeasureFlow& b) {
    double worst = 0.0;
    for (size_t s = 0; s < a.at_node.size(); ++s) {
        const EmpiricalMeasure& ma = a.at_node[s];
        const EmpiricalMeasure& mb = b.at_node[s];
        double acc = 0.0;
        for (int k = 0; k < ma.size(); ++k) {
            acc += (ma.x(k) - mb.x(k)).squaredNorm();
            const double di = ma.indicator(k) - mb.indicator(k);
            acc += di * di;
        }
        worst = std::max(worst, std::sqrt(acc / ma.size()));
    }
    return worst;
}

} // namespace

McKeanVlasovResult mckean_vlasov_flow(const Model& model, const EmpiricalMeasure& m0,
                                      const TimeGrid& grid, int M, const StoppingRule& rule,
                                      std::uint64_t seed, double tol, int k_max) {
    grid.validate();
    if (k_max < 1) throw UsageError("mean-field iteration: k_max must be positive");
    if (rule.kind == StoppingRule::Kind::PolicyDriven)
        throw UsageError("mean-field iteration: only open-loop stopping rules are supported");
    const EmpiricalMeasure y0 = resample_uniform(m0, M);

    SimulateOptions so;
    so.replication = kCloudReplication;

    McKeanVlasovResult res;
    MeasureFlow prev;
    prev.grid = grid;
    prev.at_node.assign(grid.nodes(), y0); // crude frozen guess, replaced on the first pass

    for (int it = 1; it <= k_max; ++it) {
        so.frozen_flow = &prev;
        ParticlePaths cloud = simulate_system(model, y0, grid, rule, seed, so);
        MeasureFlow next;
        next.grid = grid;
        next.at_node.reserve(grid.nodes());
        for (int s = 0; s < grid.nodes(); ++s) next.at_node.push_back(cloud.measure_at(s));

        const double gap = paired_flow_gap(next, prev);
        res.gaps.push_back(gap);
        res.iterations = it;
        res.final_gap = gap;
        res.cloud = std::move(cloud);
        prev = std::move(next);
        if (gap <= tol) {
            res.converged = true;
            break;
        }
    }
    res.flow = std::move(prev);
    return res;
}

MomentReport moment_check(const ParticlePaths& paths, int p) {
    if (p < 1) throw UsageError("moment check: order must be at least 1");
    const int nodes = paths.grid.nodes();
    const int N = paths.n;
    MomentReport rep;

    auto norm_at = [&](int s, int k) {
        double acc = 0.0;
        for (int j = 0; j < paths.dim; ++j) {
            const double v = paths.x(s, k, j);
            acc += v * v;
        }
        return std::sqrt(acc);
    };

    double sup_acc = 0.0;
    for (int k = 0; k < N; ++k) {
        double sup = 0.0;
        for (int s = 0; s < nodes; ++s) sup = std::max(sup, norm_at(s, k));
        sup_acc += std::pow(sup, p);
    }
    rep.sup_moment = sup_acc / N;

    for (int L = paths.grid.n_steps; L >= 1; L /= 2) {
        double acc = 0.0;
        long long windows = 0;
        for (int start = 0; start + L <= paths.grid.n_steps; start += L) {
            for (int k = 0; k < N; ++k) {
                double sup = 0.0;
                for (int s = start + 1; s <= start + L; ++s) {
                    double d2 = 0.0;
                    for (int j = 0; j < paths.dim; ++j) {
                        const double dv = paths.x(s, k, j) - paths.x(start, k, j);
                        d2 += dv * dv;
                    }
                    sup = std::max(sup, std::sqrt(d2));
                }
                acc += std::pow(sup, p);
                ++windows;
            }
        }
        rep.increment_by_window[L] = windows > 0 ? acc / windows : 0.0;
        if (L == 1) break;
    }
    return rep;
}

} // namespace mfstop
