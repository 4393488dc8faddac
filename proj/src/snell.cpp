#include "mfstop/snell.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>

#include "mfstop/policy.hpp"

namespace mfstop {

namespace regime {
std::vector<int> alive_list(std::uint32_t i, int n) {
    std::vector<int> out;
    out.reserve(alive_count(i));
    for (int k = 0; k < n; ++k)
        if (is_alive(i, k)) out.push_back(k);
    return out;
}
} // namespace regime

std::uint32_t regime_of(const EmpiricalMeasure& m) {
    if (m.size() > 32) throw UsageError("regime masks support at most 32 particles");
    std::uint32_t r = 0;
    for (int k = 0; k < m.size(); ++k)
        if (m.indicator(k)) r |= 1u << k;
    return r;
}

Eigen::MatrixXd positions_of(const EmpiricalMeasure& m) {
    Eigen::MatrixXd x(m.size(), m.dim());
    for (int k = 0; k < m.size(); ++k) x.row(k) = m.x(k).transpose();
    return x;
}

void LatticeSpec::validate() const {
    if (!(x_min < x_max)) throw UsageError("lattice: x_min must be below x_max");
    if (n_x < 2) throw UsageError("lattice: need at least two grid points");
    if (!(clamp_tolerance >= 0.0)) throw UsageError("lattice: clamp tolerance must be nonnegative");
}

double ValueTable::terminal_of(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
    if (!model.g) throw EvalError("value table has no terminal payoff (model was not rebuilt)");
    EmpiricalMeasure m(static_cast<int>(x.cols()));
    m.reserve(static_cast<int>(x.rows()));
    const double w = 1.0 / x.rows();
    for (int k = 0; k < x.rows(); ++k) m.add_atom(x.row(k).transpose(), 1, w);
    return eval_terminal(model, m);
}

namespace {
constexpr int kMaxLatticeN = 3;
} // namespace

double ValueTable::value_at(int node, const Eigen::Ref<const Eigen::MatrixXd>& x,
                            std::uint32_t regime) const {
    if (node < 0 || node >= grid.nodes()) throw UsageError("value query off the time grid");
    if (x.rows() != n_particles) throw UsageError("value query has wrong particle count");
    const int N = n_particles;

    if (backend == Backend::Lattice) {
        if (x.cols() != 1) throw UsageError("lattice tables are one-dimensional");
        if (regime >= values[node].size()) throw UsageError("value query regime out of range");
        const double h = spec.h();
        int j[kMaxLatticeN];
        double w[kMaxLatticeN];
        for (int k = 0; k < N; ++k) {
            double q = (x(k, 0) - spec.x_min) / h;
            if (q < 0.0) {
                if (spec.x_min - x(k, 0) > spec.clamp_tolerance)
                    throw EvalError("value query left the lattice low at coordinate " +
                                    std::to_string(k));
                q = 0.0;
                ++query_clamps;
            } else if (q > spec.n_x - 1) {
                if (x(k, 0) - spec.x_max > spec.clamp_tolerance)
                    throw EvalError("value query left the lattice high at coordinate " +
                                    std::to_string(k));
                q = spec.n_x - 1;
                ++query_clamps;
            }
            int jj = static_cast<int>(q);
            if (jj > spec.n_x - 2) jj = spec.n_x - 2;
            j[k] = jj;
            w[k] = q - jj;
        }
        const std::vector<double>& tab = values[node][regime];
        double acc = 0.0;
        for (std::uint32_t c = 0; c < (1u << N); ++c) {
            double wt = 1.0;
            size_t idx = 0, stride = 1;
            for (int k = 0; k < N; ++k) {
                const bool hi = (c >> k) & 1u;
                wt *= hi ? w[k] : 1.0 - w[k];
                idx += static_cast<size_t>(j[k] + (hi ? 1 : 0)) * stride;
                stride *= spec.n_x;
            }
            if (wt != 0.0) acc += wt * tab[idx];
        }
        return acc;
    }

    // Regression backend: fitted continuation vs the single-drop obstacle chain,
    // bottoming out at the exact terminal payoff of the frozen configuration.
    // Fits cover only the alive particles' remaining payoff; every stopped
    // particle immediately accounts for its frozen terminal reward, which keeps
    // that part exact and out of the regression noise.
    const double gN = terminal_of(x);
    if (node == grid.nodes() - 1 || regime == 0) return gN;
    if (!model.gbar) throw EvalError("value table has no per-particle terminal payoff");
    std::vector<double> gb(N);
    for (int k = 0; k < N; ++k) gb[k] = model.gbar(x.row(k).transpose()) / N;
    std::map<std::uint32_t, double> memo;
    std::function<double(std::uint32_t)> rec = [&](std::uint32_t mask) -> double {
        if (mask == 0) return gN;
        auto it = memo.find(mask);
        if (it != memo.end()) return it->second;
        double best = -std::numeric_limits<double>::infinity();
        const LsmcFit& fit = fits[node];
        if (fit.coef.size() > 0) {
            double frozen = 0.0;
            for (int k = 0; k < N; ++k)
                if (!regime::is_alive(mask, k)) frozen += gb[k];
            best = fit.coef.dot(lsmc_features(x, mask, N)) + frozen;
        }
        for (int k = 0; k < N; ++k)
            if (regime::is_alive(mask, k)) best = std::max(best, rec(regime::drop(mask, k)));
        memo.emplace(mask, best);
        return best;
    };
    return rec(regime);
}

Eigen::VectorXd lsmc_features(const Eigen::Ref<const Eigen::MatrixXd>& x, std::uint32_t regime,
                              int N) {
    double a1 = 0.0, a2 = 0.0, d1 = 0.0, d2 = 0.0;
    int alive = 0;
    for (int k = 0; k < N; ++k) {
        const double v = x(k, 0);
        if (regime::is_alive(regime, k)) {
            a1 += v;
            a2 += v * v;
            ++alive;
        } else {
            d1 += v;
            d2 += v * v;
        }
    }
    a1 /= N;
    a2 /= N;
    d1 /= N;
    d2 /= N;
    const double r = static_cast<double>(alive) / N;
    Eigen::VectorXd phi(kLsmcFeatures);
    phi << 1.0, r, r * r, a1, a2, a1 * a1, r * a1, d1, d2, a1 * d1;
    return phi;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

template <typename T>
void put_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw UsageError("value table file truncated");
    return v;
}
void put_str(std::ostream& os, const std::string& s) {
    put_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string get_str(std::istream& is) {
    const auto n = get_pod<std::uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw UsageError("value table file truncated");
    return s;
}
constexpr char kMagic[8] = {'M', 'F', 'S', 'T', 'V', 'T', '0', '1'};

} // namespace

void save_table(const std::string& path, const ValueTable& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw UsageError("cannot open " + path + " for writing");
    os.write(kMagic, sizeof(kMagic));
    put_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.backend));
    put_str(os, t.model_name);
    put_str(os, t.model_params.is_null() ? std::string("{}") : t.model_params.dump());
    put_pod<std::int32_t>(os, t.n_particles);
    put_pod<double>(os, t.grid.t0);
    put_pod<double>(os, t.grid.T);
    put_pod<std::int32_t>(os, t.grid.n_steps);
    put_pod<double>(os, t.spec.x_min);
    put_pod<double>(os, t.spec.x_max);
    put_pod<std::int32_t>(os, t.spec.n_x);
    put_pod<double>(os, t.spec.clamp_tolerance);
    put_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.kernel));
    put_pod<double>(os, t.interp_error_estimate);
    put_pod<double>(os, t.eta_default);
    put_pod<std::int64_t>(os, t.clip_events);
    put_pod<std::int64_t>(os, t.boundary_events);
    put_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.warnings.size()));
    for (const auto& w : t.warnings) put_str(os, w);

    if (t.backend == ValueTable::Backend::Lattice) {
        put_pod<std::int32_t>(os, static_cast<std::int32_t>(t.values.size()));
        put_pod<std::int32_t>(os, t.values.empty() ? 0 : static_cast<std::int32_t>(t.values[0].size()));
        for (const auto& node : t.values)
            for (const auto& arr : node) {
                put_pod<std::uint64_t>(os, arr.size());
                os.write(reinterpret_cast<const char*>(arr.data()),
                         static_cast<std::streamsize>(arr.size() * sizeof(double)));
            }
    } else {
        put_pod<std::int32_t>(os, t.n_features);
        put_pod<std::int32_t>(os, static_cast<std::int32_t>(t.fits.size()));
        for (const auto& f : t.fits) {
            put_pod<std::int32_t>(os, f.samples);
            put_pod<std::uint8_t>(os, f.ridged ? 1 : 0);
            put_pod<std::int32_t>(os, static_cast<std::int32_t>(f.coef.size()));
            os.write(reinterpret_cast<const char*>(f.coef.data()),
                     static_cast<std::streamsize>(f.coef.size() * sizeof(double)));
        }
    }
    if (!os) throw UsageError("failed writing value table to " + path);
}

ValueTable load_table(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw UsageError("cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw UsageError(path + " is not a value table file");
    ValueTable t;
    t.backend = static_cast<ValueTable::Backend>(get_pod<std::uint8_t>(is));
    t.model_name = get_str(is);
    t.model_params = nlohmann::json::parse(get_str(is));
    t.n_particles = get_pod<std::int32_t>(is);
    t.grid.t0 = get_pod<double>(is);
    t.grid.T = get_pod<double>(is);
    t.grid.n_steps = get_pod<std::int32_t>(is);
    t.spec.x_min = get_pod<double>(is);
    t.spec.x_max = get_pod<double>(is);
    t.spec.n_x = get_pod<std::int32_t>(is);
    t.spec.clamp_tolerance = get_pod<double>(is);
    t.kernel = static_cast<LatticeKernel>(get_pod<std::uint8_t>(is));
    t.interp_error_estimate = get_pod<double>(is);
    t.eta_default = get_pod<double>(is);
    t.clip_events = get_pod<std::int64_t>(is);
    t.boundary_events = get_pod<std::int64_t>(is);
    const auto nw = get_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < nw; ++i) t.warnings.push_back(get_str(is));

    if (t.backend == ValueTable::Backend::Lattice) {
        const int nodes = get_pod<std::int32_t>(is);
        const int regimes = get_pod<std::int32_t>(is);
        t.values.assign(nodes, std::vector<std::vector<double>>(regimes));
        for (int s = 0; s < nodes; ++s)
            for (int r = 0; r < regimes; ++r) {
                const auto n = get_pod<std::uint64_t>(is);
                t.values[s][r].resize(n);
                is.read(reinterpret_cast<char*>(t.values[s][r].data()),
                        static_cast<std::streamsize>(n * sizeof(double)));
                if (!is) throw UsageError("value table file truncated");
            }
    } else {
        t.n_features = get_pod<std::int32_t>(is);
        const int nodes = get_pod<std::int32_t>(is);
        t.fits.assign(nodes, LsmcFit{});
        for (int s = 0; s < nodes; ++s) {
            LsmcFit& f = t.fits[s];
            f.samples = get_pod<std::int32_t>(is);
            f.ridged = get_pod<std::uint8_t>(is) != 0;
            const int n = get_pod<std::int32_t>(is);
            f.coef.resize(n);
            is.read(reinterpret_cast<char*>(f.coef.data()),
                    static_cast<std::streamsize>(n * sizeof(double)));
            if (!is) throw UsageError("value table file truncated");
        }
    }

    try {
        t.model = make_builtin(t.model_name, t.model_params);
    } catch (const std::exception& e) {
        if (t.backend == ValueTable::Backend::Lsmc)
            throw ValidationError("cannot rebuild the table's model: " + std::string(e.what()));
        t.warnings.push_back(std::string("model not rebuilt on load: ") + e.what());
    }
    return t;
}

// ---------------------------------------------------------------------------
// lattice cascade

ValueTable solve_cascade(const Model& model, int N, const TimeGrid& grid, const LatticeSpec& spec,
                         LatticeKernel kernel, const CascadeOptions& opts) {
    grid.validate();
    spec.validate();
    if (model.dim != 1) throw UsageError("lattice cascade supports one-dimensional models only");
    if (N < 1 || N > kMaxLatticeN)
        throw UsageError("lattice cascade supports 1 <= N <= " + std::to_string(kMaxLatticeN));
    const int nodes = grid.nodes();
    const int nx = spec.n_x;
    const int R = 1 << N;
    size_t P = 1;
    for (int k = 0; k < N; ++k) P *= static_cast<size_t>(nx);
    const double need = static_cast<double>(nodes) * R * static_cast<double>(P);
    if (need > opts.max_table_doubles)
        throw UsageError("lattice table would need " + std::to_string(static_cast<long long>(need)) +
                         " doubles, over the budget of " +
                         std::to_string(static_cast<long long>(opts.max_table_doubles)));

    ValueTable T;
    T.backend = ValueTable::Backend::Lattice;
    T.model_name = model.name;
    T.model_params = model.params;
    T.model = model;
    T.n_particles = N;
    T.grid = grid;
    T.spec = spec;
    T.kernel = kernel;

    size_t stride[kMaxLatticeN];
    stride[0] = 1;
    for (int k = 1; k < N; ++k) stride[k] = stride[k - 1] * nx;
    std::vector<double> pts(nx);
    for (int j = 0; j < nx; ++j) pts[j] = spec.point(j);

    Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(N, 1);
    std::vector<std::uint8_t> ones(N, 1);
    EmpiricalMeasure scratch = EmpiricalMeasure::uniform(zero, ones);

    // odometer over the product grid, keeping the scratch measure in sync
    int j[kMaxLatticeN];
    auto reset_odometer = [&]() {
        for (int k = 0; k < N; ++k) {
            j[k] = 0;
            scratch.set_x1(k, pts[0]);
        }
    };
    auto advance_odometer = [&]() {
        for (int k = 0; k < N; ++k) {
            if (++j[k] < nx) {
                scratch.set_x1(k, pts[j[k]]);
                return;
            }
            j[k] = 0;
            scratch.set_x1(k, pts[0]);
        }
    };

    // terminal payoff table, shared by the t = T and regime = 0 boundaries
    std::vector<double> gn(P);
    reset_odometer();
    for (size_t idx = 0; idx < P; ++idx) {
        gn[idx] = eval_terminal(model, scratch);
        advance_odometer();
    }

    T.values.assign(nodes, std::vector<std::vector<double>>(R));
    for (int r = 0; r < R; ++r) T.values[nodes - 1][r] = gn;
    for (int s = 0; s < nodes - 1; ++s) T.values[s][0] = gn;

    std::vector<std::uint32_t> order;
    for (std::uint32_t r = 1; r < static_cast<std::uint32_t>(R); ++r) order.push_back(r);
    std::sort(order.begin(), order.end(), [](std::uint32_t a, std::uint32_t b) {
        const int ca = regime::alive_count(a), cb = regime::alive_count(b);
        return ca != cb ? ca < cb : a < b;
    });

    const double dt = grid.dt();
    const double h = spec.h();
    Eigen::VectorXd xk(1);
    double second_diff = 0.0;

    for (int s = nodes - 2; s >= 0; --s) {
        const double t = grid.time(s);
        const auto& next = T.values[s + 1];
        for (std::uint32_t r : order) {
            const std::vector<int> A = regime::alive_list(r, N);
            const int a = static_cast<int>(A.size());
            for (int k = 0; k < N; ++k) scratch.set_indicator(k, regime::is_alive(r, k) ? 1 : 0);
            std::vector<double>& out = T.values[s][r];
            out.assign(P, 0.0);
            const std::vector<double>& nx_r = next[r];

            double pu[kMaxLatticeN], pm[kMaxLatticeN], pd[kMaxLatticeN];
            size_t ou[kMaxLatticeN], om[kMaxLatticeN], od[kMaxLatticeN];

            reset_odometer();
            for (size_t idx = 0; idx < P; ++idx) {
                const double run = dt * eval_F(model, t, scratch);

                size_t base = idx;
                for (int ai = 0; ai < a; ++ai) {
                    const int k = A[ai];
                    base -= static_cast<size_t>(j[k]) * stride[k];
                    xk[0] = pts[j[k]];
                    const double b = model.b(t, xk, scratch)(0);
                    double up, mid, down;
                    if (kernel == LatticeKernel::Trinomial) {
                        const double sg = model.sigma(t, xk, scratch)(0, 0);
                        const TrinomialProbs p3 = trinomial_probs(b, sg, dt, h);
                        if (p3.clipped) ++T.clip_events;
                        up = p3.up;
                        mid = p3.mid;
                        down = p3.down;
                    } else {
                        const TwoPointProbs p2 = two_point_probs(b, dt, h);
                        if (p2.clipped) ++T.clip_events;
                        up = p2.up;
                        mid = 0.0;
                        down = p2.down;
                    }
                    int jup = j[k] + 1, jdn = j[k] - 1;
                    if (jup > nx - 1) {
                        jup = nx - 1;
                        if (up > 0.0) ++T.boundary_events;
                    }
                    if (jdn < 0) {
                        jdn = 0;
                        if (down > 0.0) ++T.boundary_events;
                    }
                    pu[ai] = up;
                    pm[ai] = mid;
                    pd[ai] = down;
                    ou[ai] = static_cast<size_t>(jup) * stride[k];
                    om[ai] = static_cast<size_t>(j[k]) * stride[k];
                    od[ai] = static_cast<size_t>(jdn) * stride[k];
                }

                double ev = 0.0;
                if (kernel == LatticeKernel::Trinomial) {
                    int ncombo = 1;
                    for (int ai = 0; ai < a; ++ai) ncombo *= 3;
                    for (int c = 0; c < ncombo; ++c) {
                        double w = 1.0;
                        size_t tix = base;
                        int tmp = c;
                        for (int ai = 0; ai < a; ++ai) {
                            const int digit = tmp % 3;
                            tmp /= 3;
                            if (digit == 0) {
                                w *= pd[ai];
                                tix += od[ai];
                            } else if (digit == 1) {
                                w *= pm[ai];
                                tix += om[ai];
                            } else {
                                w *= pu[ai];
                                tix += ou[ai];
                            }
                        }
                        if (w != 0.0) ev += w * nx_r[tix];
                    }
                } else {
                    for (std::uint32_t c = 0; c < (1u << a); ++c) {
                        double w = 1.0;
                        size_t tix = base;
                        for (int ai = 0; ai < a; ++ai) {
                            if ((c >> ai) & 1u) {
                                w *= pu[ai];
                                tix += ou[ai];
                            } else {
                                w *= pd[ai];
                                tix += od[ai];
                            }
                        }
                        if (w != 0.0) ev += w * nx_r[tix];
                    }
                }
                const double cont = run + ev;

                double obs = -std::numeric_limits<double>::infinity();
                for (int ai = 0; ai < a; ++ai)
                    obs = std::max(obs, T.values[s][regime::drop(r, A[ai])][idx]);
                out[idx] = std::max(obs, cont);
                advance_odometer();
            }

            // central second differences feed the interpolation error estimate
            for (int k = 0; k < N; ++k) {
                const size_t st = stride[k];
                size_t outer = P / (static_cast<size_t>(nx) * st);
                for (size_t o = 0; o < outer; ++o)
                    for (size_t in = 0; in < st; ++in) {
                        const size_t row = o * nx * st + in;
                        for (int q = 1; q < nx - 1; ++q) {
                            const double d2 = out[row + (q + 1) * st] - 2.0 * out[row + q * st] +
                                              out[row + (q - 1) * st];
                            second_diff = std::max(second_diff, std::abs(d2));
                        }
                    }
            }
        }
    }

    T.interp_error_estimate = second_diff / 8.0;
    T.eta_default = 10.0 * T.interp_error_estimate;
    if (T.clip_events > 0)
        T.warnings.push_back("transition probabilities clipped at " +
                             std::to_string(T.clip_events) + " evaluations");
    if (T.boundary_events > 0)
        T.warnings.push_back("transitions clamped at the lattice edge " +
                             std::to_string(T.boundary_events) + " times");
    return T;
}

// ---------------------------------------------------------------------------
// single-particle oracle

SingleTable solve_single(const Model& model, const TimeGrid& grid, const LatticeSpec& spec,
                         LatticeKernel kernel) {
    grid.validate();
    spec.validate();
    if (model.coupled) throw UsageError("single-particle solver requires a decoupled model");
    if (model.dim != 1) throw UsageError("single-particle solver is one-dimensional");
    if (!model.gbar) throw UsageError("single-particle solver requires an additive terminal payoff");

    SingleTable S;
    S.grid = grid;
    S.spec = spec;
    S.kernel = kernel;
    const int nodes = grid.nodes();
    const int nx = spec.n_x;
    const double dt = grid.dt();
    const double h = spec.h();

    std::vector<double> pts(nx);
    for (int jj = 0; jj < nx; ++jj) pts[jj] = spec.point(jj);
    Eigen::VectorXd xk(1);
    EmpiricalMeasure placeholder = EmpiricalMeasure::dirac(Eigen::VectorXd::Zero(1), 1);

    S.v.assign(nodes, std::vector<double>(nx));
    std::vector<double> gb(nx);
    for (int jj = 0; jj < nx; ++jj) {
        xk[0] = pts[jj];
        gb[jj] = model.gbar(xk);
        S.v[nodes - 1][jj] = gb[jj];
    }

    double second_diff = 0.0;
    for (int s = nodes - 2; s >= 0; --s) {
        const double t = grid.time(s);
        const std::vector<double>& vn = S.v[s + 1];
        std::vector<double>& vs = S.v[s];
        for (int jj = 0; jj < nx; ++jj) {
            xk[0] = pts[jj];
            const double run = dt * model.f(t, xk, placeholder);
            const double b = model.b(t, xk, placeholder)(0);
            double up, mid, down;
            if (kernel == LatticeKernel::Trinomial) {
                const double sg = model.sigma(t, xk, placeholder)(0, 0);
                const TrinomialProbs p3 = trinomial_probs(b, sg, dt, h);
                if (p3.clipped) ++S.clip_events;
                up = p3.up;
                mid = p3.mid;
                down = p3.down;
            } else {
                const TwoPointProbs p2 = two_point_probs(b, dt, h);
                if (p2.clipped) ++S.clip_events;
                up = p2.up;
                mid = 0.0;
                down = p2.down;
            }
            int jup = jj + 1, jdn = jj - 1;
            if (jup > nx - 1) {
                jup = nx - 1;
                if (up > 0.0) ++S.boundary_events;
            }
            if (jdn < 0) {
                jdn = 0;
                if (down > 0.0) ++S.boundary_events;
            }
            // same accumulation order as the cascade's combo loop (down, mid, up)
            double ev = 0.0;
            if (down != 0.0) ev += down * vn[jdn];
            if (mid != 0.0) ev += mid * vn[jj];
            if (up != 0.0) ev += up * vn[jup];
            vs[jj] = std::max(gb[jj], run + ev);
        }
        for (int q = 1; q < nx - 1; ++q)
            second_diff = std::max(second_diff, std::abs(vs[q + 1] - 2.0 * vs[q] + vs[q - 1]));
    }
    S.interp_error_estimate = second_diff / 8.0;
    return S;
}

double SingleTable::value_at(int node, double x) const {
    if (node < 0 || node >= grid.nodes()) throw UsageError("value query off the time grid");
    const double h = spec.h();
    double q = (x - spec.x_min) / h;
    if (q < 0.0) {
        if (spec.x_min - x > spec.clamp_tolerance) throw EvalError("value query left the lattice low");
        q = 0.0;
        ++query_clamps;
    } else if (q > spec.n_x - 1) {
        if (x - spec.x_max > spec.clamp_tolerance) throw EvalError("value query left the lattice high");
        q = spec.n_x - 1;
        ++query_clamps;
    }
    int jj = static_cast<int>(q);
    if (jj > spec.n_x - 2) jj = spec.n_x - 2;
    const double w = q - jj;
    const std::vector<double>& row = v[node];
    if (w == 0.0) return row[jj];
    return (1.0 - w) * row[jj] + w * row[jj + 1];
}

// ---------------------------------------------------------------------------
// brute force

double brute_force_value(const Model& model, const EmpiricalMeasure& y0, const TimeGrid& grid,
                         double h) {
    grid.validate();
    y0.validate();
    if (model.dim != 1 || y0.dim() != 1) throw UsageError("brute force supports d = 1 only");
    if (!y0.uniform_weights()) throw UsageError("brute force needs a uniform particle system");
    const int N = y0.size();
    if (N > 2) throw UsageError("brute force supports N <= 2");
    if (grid.n_steps > 4) throw UsageError("brute force supports n_steps <= 4");
    if (!(h > 0.0)) throw UsageError("brute force needs a positive lattice step");

    const double dt = grid.dt();
    EmpiricalMeasure scratch = y0;
    Eigen::VectorXd xk(1);

    std::function<double(int, std::array<double, 2>, std::uint32_t)> rec =
        [&](int s, std::array<double, 2> xs, std::uint32_t mask) -> double {
        auto configure = [&](std::uint32_t m) {
            for (int k = 0; k < N; ++k) {
                scratch.set_x1(k, xs[k]);
                scratch.set_indicator(k, regime::is_alive(m, k) ? 1 : 0);
            }
        };
        if (s == grid.n_steps) {
            configure(mask);
            return eval_terminal(model, scratch);
        }
        const double t = grid.time(s);
        double best = -std::numeric_limits<double>::infinity();
        std::uint32_t sub = mask; // subset stopped at this node
        while (true) {
            const std::uint32_t keep = mask & ~sub;
            double val;
            if (keep == 0) {
                configure(0);
                val = eval_terminal(model, scratch); // frozen to T
            } else {
                configure(keep);
                const double run = dt * eval_F(model, t, scratch);
                const std::vector<int> A = regime::alive_list(keep, N);
                const int a = static_cast<int>(A.size());
                double pu[2], pd[2];
                for (int ai = 0; ai < a; ++ai) {
                    xk[0] = xs[A[ai]];
                    const double b = model.b(t, xk, scratch)(0);
                    const TwoPointProbs p2 = two_point_probs(b, dt, h);
                    pu[ai] = p2.up;
                    pd[ai] = p2.down;
                }
                double ev = 0.0;
                for (std::uint32_t c = 0; c < (1u << a); ++c) {
                    double w = 1.0;
                    std::array<double, 2> xs2 = xs;
                    for (int ai = 0; ai < a; ++ai) {
                        if ((c >> ai) & 1u) {
                            w *= pu[ai];
                            xs2[A[ai]] += h;
                        } else {
                            w *= pd[ai];
                            xs2[A[ai]] -= h;
                        }
                    }
                    if (w != 0.0) ev += w * rec(s + 1, xs2, keep);
                    configure(keep); // rec clobbered the scratch state
                }
                val = run + ev;
            }
            best = std::max(best, val);
            if (sub == 0) break;
            sub = (sub - 1) & mask;
        }
        return best;
    };

    std::array<double, 2> xs0{0.0, 0.0};
    for (int k = 0; k < N; ++k) xs0[k] = y0.x1(k);
    return rec(0, xs0, regime_of(y0));
}

// ---------------------------------------------------------------------------
// regression Monte Carlo

LsmcResult solve_lsmc(const Model& model, const EmpiricalMeasure& y0, const TimeGrid& grid,
                      std::uint64_t seed, const LsmcOptions& opts) {
    grid.validate();
    y0.validate();
    if (model.dim != 1 || y0.dim() != 1) throw UsageError("regression solver is one-dimensional");
    if (!y0.uniform_weights()) throw UsageError("regression solver needs a uniform particle system");
    if (!model.gbar) throw UsageError("regression solver needs a per-particle terminal payoff");
    const int N = y0.size();
    // Each regression target queries value_at on the next node, which recurses
    // over stop subsets; that is affordable only for moderate particle counts.
    if (N > 12) throw UsageError("regression solver supports N <= 12");
    if (opts.n_paths < 2 || opts.eval_paths < 2)
        throw UsageError("regression solver needs at least two paths per round");

    LsmcResult res;
    ValueTable& T = res.table;
    T.backend = ValueTable::Backend::Lsmc;
    T.model_name = model.name;
    T.model_params = model.params;
    T.model = model;
    T.n_particles = N;
    T.grid = grid;
    T.n_features = kLsmcFeatures;
    T.eta_default = 0.0;
    const int nodes = grid.nodes();
    T.fits.assign(nodes, LsmcFit{});

    SurvivalLaw law = opts.exploration.node_prob.empty() ? SurvivalLaw::uniform_nodes(grid.n_steps)
                                                         : opts.exploration;
    law.validate();
    const StoppingRule explore = StoppingRule::iid(law);

    struct Acc {
        Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(kLsmcFeatures, kLsmcFeatures);
        Eigen::VectorXd xty = Eigen::VectorXd::Zero(kLsmcFeatures);
        int n = 0;
    };

    long long ridge_count = 0, thin_nodes = 0;

    auto fit_node = [&](int s, const Acc& A) {
        if (A.n < opts.min_layer_samples) {
            if (A.n > 0) ++thin_nodes;
            return; // keep whatever fit the previous round produced
        }
        Eigen::MatrixXd xtx = A.xtx.selfadjointView<Eigen::Lower>();
        Eigen::VectorXd c = xtx.ldlt().solve(A.xty);
        const double scale = std::max(1.0, A.xty.norm());
        bool ok = c.allFinite() && (xtx * c - A.xty).norm() <= 1e-6 * scale;
        bool ridged = false;
        double lam = 1e-10 * std::max(xtx.trace(), 1.0);
        for (int tries = 0; !ok && tries < 6; ++tries) {
            const Eigen::MatrixXd reg =
                xtx + lam * Eigen::MatrixXd::Identity(kLsmcFeatures, kLsmcFeatures);
            c = reg.ldlt().solve(A.xty);
            ok = c.allFinite() && (reg * c - A.xty).norm() <= 1e-6 * scale;
            ridged = true;
            lam *= 100.0;
        }
        if (!ok) {
            ++thin_nodes;
            return;
        }
        if (ridged) ++ridge_count;
        LsmcFit& f = T.fits[s];
        f.coef = c;
        f.samples = A.n;
        f.ridged = ridged;
    };

    // One round: simulate paths (iid exploration, later mostly greedy), then a
    // backward fitted-value-iteration pass. The target at node s is the one-step
    // reward plus value_at(s+1) of the same regime, so it prices optimal future
    // stopping under the current fits rather than the behavior rule's choices,
    // and only the visited-state distribution depends on the behavior rule.
    auto fit_round = [&](int round) {
        const int n_explore =
            round == 0 ? opts.n_paths
                       : static_cast<int>(std::lround(opts.exploration_fraction * opts.n_paths));
        const auto greedy = std::make_shared<StoppingPolicy>(&T, 0.0);
        std::vector<ParticlePaths> batch;
        batch.reserve(opts.n_paths);
        std::vector<std::vector<double>> batch_rewards;
        batch_rewards.reserve(opts.n_paths);
        for (int p = 0; p < opts.n_paths; ++p) {
            SimulateOptions so;
            so.replication = static_cast<std::uint64_t>(round) * opts.n_paths + p;
            const StoppingRule rule = p < n_explore ? explore : StoppingRule::policy(greedy);
            batch.push_back(simulate_system(model, y0, grid, rule, seed, so));
            batch_rewards.push_back(node_rewards(model, batch.back()));
        }

        Eigen::MatrixXd xcfg(N, 1), xnext(N, 1);
        Acc acc;
        for (int s = nodes - 2; s >= 0; --s) {
            acc.xtx.setZero();
            acc.xty.setZero();
            acc.n = 0;
            for (int p = 0; p < opts.n_paths; ++p) {
                const ParticlePaths& paths = batch[p];
                std::uint32_t mask = 0;
                for (int k = 0; k < N; ++k) {
                    if (paths.is_alive(s, k)) mask |= 1u << k;
                    xcfg(k, 0) = paths.x(s, k, 0);
                    xnext(k, 0) = paths.x(s + 1, k, 0);
                }
                if (mask == 0) continue; // frozen, terminal payoff is exact there
                double frozen = 0.0;
                for (int k = 0; k < N; ++k)
                    if (!regime::is_alive(mask, k))
                        frozen += model.gbar(xnext.row(k).transpose()) / N;
                const double target =
                    batch_rewards[p][s] + T.value_at(s + 1, xnext, mask) - frozen;
                const Eigen::VectorXd phi = lsmc_features(xcfg, mask, N);
                acc.xtx.selfadjointView<Eigen::Lower>().rankUpdate(phi);
                acc.xty += phi * target;
                ++acc.n;
            }
            fit_node(s, acc);
        }
    };

    fit_round(0);
    res.rounds = 1;
    for (int r = 1; r <= opts.improvement_rounds; ++r) {
        fit_round(r);
        ++res.rounds;
    }
    if (ridge_count > 0)
        T.warnings.push_back("ridge fallback used in " + std::to_string(ridge_count) +
                             " regressions");
    if (thin_nodes > 0)
        T.warnings.push_back(std::to_string(thin_nodes) +
                             " node regressions skipped (too few samples or singular)");

    const auto final_policy = std::make_shared<StoppingPolicy>(&T, 0.0);
    const StoppingRule rollout = StoppingRule::policy(final_policy);
    double sum = 0.0, sumsq = 0.0;
    for (int e = 0; e < opts.eval_paths; ++e) {
        SimulateOptions so;
        so.replication =
            static_cast<std::uint64_t>(opts.improvement_rounds + 1) * opts.n_paths + e;
        const ParticlePaths paths = simulate_system(model, y0, grid, rollout, seed, so);
        const double v = objective_of_paths(model, paths);
        sum += v;
        sumsq += v * v;
    }
    const int M = opts.eval_paths;
    res.value = sum / M;
    const double var = std::max(0.0, (sumsq - sum * sum / M) / (M - 1));
    res.std_error = std::sqrt(var / M);
    return res;
}

} // namespace mfstop
