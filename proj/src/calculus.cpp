#include "mfstop/calculus.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "mfstop/simulate.hpp"

namespace mfstop {

namespace {
double ipow(double x, int n) {
    double r = 1.0;
    for (int i = 0; i < n; ++i) r *= x;
    return r;
}
} // namespace

double ScalarField::base(double x) const {
    return kind == Kind::Power ? ipow(x, power) : std::cos(freq * x);
}
double ScalarField::dbase(double x) const {
    if (kind == Kind::Power) return power == 0 ? 0.0 : power * ipow(x, power - 1);
    return -freq * std::sin(freq * x);
}
double ScalarField::d2base(double x) const {
    if (kind == Kind::Power)
        return power <= 1 ? 0.0 : static_cast<double>(power) * (power - 1) * ipow(x, power - 2);
    return -freq * freq * std::cos(freq * x);
}
double ScalarField::h(const Eigen::Ref<const Eigen::VectorXd>& x, int indicator) const {
    if (alive_only && indicator == 0) return 0.0;
    return base(x(coord));
}
double ScalarField::moment(const EmpiricalMeasure& m) const {
    double z = 0.0;
    for (int k = 0; k < m.size(); ++k) {
        if (alive_only && m.indicator(k) == 0) continue;
        z += m.weight(k) * base(m.x(k)(coord));
    }
    return z;
}

void CylinderFunctional::validate() const {
    if (fields.empty()) throw ValidationError("cylinder functional has no fields");
    for (const auto& t : terms)
        if (t.z_powers.size() != fields.size() || t.t_power < 0)
            throw ValidationError("cylinder functional: malformed term in " + name);
    for (const auto& t : terms)
        for (int q : t.z_powers)
            if (q < 0) throw ValidationError("cylinder functional: negative exponent in " + name);
}

std::vector<double> CylinderFunctional::moments(const EmpiricalMeasure& m) const {
    std::vector<double> z(fields.size());
    for (size_t j = 0; j < fields.size(); ++j) z[j] = fields[j].moment(m);
    return z;
}

namespace {

double outer_value(const std::vector<CylinderTerm>& terms, double t, const std::vector<double>& z) {
    double g = 0.0;
    for (const auto& tm : terms) {
        double p = tm.c * ipow(t, tm.t_power);
        for (size_t j = 0; j < z.size(); ++j) p *= ipow(z[j], tm.z_powers[j]);
        g += p;
    }
    return g;
}

double outer_dt(const std::vector<CylinderTerm>& terms, double t, const std::vector<double>& z) {
    double g = 0.0;
    for (const auto& tm : terms) {
        if (tm.t_power == 0) continue;
        double p = tm.c * tm.t_power * ipow(t, tm.t_power - 1);
        for (size_t j = 0; j < z.size(); ++j) p *= ipow(z[j], tm.z_powers[j]);
        g += p;
    }
    return g;
}

std::vector<double> outer_grad(const std::vector<CylinderTerm>& terms, double t,
                               const std::vector<double>& z) {
    std::vector<double> dg(z.size(), 0.0);
    for (const auto& tm : terms) {
        const double ct = tm.c * ipow(t, tm.t_power);
        for (size_t j = 0; j < z.size(); ++j) {
            const int qj = tm.z_powers[j];
            if (qj == 0) continue;
            double p = ct * qj * ipow(z[j], qj - 1);
            for (size_t l = 0; l < z.size(); ++l)
                if (l != j) p *= ipow(z[l], tm.z_powers[l]);
            dg[j] += p;
        }
    }
    return dg;
}

Eigen::MatrixXd outer_hess(const std::vector<CylinderTerm>& terms, double t,
                           const std::vector<double>& z) {
    const int p = static_cast<int>(z.size());
    Eigen::MatrixXd d2 = Eigen::MatrixXd::Zero(p, p);
    for (const auto& tm : terms) {
        const double ct = tm.c * ipow(t, tm.t_power);
        for (int j = 0; j < p; ++j)
            for (int l = 0; l < p; ++l) {
                const int qj = tm.z_powers[j];
                const int ql = tm.z_powers[l];
                double v;
                if (j == l) {
                    if (qj < 2) continue;
                    v = ct * qj * (qj - 1) * ipow(z[j], qj - 2);
                } else {
                    if (qj == 0 || ql == 0) continue;
                    v = ct * qj * ql * ipow(z[j], qj - 1) * ipow(z[l], ql - 1);
                }
                for (int o = 0; o < p; ++o)
                    if (o != j && o != l) v *= ipow(z[o], tm.z_powers[o]);
                d2(j, l) += v;
            }
    }
    return d2;
}

} // namespace

double CylinderFunctional::value(double t, const EmpiricalMeasure& m) const {
    return outer_value(terms, t, moments(m));
}

double CylinderFunctional::dt_partial(double t, const EmpiricalMeasure& m) const {
    return outer_dt(terms, t, moments(m));
}

double CylinderFunctional::delta_m(double t, const EmpiricalMeasure& m,
                                   const Eigen::Ref<const Eigen::VectorXd>& x,
                                   int indicator) const {
    const std::vector<double> z = moments(m);
    const std::vector<double> dg = outer_grad(terms, t, z);
    double s = 0.0;
    for (size_t j = 0; j < fields.size(); ++j) s += dg[j] * fields[j].h(x, indicator);
    return s;
}

Eigen::VectorXd CylinderFunctional::dx_delta_m1(double t, const EmpiricalMeasure& m,
                                                const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const std::vector<double> z = moments(m);
    const std::vector<double> dg = outer_grad(terms, t, z);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
    for (size_t j = 0; j < fields.size(); ++j)
        out(fields[j].coord) += dg[j] * fields[j].dbase(x(fields[j].coord));
    return out;
}

Eigen::MatrixXd CylinderFunctional::dxx_delta_m1(double t, const EmpiricalMeasure& m,
                                                 const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const std::vector<double> z = moments(m);
    const std::vector<double> dg = outer_grad(terms, t, z);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.size(), x.size());
    for (size_t j = 0; j < fields.size(); ++j)
        out(fields[j].coord, fields[j].coord) += dg[j] * fields[j].d2base(x(fields[j].coord));
    return out;
}

Eigen::MatrixXd CylinderFunctional::d2_mumu_11(double t, const EmpiricalMeasure& m,
                                               const Eigen::Ref<const Eigen::VectorXd>& x,
                                               const Eigen::Ref<const Eigen::VectorXd>& xt) const {
    const std::vector<double> z = moments(m);
    const Eigen::MatrixXd d2g = outer_hess(terms, t, z);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.size(), xt.size());
    for (size_t j = 0; j < fields.size(); ++j)
        for (size_t l = 0; l < fields.size(); ++l) {
            const double c = d2g(static_cast<int>(j), static_cast<int>(l));
            if (c == 0.0) continue;
            out(fields[j].coord, fields[l].coord) +=
                c * fields[j].dbase(x(fields[j].coord)) * fields[l].dbase(xt(fields[l].coord));
        }
    return out;
}

// ---------------------------------------------------------------------------
// built-ins

namespace {

std::map<std::string, CylinderFunctional> make_builtins() {
    std::map<std::string, CylinderFunctional> reg;
    auto field = [](int power, bool alive_only) {
        ScalarField f;
        f.kind = ScalarField::Kind::Power;
        f.power = power;
        f.alive_only = alive_only;
        return f;
    };

    {
        CylinderFunctional u;
        u.name = "alive-mean";
        u.fields = {field(1, true)};
        u.terms = {{1.0, 0, {1}}};
        reg[u.name] = u;
    }
    {
        CylinderFunctional u;
        u.name = "alive-mean-squared";
        u.fields = {field(1, true)};
        u.terms = {{1.0, 0, {2}}};
        reg[u.name] = u;
    }
    {
        CylinderFunctional u;
        u.name = "alive-energy"; // second moment plus half the squared first moment
        u.fields = {field(2, true), field(1, true)};
        u.terms = {{1.0, 0, {1, 0}}, {0.5, 0, {0, 2}}};
        reg[u.name] = u;
    }
    {
        CylinderFunctional u;
        u.name = "marginal-mean"; // reads both branches, so stopping costs nothing
        u.fields = {field(1, false)};
        u.terms = {{1.0, 0, {1}}};
        reg[u.name] = u;
    }
    {
        CylinderFunctional u;
        u.name = "mass-times-mean"; // alive mass times the full first moment
        u.fields = {field(0, true), field(1, false)};
        u.terms = {{1.0, 0, {1, 1}}};
        reg[u.name] = u;
    }
    return reg;
}

const std::map<std::string, CylinderFunctional>& builtin_registry() {
    static const std::map<std::string, CylinderFunctional> reg = make_builtins();
    return reg;
}

} // namespace

const CylinderFunctional& builtin_functional(const std::string& name) {
    const auto& reg = builtin_registry();
    auto it = reg.find(name);
    if (it == reg.end()) throw ValidationError("unknown cylinder functional: " + name);
    return it->second;
}

std::vector<std::string> builtin_functional_names() {
    std::vector<std::string> names;
    for (const auto& [k, v] : builtin_registry()) names.push_back(k);
    return names;
}

// ---------------------------------------------------------------------------
// projection and checks

Projection project(const CylinderFunctional& U, double t, const EmpiricalMeasure& m) {
    U.validate();
    const int N = m.size();
    const int d = m.dim();
    const std::vector<double> z = U.moments(m);
    const std::vector<double> dg = outer_grad(U.terms, t, z);
    const Eigen::MatrixXd d2g = outer_hess(U.terms, t, z);

    Projection out;
    out.value = outer_value(U.terms, t, z);
    out.grad = Eigen::MatrixXd::Zero(N, d);
    out.hess.assign(N, Eigen::MatrixXd::Zero(d, d));

    const size_t p = U.fields.size();
    std::vector<double> dh(p), d2h(p);
    for (int k = 0; k < N; ++k) {
        const double w = m.weight(k);
        const auto xk = m.x(k);
        const int ik = m.indicator(k);
        for (size_t j = 0; j < p; ++j) {
            const ScalarField& f = U.fields[j];
            if (f.alive_only && ik == 0) {
                dh[j] = 0.0;
                d2h[j] = 0.0;
            } else {
                dh[j] = f.dbase(xk(f.coord));
                d2h[j] = f.d2base(xk(f.coord));
            }
        }
        for (size_t j = 0; j < p; ++j) {
            const int cj = U.fields[j].coord;
            out.grad(k, cj) += w * dg[j] * dh[j];
            out.hess[k](cj, cj) += w * dg[j] * d2h[j];
            for (size_t l = 0; l < p; ++l) {
                const double c = d2g(static_cast<int>(j), static_cast<int>(l));
                if (c == 0.0) continue;
                out.hess[k](cj, U.fields[l].coord) += w * w * c * dh[j] * dh[l];
            }
        }
    }
    return out;
}

double check_projection_derivatives(const CylinderFunctional& U, double t,
                                    const EmpiricalMeasure& m, double h_fd) {
    if (!(h_fd > 0.0)) throw UsageError("finite-difference step must be positive");
    const Projection an = project(U, t, m);
    const double phi0 = an.value;
    EmpiricalMeasure pert = m;
    double worst = 0.0;
    for (int k = 0; k < m.size(); ++k) {
        for (int j = 0; j < m.dim(); ++j) {
            Eigen::VectorXd xk = m.x(k);
            xk(j) += h_fd;
            pert.set_x(k, xk);
            const double up = U.value(t, pert);
            xk(j) -= 2.0 * h_fd;
            pert.set_x(k, xk);
            const double dn = U.value(t, pert);
            pert.set_x(k, m.x(k));

            const double g_fd = (up - dn) / (2.0 * h_fd);
            const double h_an = an.hess[k](j, j);
            const double h_fd2 = (up - 2.0 * phi0 + dn) / (h_fd * h_fd);
            const double g_an = an.grad(k, j);
            worst = std::max(worst, std::abs(g_fd - g_an) / std::max(1.0, std::abs(g_an)));
            worst = std::max(worst, std::abs(h_fd2 - h_an) / std::max(1.0, std::abs(h_an)));
        }
    }
    return worst;
}

namespace {

// generator without the running-reward term
double generator_lu(const CylinderFunctional& U, const Model& model, double t,
                    const EmpiricalMeasure& m) {
    double acc = U.dt_partial(t, m);
    for (int k = 0; k < m.size(); ++k) {
        if (m.indicator(k) == 0) continue;
        const auto xk = m.x(k);
        const Eigen::VectorXd grad = U.dx_delta_m1(t, m, xk);
        const Eigen::MatrixXd hess = U.dxx_delta_m1(t, m, xk);
        const Eigen::VectorXd b = model.b(t, xk, m);
        const Eigen::MatrixXd sg = model.sigma(t, xk, m);
        acc += m.weight(k) * (b.dot(grad) + 0.5 * (sg * sg.transpose() * hess).trace());
    }
    return acc;
}

} // namespace

double evaluate_generator(const CylinderFunctional& U, const Model& model, double t,
                          const EmpiricalMeasure& m) {
    return generator_lu(U, model, t, m) + eval_F(model, t, m);
}

double evaluate_DI(const CylinderFunctional& U, double t, const EmpiricalMeasure& m) {
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < m.size(); ++k) {
        if (m.indicator(k) == 0) continue;
        const auto xk = m.x(k);
        best = std::min(best, U.delta_m(t, m, xk, 1) - U.delta_m(t, m, xk, 0));
    }
    return best;
}

GeneratorCheck check_generator_consistency(const CylinderFunctional& U, const Model& model,
                                           const TimeGrid& grid, const EmpiricalMeasure& m0, int M,
                                           std::uint64_t seed, int replications) {
    grid.validate();
    if (M < 1 || replications < 1) throw UsageError("generator check needs M >= 1, reps >= 1");
    const EmpiricalMeasure cloud = resample_uniform(m0, M);
    const double dt = grid.dt();
    const TimeGrid step{grid.t0, grid.t0 + dt, 1};
    const StoppingRule rule = StoppingRule::never();

    double acc = 0.0;
    for (int r = 0; r < replications; ++r) {
        SimulateOptions so;
        so.replication = static_cast<std::uint64_t>(r);
        const ParticlePaths paths = simulate_system(model, cloud, step, rule, seed, so);
        acc += U.value(step.T, paths.measure_at(1));
    }
    GeneratorCheck out;
    out.fd_drift = (acc / replications - U.value(grid.t0, cloud)) / dt;
    out.generator = generator_lu(U, model, grid.t0, cloud);
    out.discrepancy = std::abs(out.fd_drift - out.generator);
    return out;
}

double mixture_identity_gap(const CylinderFunctional& U, double t, const EmpiricalMeasure& m,
                            const EmpiricalMeasure& mt) {
    if (m.dim() != mt.dim()) throw UsageError("mixture identity needs equal dimensions");
    // 16-point Gauss-Legendre on [0,1]
    static const double gx[8] = {0.0950125098376374, 0.2816035507792589, 0.4580167776572274,
                                 0.6178762444026438, 0.7554044083550030, 0.8656312023878318,
                                 0.9445750230732326, 0.9894009349916499};
    static const double gw[8] = {0.1894506104550685, 0.1826034150449236, 0.1691565193950025,
                                 0.1495959888165767, 0.1246289712555339, 0.0951585116824928,
                                 0.0622535239386479, 0.0271524594117541};

    auto inner = [&](double l) {
        EmpiricalMeasure mix(m.dim());
        mix.reserve(m.size() + mt.size());
        for (int k = 0; k < mt.size(); ++k) mix.add_atom(mt.x(k), mt.indicator(k), l * mt.weight(k));
        for (int k = 0; k < m.size(); ++k)
            mix.add_atom(m.x(k), m.indicator(k), (1.0 - l) * m.weight(k));
        double s = 0.0;
        for (int k = 0; k < mt.size(); ++k)
            s += mt.weight(k) * U.delta_m(t, mix, mt.x(k), mt.indicator(k));
        for (int k = 0; k < m.size(); ++k)
            s -= m.weight(k) * U.delta_m(t, mix, m.x(k), m.indicator(k));
        return s;
    };

    double integral = 0.0;
    for (int i = 0; i < 8; ++i) {
        const double a = 0.5 * (1.0 + gx[i]);
        const double b = 0.5 * (1.0 - gx[i]);
        integral += 0.5 * gw[i] * (inner(a) + inner(b));
    }
    return std::abs(U.value(t, mt) - U.value(t, m) - integral);
}

} // namespace mfstop
