#include "mfstop/measure.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "mfstop/transport.hpp"

namespace mfstop {

EmpiricalMeasure EmpiricalMeasure::uniform(const Eigen::MatrixXd& xs,
                                           const std::vector<std::uint8_t>& ind) {
    const int n = static_cast<int>(xs.rows());
    if (n == 0) throw UsageError("EmpiricalMeasure::uniform: no atoms");
    if (static_cast<int>(ind.size()) != n)
        throw UsageError("EmpiricalMeasure::uniform: indicator count != atom count");
    EmpiricalMeasure m(static_cast<int>(xs.cols()));
    m.reserve(n);
    const double w = 1.0 / n;
    for (int k = 0; k < n; ++k) m.add_atom(xs.row(k).transpose(), ind[k], w);
    return m;
}

EmpiricalMeasure EmpiricalMeasure::dirac(const Eigen::VectorXd& x, int indicator) {
    EmpiricalMeasure m(static_cast<int>(x.size()));
    m.add_atom(x, indicator, 1.0);
    return m;
}

void EmpiricalMeasure::add_atom(const Eigen::Ref<const Eigen::VectorXd>& x, int indicator,
                                double weight) {
    if (x.size() != dim_) throw UsageError("EmpiricalMeasure::add_atom: wrong dimension");
    if (indicator != 0 && indicator != 1)
        throw UsageError("EmpiricalMeasure::add_atom: indicator must be 0 or 1");
    if (!(weight >= 0.0) || !std::isfinite(weight))
        throw UsageError("EmpiricalMeasure::add_atom: weight must be finite and >= 0");
    for (int j = 0; j < dim_; ++j) xs_.push_back(x(j));
    ind_.push_back(static_cast<std::uint8_t>(indicator));
    w_.push_back(weight);
}

void EmpiricalMeasure::set_x(int k, const Eigen::Ref<const Eigen::VectorXd>& x) {
    for (int j = 0; j < dim_; ++j) xs_[static_cast<size_t>(k) * dim_ + j] = x(j);
}

double EmpiricalMeasure::total_mass() const {
    return std::accumulate(w_.begin(), w_.end(), 0.0);
}

double EmpiricalMeasure::alive_mass() const {
    double s = 0.0;
    for (int k = 0; k < size(); ++k)
        if (ind_[k]) s += w_[k];
    return s;
}

Eigen::VectorXd EmpiricalMeasure::alive_moment(int power) const {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(dim_);
    for (int k = 0; k < size(); ++k) {
        if (!ind_[k]) continue;
        for (int j = 0; j < dim_; ++j)
            s(j) += w_[k] * std::pow(xs_[static_cast<size_t>(k) * dim_ + j], power);
    }
    return s;
}

EmpiricalMeasure EmpiricalMeasure::x_marginal() const {
    EmpiricalMeasure m(*this);
    std::fill(m.ind_.begin(), m.ind_.end(), std::uint8_t{1});
    return m;
}

void EmpiricalMeasure::validate(double mass_tol) const {
    if (dim_ < 1) throw UsageError("EmpiricalMeasure: dimension must be >= 1");
    if (size() == 0) throw UsageError("EmpiricalMeasure: empty measure");
    for (double v : xs_)
        if (!std::isfinite(v)) throw UsageError("EmpiricalMeasure: non-finite position");
    const double mass = total_mass();
    if (std::abs(mass - 1.0) > mass_tol) {
        std::ostringstream os;
        os << "EmpiricalMeasure: weights sum to " << mass << ", expected 1";
        throw UsageError(os.str());
    }
}

bool EmpiricalMeasure::all_alive() const {
    for (auto i : ind_)
        if (!i) return false;
    return true;
}

bool EmpiricalMeasure::uniform_weights(double tol) const {
    if (size() == 0) return false;
    const double w0 = 1.0 / size();
    for (double w : w_)
        if (std::abs(w - w0) > tol) return false;
    return true;
}

double TransitionDensity::at(const EmpiricalMeasure& m, int k) const {
    double v;
    if (fn_) {
        v = fn_(m.x(k));
    } else {
        if (k >= static_cast<int>(values_.size()))
            throw UsageError("TransitionDensity: fewer values than atoms");
        v = values_[k];
    }
    if (!(v >= 0.0 && v <= 1.0)) {
        std::ostringstream os;
        os << "TransitionDensity: value " << v << " outside [0,1] at atom " << k;
        throw UsageError(os.str());
    }
    return v;
}

EmpiricalMeasure stop_with_density(const EmpiricalMeasure& m, const TransitionDensity& p) {
    EmpiricalMeasure out(m.dim());
    out.reserve(2 * m.size());
    for (int k = 0; k < m.size(); ++k) {
        if (m.indicator(k) == 0) {
            out.add_atom(m.x(k), 0, m.weight(k));
            continue;
        }
        const double pk = p.at(m, k);
        const double wa = m.weight(k) * pk;
        const double ws = m.weight(k) - wa;
        if (wa > 0.0) out.add_atom(m.x(k), 1, wa);
        if (ws > 0.0) out.add_atom(m.x(k), 0, ws);
    }
    return out;
}

namespace {

// Exact-byte position key: stopping never perturbs coordinates, so grouping by
// exact doubles is the faithful notion of "same location" here.
using PosKey = std::vector<double>;

PosKey pos_key(const EmpiricalMeasure& m, int k) {
    PosKey key(m.dim());
    for (int j = 0; j < m.dim(); ++j) key[j] = m.x(k)(j);
    return key;
}

struct LocMass {
    double alive = 0.0;
    double total = 0.0;
};

std::map<PosKey, LocMass> location_masses(const EmpiricalMeasure& m) {
    std::map<PosKey, LocMass> groups;
    for (int k = 0; k < m.size(); ++k) {
        auto& g = groups[pos_key(m, k)];
        g.total += m.weight(k);
        if (m.indicator(k)) g.alive += m.weight(k);
    }
    return groups;
}

} // namespace

PreceqResult is_preceq(const EmpiricalMeasure& m_after, const EmpiricalMeasure& m_before,
                       double tol) {
    PreceqResult r;
    if (m_after.dim() != m_before.dim()) {
        r.why = "dimension mismatch";
        return r;
    }
    const auto after = location_masses(m_after);
    const auto before = location_masses(m_before);
    if (after.size() != before.size()) {
        r.why = "x-marginal supports differ";
        return r;
    }
    std::map<PosKey, double> density;
    auto ia = after.begin();
    auto ib = before.begin();
    for (; ib != before.end(); ++ia, ++ib) {
        if (ia->first != ib->first) {
            r.why = "x-marginal supports differ";
            return r;
        }
        if (std::abs(ia->second.total - ib->second.total) > tol) {
            std::ostringstream os;
            os << "x-marginal mass differs at a shared location (" << ia->second.total << " vs "
               << ib->second.total << ")";
            r.why = os.str();
            return r;
        }
        if (ia->second.alive > ib->second.alive + tol) {
            r.why = "alive mass increased at a location";
            return r;
        }
        const double pa = ib->second.alive > tol
                              ? std::clamp(ia->second.alive / ib->second.alive, 0.0, 1.0)
                              : 1.0;
        density[ib->first] = pa;
    }
    r.holds = true;
    for (int k = 0; k < m_before.size(); ++k)
        if (m_before.indicator(k)) r.density.push_back(density.at(pos_key(m_before, k)));
    return r;
}

namespace {

double pair_cost(const EmpiricalMeasure& a, int i, const EmpiricalMeasure& b, int j,
                 bool squared) {
    double d2 = (a.x(i) - b.x(j)).squaredNorm();
    const double di = static_cast<double>(a.indicator(i)) - static_cast<double>(b.indicator(j));
    d2 += di * di;
    return squared ? d2 : std::sqrt(d2);
}

Eigen::MatrixXd cost_matrix(const EmpiricalMeasure& a, const EmpiricalMeasure& b, bool squared) {
    Eigen::MatrixXd c(a.size(), b.size());
    for (int i = 0; i < a.size(); ++i)
        for (int j = 0; j < b.size(); ++j) c(i, j) = pair_cost(a, i, b, j, squared);
    return c;
}

// squared=true computes W2 (costs are squared distances, result square-rooted),
// squared=false computes W1.
double wasserstein(const EmpiricalMeasure& a, const EmpiricalMeasure& b, DistanceOptions opts,
                   bool squared) {
    if (a.dim() != b.dim()) throw UsageError("wasserstein: dimension mismatch");
    a.validate();
    b.validate();

    const bool same_n = a.size() == b.size();
    const bool uniform = same_n && a.uniform_weights() && b.uniform_weights();
    const bool sortable = uniform && a.dim() == 1 && a.all_alive() && b.all_alive();

    TransportMethod method = opts.method;
    if (method == TransportMethod::Auto) {
        if (sortable)
            method = TransportMethod::Sorted;
        else if (uniform)
            method = TransportMethod::Assignment;
        else if (opts.allow_general)
            method = TransportMethod::GeneralLP;
        else
            throw UsageError(
                "wasserstein: atom counts/weights need the general transport LP; "
                "set DistanceOptions::allow_general");
    }

    switch (method) {
    case TransportMethod::Sorted: {
        if (!sortable)
            throw UsageError("wasserstein: sorted method needs d=1, all-alive, uniform same-N");
        std::vector<double> xa(a.size()), xb(b.size());
        for (int k = 0; k < a.size(); ++k) xa[k] = a.x1(k);
        for (int k = 0; k < b.size(); ++k) xb[k] = b.x1(k);
        std::sort(xa.begin(), xa.end());
        std::sort(xb.begin(), xb.end());
        double total = 0.0;
        for (int k = 0; k < a.size(); ++k) {
            const double d = std::abs(xa[k] - xb[k]);
            total += squared ? d * d : d;
        }
        total /= a.size();
        return squared ? std::sqrt(total) : total;
    }
    case TransportMethod::Assignment: {
        if (!uniform)
            throw UsageError("wasserstein: assignment method needs uniform same-N atoms");
        const double total = assignment_cost(cost_matrix(a, b, squared)) / a.size();
        return squared ? std::sqrt(total) : total;
    }
    case TransportMethod::GeneralLP: {
        std::vector<double> sa(a.size()), sb(b.size());
        for (int k = 0; k < a.size(); ++k) sa[k] = a.weight(k);
        for (int k = 0; k < b.size(); ++k) sb[k] = b.weight(k);
        const double total = transport_cost(sa, sb, cost_matrix(a, b, squared));
        return squared ? std::sqrt(total) : total;
    }
    default:
        throw UsageError("wasserstein: unresolved method");
    }
}

} // namespace

double w2(const EmpiricalMeasure& a, const EmpiricalMeasure& b, DistanceOptions opts) {
    return wasserstein(a, b, opts, true);
}

double w1(const EmpiricalMeasure& a, const EmpiricalMeasure& b, DistanceOptions opts) {
    return wasserstein(a, b, opts, false);
}

PureStopResult pure_approximation(const EmpiricalMeasure& m, const TransitionDensity& p, int n) {
    if (n < 1) throw UsageError("pure_approximation: resolution n must be >= 1");
    m.validate();

    PureStopResult res;
    res.m_target = stop_with_density(m, p);

    // Cells of side 1/(n*sqrt(d)) have diameter <= 1/n.
    const double side = 1.0 / (n * std::sqrt(static_cast<double>(m.dim())));
    std::map<std::vector<long long>, std::vector<int>> cells;
    for (int k = 0; k < m.size(); ++k) {
        if (!m.indicator(k)) continue;
        std::vector<long long> key(m.dim());
        for (int j = 0; j < m.dim(); ++j)
            key[j] = static_cast<long long>(std::floor(m.x(k)(j) / side));
        cells[key].push_back(k);
        res.max_atom_weight = std::max(res.max_atom_weight, m.weight(k));
    }
    res.nonempty_cells = static_cast<int>(cells.size());

    double kept_mass = 0.0, target_mass = 0.0;
    std::vector<char> keep(m.size(), 0);
    for (auto& [key, atoms] : cells) {
        double target = 0.0;
        for (int k : atoms) target += m.weight(k) * p.at(m, k);
        target_mass += target;
        // Largest p first; the closest-approach rule leaves a gap of at most one atom weight.
        std::sort(atoms.begin(), atoms.end(), [&](int aidx, int bidx) {
            const double pa = p.at(m, aidx), pb = p.at(m, bidx);
            if (pa != pb) return pa > pb;
            return aidx < bidx;
        });
        double sel = 0.0;
        for (int k : atoms) {
            const double w = m.weight(k);
            if (std::abs(sel + w - target) < std::abs(sel - target)) {
                keep[k] = 1;
                sel += w;
                res.kept_alive.push_back(k);
            }
        }
        kept_mass += sel;
    }
    std::sort(res.kept_alive.begin(), res.kept_alive.end());

    std::vector<double> indicator_density(m.size(), 0.0);
    for (int k = 0; k < m.size(); ++k) indicator_density[k] = keep[k] ? 1.0 : 0.0;
    res.m_pure = stop_with_density(m, TransitionDensity::from_values(indicator_density));

    res.err = w1(res.m_pure, res.m_target,
                 {TransportMethod::GeneralLP, /*allow_general=*/true});
    res.bound = (2.0 / n) * (kept_mass + target_mass) + res.max_atom_weight * res.nonempty_cells;
    return res;
}

void MeasureFlow::validate() const {
    grid.validate();
    if (static_cast<int>(at_node.size()) != grid.nodes())
        throw UsageError("MeasureFlow: node count does not match grid");
    for (const auto& m : at_node) m.validate();
}

double flow_distance(const MeasureFlow& a, const MeasureFlow& b, DistanceOptions opts) {
    if (!(a.grid == b.grid)) throw UsageError("flow_distance: flows live on different grids");
    a.validate();
    b.validate();
    double worst = 0.0;
    for (int s = 0; s < a.grid.nodes(); ++s)
        worst = std::max(worst, w2(a.at_node[s], b.at_node[s], opts));
    return worst;
}

namespace {

void append_double(std::string& out, double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

} // namespace

void save_measure(const std::string& path, const EmpiricalMeasure& m) {
    std::string body;
    body.reserve(static_cast<size_t>(m.size()) * 24);
    for (int k = 0; k < m.size(); ++k) {
        append_double(body, m.weight(k));
        for (int j = 0; j < m.dim(); ++j) {
            body.push_back(' ');
            append_double(body, m.x(k)(j));
        }
        body.push_back(' ');
        body += m.indicator(k) ? '1' : '0';
        body.push_back('\n');
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw UsageError("save_measure: cannot open " + path);
    f << body;
}

EmpiricalMeasure load_measure(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("load_measure: cannot open " + path);
    std::string line;
    std::vector<std::vector<double>> rows;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream is(line);
        std::vector<double> cols;
        double v;
        while (is >> v) cols.push_back(v);
        if (cols.size() < 3) {
            std::ostringstream os;
            os << "load_measure: " << path << ":" << line_no << ": expected weight, x..., i";
            throw UsageError(os.str());
        }
        rows.push_back(std::move(cols));
    }
    if (rows.empty()) throw UsageError("load_measure: no atoms in " + path);
    const int dim = static_cast<int>(rows.front().size()) - 2;
    EmpiricalMeasure m(dim);
    m.reserve(static_cast<int>(rows.size()));
    for (size_t r = 0; r < rows.size(); ++r) {
        if (static_cast<int>(rows[r].size()) != dim + 2)
            throw UsageError("load_measure: inconsistent column count in " + path);
        Eigen::VectorXd x(dim);
        for (int j = 0; j < dim; ++j) x(j) = rows[r][1 + j];
        const double ind = rows[r][dim + 1];
        if (ind != 0.0 && ind != 1.0)
            throw UsageError("load_measure: indicator must be 0 or 1 in " + path);
        m.add_atom(x, static_cast<int>(ind), rows[r][0]);
    }
    m.validate();
    return m;
}

} // namespace mfstop
