#include "mfstop/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mfstop/common.hpp"

namespace mfstop {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

// Classic Hungarian-style shortest augmenting path scheme with row/column
// potentials. Rows are inserted one at a time; the Dijkstra pass runs over
// columns with dense scans, which is the right shape for a dense cost matrix.
// Index n acts as the virtual start column.
double assignment_cost(const Eigen::MatrixXd& cost, std::vector<int>* match) {
    const int n = static_cast<int>(cost.rows());
    if (cost.cols() != n) throw UsageError("assignment_cost: cost matrix must be square");
    if (n == 0) return 0.0;

    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1, 0.0);
    std::vector<int> p(n + 1, n), way(n + 1, 0); // p[j] = row matched to column j, n = none
    std::vector<char> used(n + 1, 0);

    for (int i = 0; i < n; ++i) {
        p[n] = i;
        int j0 = n;
        std::fill(minv.begin(), minv.end(), kInf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = kInf;
            int j1 = -1;
            for (int j = 0; j < n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0, j) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != n);
        // Unwind the alternating path.
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != n);
    }

    double total = 0.0;
    for (int j = 0; j < n; ++j) total += cost(p[j], j);
    if (match) {
        match->assign(n, -1);
        for (int j = 0; j < n; ++j) (*match)[p[j]] = j;
    }
    return total;
}

// Successive shortest paths on the bipartite residual graph. Node potentials
// keep reduced costs nonnegative, so a dense Dijkstra per augmentation stays
// valid; flow only ever sits on tight arcs, so residual back-arcs stay cheap.
double transport_cost(const std::vector<double>& supply, const std::vector<double>& demand,
                      const Eigen::MatrixXd& cost) {
    const int ns = static_cast<int>(supply.size());
    const int nd = static_cast<int>(demand.size());
    if (cost.rows() != ns || cost.cols() != nd)
        throw UsageError("transport_cost: cost matrix shape does not match supply/demand");
    if (ns == 0 || nd == 0) throw UsageError("transport_cost: empty marginal");

    double total_s = 0.0, total_d = 0.0;
    for (double s : supply) {
        if (!(s >= 0.0)) throw UsageError("transport_cost: negative supply");
        total_s += s;
    }
    for (double d : demand) {
        if (!(d >= 0.0)) throw UsageError("transport_cost: negative demand");
        total_d += d;
    }
    if (std::abs(total_s - total_d) > 1e-9 * std::max({total_s, total_d, 1.0}))
        throw UsageError("transport_cost: supply and demand masses differ");

    std::vector<double> rs(supply), rd(demand);
    const double scale = total_s / total_d; // balance exactly
    for (double& d : rd) d *= scale;

    const int nv = ns + nd; // node v < ns: supply v; node v >= ns: demand v - ns
    std::vector<double> pot(nv, 0.0), dist(nv);
    std::vector<int> parent(nv); // demand node: feeding supply row; supply node: demand column of residual arc
    std::vector<char> done(nv);
    Eigen::MatrixXd flow = Eigen::MatrixXd::Zero(ns, nd);

    const double eps = 1e-15 * std::max(total_s, 1.0);
    double remaining = total_s;
    long guard = 32L * nv + 256;

    while (remaining > eps) {
        if (--guard < 0) throw EvalError("transport_cost: augmentation limit exceeded");
        std::fill(dist.begin(), dist.end(), kInf);
        std::fill(done.begin(), done.end(), 0);
        std::fill(parent.begin(), parent.end(), -1);
        for (int i = 0; i < ns; ++i)
            if (rs[i] > eps) dist[i] = 0.0;

        int sink = -1;
        while (true) {
            int v = -1;
            double dv = kInf;
            for (int u = 0; u < nv; ++u)
                if (!done[u] && dist[u] < dv) {
                    dv = dist[u];
                    v = u;
                }
            if (v < 0) break;
            done[v] = 1;
            if (v >= ns && rd[v - ns] > eps) {
                sink = v;
                break;
            }
            if (v < ns) {
                const int i = v;
                for (int j = 0; j < nd; ++j) {
                    const int u = ns + j;
                    if (done[u]) continue;
                    const double rc = cost(i, j) + pot[i] - pot[u];
                    if (dist[i] + rc < dist[u]) {
                        dist[u] = dist[i] + rc;
                        parent[u] = i;
                    }
                }
            } else {
                const int j = v - ns;
                for (int i = 0; i < ns; ++i) {
                    if (done[i] || flow(i, j) <= eps) continue;
                    const double rc = -cost(i, j) + pot[v] - pot[i];
                    if (dist[v] + rc < dist[i]) {
                        dist[i] = dist[v] + rc;
                        parent[i] = j;
                    }
                }
            }
        }
        if (sink < 0) throw EvalError("transport_cost: no augmenting path found");

        // Bottleneck along sink <- supply <- demand <- ... <- source.
        double push = rd[sink - ns];
        {
            int v = sink;
            while (true) {
                const int i = parent[v];
                if (parent[i] < 0) {
                    push = std::min(push, rs[i]);
                    break;
                }
                const int j = parent[i];
                push = std::min(push, flow(i, j));
                v = ns + j;
            }
        }
        {
            int v = sink;
            while (true) {
                const int i = parent[v];
                flow(i, v - ns) += push;
                if (parent[i] < 0) {
                    rs[i] -= push;
                    break;
                }
                const int j = parent[i];
                flow(i, j) -= push;
                v = ns + j;
            }
            rd[sink - ns] -= push;
            remaining -= push;
        }
        const double dcap = dist[sink];
        for (int v = 0; v < nv; ++v) pot[v] += std::min(dist[v], dcap);
    }

    double total = 0.0;
    for (int i = 0; i < ns; ++i)
        for (int j = 0; j < nd; ++j)
            if (flow(i, j) > 0.0) total += flow(i, j) * cost(i, j);
    return total;
}

} // namespace mfstop
