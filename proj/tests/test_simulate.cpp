#include "doctest.h"

#include <mfstop/measure.hpp>
#include <mfstop/model.hpp>
#include <mfstop/simulate.hpp>

#include <cmath>

using namespace mfstop;
using nlohmann::json;

namespace {

EmpiricalMeasure two_atoms() {
    Eigen::MatrixXd xs(2, 1);
    xs << 0.8, 1.2;
    return EmpiricalMeasure::uniform(xs, {1, 1});
}

} // namespace

TEST_CASE("zero volatility reduces to the Euler recursion") {
    Model m = make_builtin("decoupled-additive", json{{"b0", 0.3}, {"b1", -0.5}, {"sigma", 0.0}});
    const TimeGrid grid{0.0, 1.0, 8};
    const auto paths = simulate_system(m, two_atoms(), grid, StoppingRule::never(), 5);
    double x = 0.8;
    for (int s = 0; s < grid.nodes(); ++s) {
        CHECK(paths.x(s, 0) == doctest::Approx(x).epsilon(1e-14));
        x += (0.3 - 0.5 * x) * grid.dt();
    }
}

TEST_CASE("bitwise determinism across runs") {
    const Model m = make_builtin("mean-reverter", json{{"rate", 0.6}, {"sigma", 0.4}});
    const TimeGrid grid{0.0, 1.0, 10};
    const StoppingRule rule = StoppingRule::iid(SurvivalLaw::uniform_nodes(grid.n_steps));
    const auto a = simulate_system(m, two_atoms(), grid, rule, 17);
    const auto b = simulate_system(m, two_atoms(), grid, rule, 17);
    CHECK(a.xs == b.xs);
    CHECK(a.alive == b.alive);
    CHECK(a.stop_node == b.stop_node);
}

TEST_CASE("permuting particles and their streams permutes the paths") {
    const Model m = make_builtin("mean-reverter", json{{"rate", 0.6}, {"sigma", 0.4}});
    const TimeGrid grid{0.0, 1.0, 6};
    Eigen::MatrixXd xs(3, 1), xs_perm(3, 1);
    xs << 0.5, 1.0, 1.5;
    xs_perm << 1.5, 0.5, 1.0; // permutation (0,1,2) -> (2,0,1)
    const auto y0 = EmpiricalMeasure::uniform(xs, {1, 1, 1});
    const auto y0p = EmpiricalMeasure::uniform(xs_perm, {1, 1, 1});
    SimulateOptions perm_opts;
    perm_opts.stream_ids = {2, 0, 1};
    const auto base = simulate_system(m, y0, grid, StoppingRule::never(), 23);
    const auto perm = simulate_system(m, y0p, grid, StoppingRule::never(), 23, perm_opts);
    for (int s = 0; s < grid.nodes(); ++s) {
        CHECK(perm.x(s, 0) == base.x(s, 2));
        CHECK(perm.x(s, 1) == base.x(s, 0));
        CHECK(perm.x(s, 2) == base.x(s, 1));
    }
}

TEST_CASE("fixed stops freeze positions and rewards stop accruing") {
    const Model m = make_builtin("decoupled-additive",
                                 json{{"b0", 0.3}, {"sigma", 0.4}, {"f0", 1.0}});
    const TimeGrid grid{0.0, 1.0, 4};
    const auto paths =
        simulate_system(m, two_atoms(), grid, StoppingRule::fixed({2, -1}), 31);
    CHECK(paths.stop_node[0] == 2);
    CHECK(paths.stop_node[1] == -1);
    CHECK_FALSE(paths.is_alive(2, 0));
    CHECK(paths.is_alive(4, 1));
    for (int s = 2; s < grid.nodes(); ++s) CHECK(paths.x(s, 0) == paths.x(2, 0));
    // f == 1 on the alive half contributes dt * 1/2 per step it runs
    const auto rewards = node_rewards(m, paths);
    CHECK(rewards[0] == doctest::Approx(grid.dt()).epsilon(1e-14));        // both alive
    CHECK(rewards[2] == doctest::Approx(grid.dt() * 0.5).epsilon(1e-14));  // one alive
    // last slot carries the terminal reward of the (partially frozen) configuration
    Eigen::MatrixXd xT(2, 1);
    xT << paths.x(4, 0), paths.x(4, 1);
    const double gT = eval_terminal(m, EmpiricalMeasure::uniform(xT, {0, 1}));
    CHECK(rewards[4] == doctest::Approx(gT).epsilon(1e-14));
    double manual = 0.0;
    for (double r : rewards) manual += r;
    CHECK(objective_of_paths(m, paths) == doctest::Approx(manual).epsilon(1e-14));
}

TEST_CASE("frozen decoupled flow leaves paths unchanged") {
    const Model m = make_builtin("decoupled-additive", json{{"b0", 0.3}, {"sigma", 0.4}});
    const TimeGrid grid{0.0, 1.0, 8};
    const auto res = mckean_vlasov_flow(m, two_atoms(), grid, 16, StoppingRule::never(), 41);
    CHECK(res.converged);
    CHECK(res.iterations >= 2);
    // decoupled: the second iterate already reproduces the first exactly
    CHECK(res.gaps.back() == 0.0);
    CHECK(res.final_gap == 0.0);
}

TEST_CASE("cloud replication matches plain simulation streams") {
    const Model m = make_builtin("decoupled-additive", json{{"b0", 0.1}, {"sigma", 0.3}});
    const TimeGrid grid{0.0, 0.5, 4};
    const auto res = mckean_vlasov_flow(m, two_atoms(), grid, 2, StoppingRule::never(), 77);
    SimulateOptions so;
    so.replication = kCloudReplication;
    const auto plain = simulate_system(m, two_atoms(), grid, StoppingRule::never(), 77, so);
    for (int s = 0; s < grid.nodes(); ++s)
        for (int k = 0; k < 2; ++k) CHECK(res.cloud.x(s, k) == plain.x(s, k));
}

TEST_CASE("resampling splits weights proportionally") {
    EmpiricalMeasure m(1);
    Eigen::VectorXd x(1);
    x << -1.0;
    m.add_atom(x, 1, 0.75);
    x << 2.0;
    m.add_atom(x, 0, 0.25);
    const auto r = resample_uniform(m, 4);
    REQUIRE(r.size() == 4);
    CHECK(r.uniform_weights());
    int low = 0, high = 0;
    for (int k = 0; k < 4; ++k) {
        if (r.x1(k) == -1.0) {
            ++low;
            CHECK(r.indicator(k) == 1);
        } else {
            ++high;
            CHECK(r.indicator(k) == 0);
        }
    }
    CHECK(low == 3);
    CHECK(high == 1);
}

TEST_CASE("moment diagnostics scale with the state") {
    const Model m = make_builtin("constant-coefficients", json{{"b0", 0.0}, {"sigma", 0.5}});
    const TimeGrid grid{0.0, 1.0, 16};
    Eigen::MatrixXd xs(32, 1);
    for (int k = 0; k < 32; ++k) xs(k, 0) = 0.0;
    const auto y0 = EmpiricalMeasure::uniform(xs, std::vector<std::uint8_t>(32, 1));
    const auto paths = simulate_system(m, y0, grid, StoppingRule::never(), 13);
    const auto rep = moment_check(paths, 2);
    // sup over a Brownian path of variance 0.25 at T: second moment around 0.25-0.7
    CHECK(rep.sup_moment > 0.05);
    CHECK(rep.sup_moment < 2.0);
    REQUIRE_FALSE(rep.increment_by_window.empty());
    double prev = 0.0;
    for (const auto& [win, mom] : rep.increment_by_window) {
        CHECK(mom >= prev * 0.5); // longer windows move at least comparably far
        prev = mom;
    }
}

TEST_CASE("recorded measures match path states") {
    const Model m = make_builtin("mean-reverter", json{{"rate", 0.5}, {"sigma", 0.4}});
    const TimeGrid grid{0.0, 1.0, 5};
    SimulateOptions so;
    so.record_measures = true;
    const auto paths = simulate_system(m, two_atoms(), grid,
                                       StoppingRule::iid(SurvivalLaw::uniform_nodes(5)), 19, so);
    REQUIRE(static_cast<int>(paths.recorded_measures.size()) == grid.nodes());
    for (int s = 0; s < grid.nodes(); ++s) {
        const auto& rec = paths.recorded_measures[s];
        const auto from_paths = paths.measure_at(s);
        CHECK(rec == from_paths);
    }
}

TEST_CASE("survival laws validate and sample in range") {
    SurvivalLaw law = SurvivalLaw::uniform_nodes(4);
    law.validate();
    CHECK(law.node_prob.size() == 5);
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const int node = law.sample(rng);
        CHECK(node >= -1);
        CHECK(node <= 4);
    }
    CHECK(SurvivalLaw::point(2, 4).survival_at(1) == doctest::Approx(1.0));
    CHECK(SurvivalLaw::point(2, 4).survival_at(2) == doctest::Approx(0.0));
    SurvivalLaw bad;
    bad.node_prob = {0.5, 0.2};
    bad.never_prob = 0.1; // sums to 0.8
    CHECK_THROWS_AS(bad.validate(), UsageError);
}
