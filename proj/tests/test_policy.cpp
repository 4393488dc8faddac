#include "doctest.h"

#include <mfstop/policy.hpp>

#include <cmath>

using namespace mfstop;
using nlohmann::json;

namespace {

LatticeSpec wide_spec() {
    LatticeSpec s;
    s.x_min = -1.0;
    s.x_max = 2.6;
    s.n_x = 19;
    return s;
}

EmpiricalMeasure pair_measure() {
    Eigen::MatrixXd xs(2, 1);
    xs << 0.8, 1.2;
    return EmpiricalMeasure::uniform(xs, {1, 1});
}

} // namespace

TEST_CASE("losing running reward stops everything at the first node") {
    const Model m = make_builtin("constant-coefficients",
                                 json{{"b0", 0.1},
                                      {"sigma", 0.4},
                                      {"f0", -1.0},
                                      {"g", {{"shape", "const"}, {"a", 0.5}}}});
    const TimeGrid grid{0.0, 1.0, 6};
    const auto table = solve_cascade(m, 2, grid, wide_spec());
    const StoppingPolicy pol(&table, 1e-9);
    const auto run = run_policy(pol, m, pair_measure(), grid, 7);
    REQUIRE(run.trace.events.size() == 2);
    CHECK(run.trace.events[0].node == 0);
    CHECK(run.trace.events[1].node == 0);
    CHECK(run.trace.events[1].remaining == 0);
    CHECK_NOTHROW(run.trace.validate());
    CHECK(run.objective == doctest::Approx(0.5).epsilon(1e-13));
}

TEST_CASE("gaining running reward never stops before the horizon") {
    const Model m = make_builtin("constant-coefficients",
                                 json{{"b0", 0.1},
                                      {"sigma", 0.4},
                                      {"f0", 1.0},
                                      {"g", {{"shape", "const"}, {"a", 0.5}}}});
    const TimeGrid grid{0.0, 1.0, 6};
    const auto table = solve_cascade(m, 2, grid, wide_spec());
    const StoppingPolicy pol(&table, 1e-9);
    const auto run = run_policy(pol, m, pair_measure(), grid, 7);
    // everything stops only at T, where all regime values collapse to the payoff
    REQUIRE(run.trace.events.size() == 2);
    for (const auto& e : run.trace.events) CHECK(e.node == grid.n_steps);
    CHECK(run.objective == doctest::Approx(1.0 + 0.5).epsilon(1e-12));
}

TEST_CASE("decoupled policy stops each particle like the single-particle rule") {
    const Model m = make_builtin("decoupled-additive",
                                 json{{"b0", 0.3},
                                      {"b1", -0.5},
                                      {"sigma", 0.4},
                                      {"f0", 0.1},
                                      {"f1", 0.05},
                                      {"g", {{"shape", "put"}, {"strike", 1.1}}}});
    const TimeGrid grid{0.0, 1.0, 10};
    const auto table2 = solve_cascade(m, 2, grid, wide_spec());
    const auto table1 = solve_cascade(m, 1, grid, wide_spec());
    const StoppingPolicy pol2(&table2, 1e-9);
    const StoppingPolicy pol1(&table1, 1e-9);
    // run the pair system and each particle alone with the same streams
    const auto both = run_policy(pol2, m, pair_measure(), grid, 17);
    for (int k = 0; k < 2; ++k) {
        Eigen::MatrixXd x0(1, 1);
        x0(0, 0) = k == 0 ? 0.8 : 1.2;
        SimulateOptions so;
        so.stream_ids = {static_cast<std::uint64_t>(k)};
        const auto solo =
            run_policy(pol1, m, EmpiricalMeasure::uniform(x0, {1}), grid, 17, so);
        CHECK(solo.paths.stop_node[0] == both.paths.stop_node[k]);
    }
}

TEST_CASE("trace validation rejects inconsistent histories") {
    PolicyTrace t;
    t.initial_regime = 3u;
    t.events = {{2, 0, 1}, {1, 1, 0}}; // nodes out of order
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t.events = {{1, 0, 1}, {2, 0, 0}}; // same particle twice
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t.events = {{1, 0, 1}, {2, 1, 1}}; // remaining count wrong
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t.events = {{1, 0, 1}, {2, 1, 0}};
    CHECK_NOTHROW(t.validate());
}

TEST_CASE("certificate gap is small on a solved instance") {
    const Model m = make_builtin("decoupled-additive",
                                 json{{"b0", 0.3},
                                      {"b1", -0.5},
                                      {"sigma", 0.4},
                                      {"f0", 0.1},
                                      {"f1", 0.05},
                                      {"g", {{"shape", "put"}, {"strike", 1.1}}}});
    const TimeGrid grid{0.0, 1.0, 10};
    const auto table = solve_cascade(m, 2, grid, wide_spec());
    const auto policy = std::make_shared<StoppingPolicy>(&table, 1e-9);
    const auto value =
        evaluate_policy(m, pair_measure(), grid, StoppingRule::policy(policy), 2000, 23);
    CHECK(value.replications == 2000);
    CHECK(value.std_error > 0.0);
    const double eps = epsilon_optimality(value, table, pair_measure());
    // against the Gaussian chain the lattice value carries the time-step bias;
    // 3 SE plus a generous discretization allowance
    CHECK(eps <= 3.0 * value.std_error + 0.05);
    // and the policy cannot beat the relaxed bound by more than noise allows
    CHECK(eps >= -5.0 * value.std_error - 0.05);
}

TEST_CASE("eta falls back to the table default") {
    const Model m = make_builtin("decoupled-additive", json{{"sigma", 0.4}});
    const TimeGrid grid{0.0, 1.0, 4};
    const auto table = solve_cascade(m, 1, grid, wide_spec());
    const StoppingPolicy def(&table);
    CHECK(def.eta() == table.eta_default);
    const StoppingPolicy strict(&table, 0.0);
    CHECK(strict.eta() == 0.0);
}
