#include "doctest.h"

#include <mfstop/chaos.hpp>

#include <cmath>

using namespace mfstop;
using nlohmann::json;

namespace {

EmpiricalMeasure two_atoms() {
    Eigen::MatrixXd xs(2, 1);
    xs << 0.0, 1.0;
    return EmpiricalMeasure::uniform(xs, {1, 1});
}

} // namespace

TEST_CASE("rate fit recovers an exact power law") {
    std::vector<ChaosRow> rows(3);
    rows[0].N = 2;
    rows[0].w1sq_mean = 0.5;
    rows[1].N = 8;
    rows[1].w1sq_mean = 0.125;
    rows[2].N = 32;
    rows[2].w1sq_mean = 0.03125;
    CHECK(rate_fit(rows) == doctest::Approx(-1.0).epsilon(1e-12));

    rows.resize(1);
    CHECK_THROWS_AS(rate_fit(rows), UsageError);
    rows.resize(2);
    rows[1].N = 8;
    rows[1].w1sq_mean = 0.0;
    CHECK_THROWS_AS(rate_fit(rows), EvalError);
    rows[1].w1sq_mean = 0.125;
    rows[1].N = 2; // sizes do not vary
    CHECK_THROWS_AS(rate_fit(rows), EvalError);
}

TEST_CASE("decoupled chaos sweep: exact fixed point, decaying distance") {
    const Model m = make_builtin("constant-coefficients",
                                 json{{"b0", 0.2},
                                      {"sigma", 0.3},
                                      {"f0", 0.0},
                                      {"g", {{"shape", "const"}, {"a", 0.0}}}});
    const TimeGrid grid{0.0, 0.5, 4};
    const SurvivalLaw law = SurvivalLaw::uniform_nodes(grid.n_steps);

    ChaosParams p;
    p.Ns = {64, 2}; // unsorted on purpose
    p.replications = 32;
    p.cloud_multiple = 4;
    p.bias_subsample = 64;
    p.w2_replications = 8;
    const ChaosReport rep = chaos_experiment(m, two_atoms(), grid, law, 31, p);

    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].N == 2);
    CHECK(rep.rows[1].N == 64);
    CHECK(rep.cloud_size == 256);

    // common random numbers make the mean-field map exact for decoupled models
    CHECK(rep.picard_converged);
    CHECK(rep.picard_gap == 0.0);
    // and the halved cloud shares its streams with the full one
    CHECK(rep.flow_bias_proxy == 0.0);

    for (const ChaosRow& r : rep.rows) {
        CHECK(r.replications == 32);
        CHECK(r.w2_replications == 8);
        CHECK(r.w1sq_mean > 0.0);
        CHECK(r.w1sq_se > 0.0);
        CHECK(r.w2sq_mean > 0.0);
        CHECK(std::isfinite(r.w2sq_se));
    }
    const double drop =
        rep.rows[0].w1sq_mean - rep.rows[1].w1sq_mean;
    CHECK(drop > 2.0 * (rep.rows[0].w1sq_se + rep.rows[1].w1sq_se));
    CHECK(rep.slope < -0.5);
    CHECK(rep.slope == rate_fit(rep.rows));
}

TEST_CASE("chaos sweep rejects malformed parameters") {
    const Model m = make_builtin("constant-coefficients", json{{"sigma", 0.3}});
    const TimeGrid grid{0.0, 0.5, 4};
    const SurvivalLaw law = SurvivalLaw::uniform_nodes(grid.n_steps);
    ChaosParams p;
    p.replications = 1;
    CHECK_THROWS_AS(chaos_experiment(m, two_atoms(), grid, law, 1, p), UsageError);
    p.replications = 4;
    p.Ns = {};
    CHECK_THROWS_AS(chaos_experiment(m, two_atoms(), grid, law, 1, p), UsageError);
    p.Ns = {0, 2};
    CHECK_THROWS_AS(chaos_experiment(m, two_atoms(), grid, law, 1, p), UsageError);
}

TEST_CASE("value ladder on lattice rows carries the exact oracle") {
    const Model m = make_builtin("decoupled-additive",
                                 json{{"b0", 0.3},
                                      {"b1", -0.5},
                                      {"sigma", 0.4},
                                      {"f0", 0.1},
                                      {"f1", 0.05},
                                      {"g", {{"shape", "put"}, {"strike", 1.1}}}});
    const TimeGrid grid{0.0, 1.0, 8};
    Eigen::MatrixXd xs(2, 1);
    xs << 0.8, 1.2;
    const auto m0 = EmpiricalMeasure::uniform(xs, {1, 1});

    ConvergenceParams p;
    p.Ns = {2, 1}; // unsorted on purpose
    p.rollout_reps = 200;
    p.lattice_max = 2;
    p.spec.x_min = -1.0;
    p.spec.x_max = 2.6;
    p.spec.n_x = 19;
    p.eta = 1e-9;
    const ConvergenceReport rep = value_convergence_experiment(m, m0, grid, 5, p);

    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].N == 1);
    CHECK(rep.rows[1].N == 2);
    CHECK(rep.rows[0].backend == "lattice");
    CHECK(rep.rows[1].backend == "lattice");
    REQUIRE(rep.has_oracle);

    const SingleTable single = solve_single(m, grid, p.spec);
    const double oracle = 0.5 * (single.value_at(0, 0.8) + single.value_at(0, 1.2));
    CHECK(rep.rows[0].oracle == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(rep.rows[1].oracle == doctest::Approx(oracle).epsilon(1e-12));

    CHECK(std::isnan(rep.rows[0].cauchy_diff));
    CHECK(rep.rows[1].cauchy_diff ==
          doctest::Approx(std::abs(rep.rows[1].value_rollout - rep.rows[0].value_rollout))
              .epsilon(1e-15));

    CHECK(rep.tol_disc > 0.0);
    CHECK(std::isfinite(rep.tol_disc));

    for (const ConvergenceRow& r : rep.rows) {
        CHECK(r.rollout_se > 0.0);
        // rollout simulates the Gaussian chain, the table is the lattice value
        CHECK(std::abs(r.value_rollout - r.value_table) <= 5.0 * r.rollout_se + 0.05);
    }
}

TEST_CASE("value ladder switches to the regression backend past the cap") {
    const Model m = make_builtin("decoupled-additive",
                                 json{{"b0", 0.3},
                                      {"b1", -0.5},
                                      {"sigma", 0.4},
                                      {"f0", 0.1},
                                      {"f1", 0.05},
                                      {"g", {{"shape", "put"}, {"strike", 1.1}}}});
    const TimeGrid grid{0.0, 1.0, 8};
    Eigen::MatrixXd xs(2, 1);
    xs << 0.8, 1.2;
    const auto m0 = EmpiricalMeasure::uniform(xs, {1, 1});

    ConvergenceParams p;
    p.Ns = {3};
    p.rollout_reps = 100;
    p.lattice_max = 2;
    p.spec.x_min = -1.0;
    p.spec.x_max = 2.6;
    p.spec.n_x = 19;
    p.lsmc.n_paths = 600;
    p.lsmc.improvement_rounds = 1;
    p.lsmc.eval_paths = 300;
    p.eta = 1e-9;
    const ConvergenceReport rep = value_convergence_experiment(m, m0, grid, 5, p);

    REQUIRE(rep.rows.size() == 1);
    CHECK(rep.rows[0].backend == "lsmc");
    CHECK(rep.rows[0].rollout_se > 0.0);
    CHECK(std::isfinite(rep.rows[0].value_table));
    // no lattice row, so no discretization probe
    CHECK(rep.tol_disc == 0.0);

    ConvergenceParams bad = p;
    bad.rollout_reps = 1;
    CHECK_THROWS_AS(value_convergence_experiment(m, m0, grid, 5, bad), UsageError);
    bad = p;
    bad.Ns = {};
    CHECK_THROWS_AS(value_convergence_experiment(m, m0, grid, 5, bad), UsageError);
}
