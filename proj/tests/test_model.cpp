#include "doctest.h"

#include <mfstop/model.hpp>

#include <cmath>

using namespace mfstop;
using nlohmann::json;

namespace {

EmpiricalMeasure three_atoms() {
    Eigen::MatrixXd xs(3, 1);
    xs << -0.5, 1.0, 2.0;
    return EmpiricalMeasure::uniform(xs, {1, 1, 0});
}

} // namespace

TEST_CASE("decoupled-additive evaluates its advertised coefficients") {
    const Model m = make_builtin("decoupled-additive",
                                 json{{"b0", 0.3},
                                      {"b1", -0.5},
                                      {"sigma", 0.4},
                                      {"f0", 0.1},
                                      {"f1", 0.05},
                                      {"g", {{"shape", "put"}, {"strike", 1.1}}}});
    CHECK_FALSE(m.coupled);
    const auto mm = three_atoms();
    Eigen::VectorXd x(1);
    x << 2.0;
    CHECK(m.b(0.0, x, mm)(0) == doctest::Approx(0.3 - 0.5 * 2.0).epsilon(1e-15));
    CHECK(m.sigma(0.0, x, mm)(0, 0) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(m.f(0.0, x, mm) == doctest::Approx(0.1 + 0.05 * 2.0).epsilon(1e-15));
    CHECK(m.gbar(x) == doctest::Approx(0.0).epsilon(1e-15));
    x << 0.6;
    CHECK(m.gbar(x) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.growth_const > 0.0);
}

TEST_CASE("mean-reverter pulls toward the alive mean") {
    const Model m = make_builtin("mean-reverter", json{{"rate", 0.7}, {"sigma", 0.3}});
    CHECK(m.coupled);
    const auto mm = three_atoms(); // alive mean over all mass: (-0.5 + 1.0)/3
    const double xbar = (-0.5 + 1.0) / 3.0;
    Eigen::VectorXd x(1);
    x << 0.25;
    CHECK(m.b(0.0, x, mm)(0) == doctest::Approx(0.7 * (xbar - 0.25)).epsilon(1e-14));
}

TEST_CASE("constant-coefficients rejects state-dependent running reward") {
    CHECK_THROWS_AS(make_builtin("constant-coefficients", json{{"f1", 0.2}}), ValidationError);
    const Model m = make_builtin("constant-coefficients", json{{"b0", 0.1}, {"f0", 0.4}});
    const auto mm = three_atoms();
    Eigen::VectorXd x(1);
    x << 5.0;
    CHECK(m.b(0.0, x, mm)(0) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(m.f(0.0, x, mm) == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("unknown names and payload shapes are rejected") {
    CHECK_THROWS_AS(make_builtin("no-such-model", json::object()), ValidationError);
    CHECK_THROWS_AS(make_builtin("decoupled-additive", json{{"g", {{"shape", "banana"}}}}),
                    ValidationError);
    CHECK_THROWS_AS(make_builtin("decoupled-additive", json{{"b0", "text"}}), ValidationError);
}

TEST_CASE("running reward integrates over alive atoms only") {
    const Model m = make_builtin("decoupled-additive", json{{"f0", 1.0}, {"f1", 1.0}});
    const auto mm = three_atoms();
    // alive atoms -0.5 and 1.0, each weight 1/3: (1 - 0.5)/3 + (1 + 1)/3
    CHECK(eval_F(m, 0.0, mm) == doctest::Approx((0.5 + 2.0) / 3.0).epsilon(1e-14));
}

TEST_CASE("terminal reward sees the x-marginal, not the indicators") {
    const Model m = make_builtin("decoupled-additive",
                                 json{{"g", {{"shape", "put"}, {"strike", 1.1}}}});
    auto mm = three_atoms();
    const double before = eval_terminal(m, mm);
    // flipping indicators must not change the terminal value
    for (int k = 0; k < mm.size(); ++k) mm.set_indicator(k, 1 - mm.indicator(k));
    CHECK(eval_terminal(m, mm) == doctest::Approx(before).epsilon(1e-15));
    // put at {-0.5, 1.0, 2.0}: (1.6 + 0.1 + 0)/3
    CHECK(before == doctest::Approx((1.6 + 0.1) / 3.0).epsilon(1e-14));
}

TEST_CASE("builders keep their parameters for reconstruction") {
    const json params{{"b0", 0.25}, {"g", {{"shape", "linear"}, {"a", 1.0}, {"b", 2.0}}}};
    const Model m = make_builtin("decoupled-additive", params);
    CHECK(m.params == params);
    CHECK(m.name == "decoupled-additive");
    const Model again = make_builtin(m.name, m.params);
    Eigen::VectorXd x(1);
    x << 0.5;
    CHECK(again.gbar(x) == doctest::Approx(m.gbar(x)).epsilon(1e-15));
}
