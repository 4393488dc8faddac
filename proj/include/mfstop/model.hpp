#pragma once

#include <Eigen/Dense>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>

#include "mfstop/measure.hpp"

namespace mfstop {

// Problem data for a symmetric interacting system: each running particle follows
//   dX = b(t, X, m) dt + sigma(t, X, m) dW
// where m is the empirical measure of the whole population (positions and
// indicators). f is the running reward per unit of alive mass, g the terminal
// reward as a functional of the x-marginal.
using DriftFn = std::function<Eigen::VectorXd(double, const Eigen::Ref<const Eigen::VectorXd>&,
                                              const EmpiricalMeasure&)>;
using DiffusionFn = std::function<Eigen::MatrixXd(double, const Eigen::Ref<const Eigen::VectorXd>&,
                                                  const EmpiricalMeasure&)>;
using RunningFn = std::function<double(double, const Eigen::Ref<const Eigen::VectorXd>&,
                                       const EmpiricalMeasure&)>;
using TerminalFn = std::function<double(const EmpiricalMeasure&)>;

struct Model {
    std::string name;
    nlohmann::json params; // builder arguments, kept so solved tables can be reloaded
    int dim = 1;
    // False when b, sigma, f ignore the measure argument; several solvers and
    // tests exploit the resulting decoupling.
    bool coupled = false;
    DriftFn b;
    DiffusionFn sigma;
    RunningFn f;
    // Receives the x-marginal only (eval_terminal enforces this); additive
    // built-ins integrate a scalar payoff against it.
    TerminalFn g;
    // For additive g(mu) = integral of gbar d(mu); unset otherwise. Exposed so the
    // decoupled oracle and brute-force checks can evaluate the payoff pointwise.
    std::function<double(const Eigen::Ref<const Eigen::VectorXd>&)> gbar;
    // Documented linear-growth constant: |b| + |sigma| + |f| + |gbar| <= C(1 + |x|).
    double growth_const = 0.0;
};

// Aggregate running reward: integral of f(t, x, m) against the alive part m(dx,1).
// Throws EvalError naming the offending atom if f returns a non-finite value.
double eval_F(const Model& model, double t, const EmpiricalMeasure& m);

// Terminal reward: g applied to the x-marginal of m, so stopped and alive atoms
// both contribute their positions and the indicator pattern cannot leak in.
double eval_terminal(const Model& model, const EmpiricalMeasure& m);

// Built-in model registry (one-dimensional):
//   "decoupled-additive":    b = b0 + b1*x, sigma const, f = f0 + f1*x, additive g.
//   "mean-reverter":         b = rate*(xbar_m - x) with xbar_m = integral of x m(dx,1),
//                            sigma const, f = f0 + f1*x, additive g.
//   "constant-coefficients": b, sigma, f constant, additive g.
// Additive payoff shapes: {"shape":"linear","a":..,"b":..} -> a + b*x,
// {"shape":"put","strike":K} -> max(K - x, 0), {"shape":"const","a":..}.
Model make_builtin(const std::string& name, const nlohmann::json& params);

} // namespace mfstop
