#include "mfstop/model.hpp"

#include <cmath>
#include <sstream>

namespace mfstop {

double eval_F(const Model& model, double t, const EmpiricalMeasure& m) {
    double total = 0.0;
    for (int k = 0; k < m.size(); ++k) {
        if (!m.indicator(k)) continue;
        const double v = model.f(t, m.x(k), m);
        if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "eval_F: f returned non-finite value at atom " << k << " (x1=" << m.x1(k)
               << ", i=1)";
            throw EvalError(os.str());
        }
        total += m.weight(k) * v;
    }
    return total;
}

double eval_terminal(const Model& model, const EmpiricalMeasure& m) {
    const double v = model.g(m.x_marginal());
    if (!std::isfinite(v)) throw EvalError("eval_terminal: g returned non-finite value");
    return v;
}

namespace {

using nlohmann::json;

double get_num(const json& j, const std::string& key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) throw ValidationError("model params." + key + ": expected number");
    return j.at(key).get<double>();
}

// Scalar payoff for additive terminal rewards; also reused for f when linear.
std::function<double(const Eigen::Ref<const Eigen::VectorXd>&)> make_payoff(const json& j,
                                                                            double* growth) {
    const std::string shape = j.value("shape", "linear");
    if (shape == "linear") {
        const double a = get_num(j, "a", 0.0), b = get_num(j, "b", 1.0);
        *growth += std::abs(a) + std::abs(b);
        return [a, b](const Eigen::Ref<const Eigen::VectorXd>& x) { return a + b * x(0); };
    }
    if (shape == "put") {
        const double strike = get_num(j, "strike", 1.0);
        *growth += std::abs(strike) + 1.0;
        return [strike](const Eigen::Ref<const Eigen::VectorXd>& x) {
            return std::max(strike - x(0), 0.0);
        };
    }
    if (shape == "const") {
        const double a = get_num(j, "a", 0.0);
        *growth += std::abs(a);
        return [a](const Eigen::Ref<const Eigen::VectorXd>&) { return a; };
    }
    throw ValidationError("model params.g.shape: unknown payoff shape '" + shape + "'");
}

TerminalFn additive_terminal(std::function<double(const Eigen::Ref<const Eigen::VectorXd>&)> gbar) {
    return [gbar](const EmpiricalMeasure& marginal) {
        double total = 0.0;
        for (int k = 0; k < marginal.size(); ++k) total += marginal.weight(k) * gbar(marginal.x(k));
        return total;
    };
}

} // namespace

Model make_builtin(const std::string& name, const nlohmann::json& params) {
    Model m;
    m.name = name;
    m.params = params;
    m.dim = 1;

    const double sigma = get_num(params, "sigma", 0.0);
    if (sigma < 0.0) throw ValidationError("model params.sigma: must be >= 0");
    const double f0 = get_num(params, "f0", 0.0);
    const double f1 = get_num(params, "f1", 0.0);
    m.sigma = [sigma](double, const Eigen::Ref<const Eigen::VectorXd>&, const EmpiricalMeasure&) {
        return Eigen::MatrixXd::Constant(1, 1, sigma);
    };
    m.f = [f0, f1](double, const Eigen::Ref<const Eigen::VectorXd>& x, const EmpiricalMeasure&) {
        return f0 + f1 * x(0);
    };
    double growth = sigma + std::abs(f0) + std::abs(f1);
    m.gbar = make_payoff(params.value("g", json::object()), &growth);
    m.g = additive_terminal(m.gbar);

    if (name == "decoupled-additive") {
        const double b0 = get_num(params, "b0", 0.0);
        const double b1 = get_num(params, "b1", 0.0);
        m.coupled = false;
        m.b = [b0, b1](double, const Eigen::Ref<const Eigen::VectorXd>& x,
                       const EmpiricalMeasure&) {
            return Eigen::VectorXd::Constant(1, b0 + b1 * x(0));
        };
        growth += std::abs(b0) + std::abs(b1);
    } else if (name == "mean-reverter") {
        const double rate = get_num(params, "rate", 1.0);
        m.coupled = true;
        // Reverts toward the alive first moment (unnormalised, so the pull fades
        // as mass stops); Lipschitz in both x and the measure.
        m.b = [rate](double, const Eigen::Ref<const Eigen::VectorXd>& x,
                     const EmpiricalMeasure& mu) {
            const double xbar = mu.alive_moment(1)(0);
            return Eigen::VectorXd::Constant(1, rate * (xbar - x(0)));
        };
        growth += 2.0 * std::abs(rate);
    } else if (name == "constant-coefficients") {
        const double b0 = get_num(params, "b0", 0.0);
        m.coupled = false;
        m.b = [b0](double, const Eigen::Ref<const Eigen::VectorXd>&, const EmpiricalMeasure&) {
            return Eigen::VectorXd::Constant(1, b0);
        };
        if (params.contains("f1") && f1 != 0.0)
            throw ValidationError("model params.f1: constant-coefficients wants constant f");
        growth += std::abs(b0);
    } else {
        throw ValidationError("model.name: unknown built-in model '" + name + "'");
    }

    m.growth_const = growth;
    return m;
}

} // namespace mfstop
