#pragma once

#include <string>
#include <vector>

#include "mfstop/measure.hpp"
#include "mfstop/model.hpp"

namespace mfstop {

// Inner test function h(x, i) on S = R^d x {0,1}: a smooth scalar base in one
// coordinate, multiplied by the indicator when alive_only is set.
struct ScalarField {
    enum class Kind { Power, Cosine };
    Kind kind = Kind::Power;
    int power = 1;    // Power: x^power
    double freq = 1.0; // Cosine: cos(freq * x)
    int coord = 0;
    bool alive_only = true;

    double base(double x) const;
    double dbase(double x) const;
    double d2base(double x) const;
    double h(const Eigen::Ref<const Eigen::VectorXd>& x, int indicator) const;
    // integral of h against an atomic measure
    double moment(const EmpiricalMeasure& m) const;
};

// One monomial of the outer function: c * t^t_power * prod_j z_j^z_powers[j].
struct CylinderTerm {
    double c = 1.0;
    int t_power = 0;
    std::vector<int> z_powers;
};

// U(t, m) = G(t, z_1, ..., z_p) with z_j = integral of h_j against m and G a
// polynomial. All derivatives below are closed-form.
struct CylinderFunctional {
    std::string name;
    std::vector<ScalarField> fields;
    std::vector<CylinderTerm> terms;

    void validate() const;
    std::vector<double> moments(const EmpiricalMeasure& m) const;

    double value(double t, const EmpiricalMeasure& m) const;
    double dt_partial(double t, const EmpiricalMeasure& m) const;

    // linear functional derivative evaluated at the point (x, indicator)
    double delta_m(double t, const EmpiricalMeasure& m, const Eigen::Ref<const Eigen::VectorXd>& x,
                   int indicator) const;
    // x-derivatives of the alive branch of the linear derivative
    Eigen::VectorXd dx_delta_m1(double t, const EmpiricalMeasure& m,
                                const Eigen::Ref<const Eigen::VectorXd>& x) const;
    Eigen::MatrixXd dxx_delta_m1(double t, const EmpiricalMeasure& m,
                                 const Eigen::Ref<const Eigen::VectorXd>& x) const;
    // second linear derivative, both slots alive, differentiated in x and xt
    Eigen::MatrixXd d2_mumu_11(double t, const EmpiricalMeasure& m,
                               const Eigen::Ref<const Eigen::VectorXd>& x,
                               const Eigen::Ref<const Eigen::VectorXd>& xt) const;
};

const CylinderFunctional& builtin_functional(const std::string& name);
std::vector<std::string> builtin_functional_names();

// phi(y) = U(t, m^N(y)) with its analytic particle-coordinate derivatives:
//   grad_k  = w_k * sum_j dG_j * dh_j(x_k, i_k)
//   hess_k  = w_k * sum_j dG_j * d2h_j(x_k, i_k)
//           + w_k^2 * sum_{j,l} d2G_{jl} * dh_j(x_k, i_k) dh_l(x_k, i_k)^T
struct Projection {
    double value = 0.0;
    Eigen::MatrixXd grad;              // N x d
    std::vector<Eigen::MatrixXd> hess; // N blocks of d x d
};
Projection project(const CylinderFunctional& U, double t, const EmpiricalMeasure& m);

// Worst relative discrepancy between the analytic projection derivatives and
// central finite differences of phi, over all particles: gradients and the
// diagonal of each Hessian block.
double check_projection_derivatives(const CylinderFunctional& U, double t,
                                    const EmpiricalMeasure& m, double h_fd);

// Generator along unstopped dynamics plus the running reward:
//   dt U + sum_alive w_k (b . dx_delta_m1 + 1/2 sigma sigma^T : dxx_delta_m1) + eval_F
double evaluate_generator(const CylinderFunctional& U, const Model& model, double t,
                          const EmpiricalMeasure& m);

// Instantaneous cost of stopping: inf over the alive support of
// delta_m evaluated alive minus delta_m evaluated stopped (+inf if none alive).
double evaluate_DI(const CylinderFunctional& U, double t, const EmpiricalMeasure& m);

struct GeneratorCheck {
    double fd_drift = 0.0;   // (mean U(t+dt, cloud after one step) - U(t, cloud)) / dt
    double generator = 0.0;  // analytic value, running reward excluded
    double discrepancy = 0.0;
};
GeneratorCheck check_generator_consistency(const CylinderFunctional& U, const Model& model,
                                           const TimeGrid& grid, const EmpiricalMeasure& m0, int M,
                                           std::uint64_t seed, int replications = 64);

// | U(mt) - U(m) - int_0^1 int delta_m U(l mt + (1-l) m, y) (mt - m)(dy) dl |
// with the l-integral done by 16-point Gauss-Legendre (exact for polynomial G).
double mixture_identity_gap(const CylinderFunctional& U, double t, const EmpiricalMeasure& m,
                            const EmpiricalMeasure& mt);

} // namespace mfstop
