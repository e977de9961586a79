// External potential variants and the conservative/dissipative system
// matrices of the kinetic equation.

#ifndef KFP_POTENTIAL_HPP
#define KFP_POTENTIAL_HPP

#include <Eigen/Dense>

#include "kfp/domain.hpp"

namespace kfp {

/// Closed-form external potentials phi(x), plus a marker variant for the
/// self-consistent field supplied by the PIC module.
struct PotentialSpec {
    enum class Kind {
        QuadraticForm,       // 1/2 (z - mu~)^T K^-1 (z - mu~) over phase space
        QuadraticPlusCosine, // a |x|^2 / 2 + b sum_i cos(2 pi x_i)
        SinePeriodic,        // sum_i amp sin(freq x_i)
        SelfConsistent       // field comes from the Poisson solve
    };

    Kind kind = Kind::QuadraticForm;
    int dim_x = 1;
    int dim_v = 1;

    // QuadraticForm. The x-block of k_inv drives phi; presets keep the
    // v-block equal to the identity so 1/2|v|^2 + phi(x) matches the form.
    Eigen::MatrixXd k_inv;
    Eigen::VectorXd mu_tilde;

    double a = 0.0, b = 0.0;       // QuadraticPlusCosine
    double amp = 0.0, freq = 0.0;  // SinePeriodic

    static PotentialSpec quadratic_form(Eigen::MatrixXd k_inv, Eigen::VectorXd mu_tilde,
                                        int dim_x, int dim_v);
    static PotentialSpec quadratic_plus_cosine(double a, double b, int dim_x, int dim_v);
    static PotentialSpec sine_periodic(double amp, double freq, int dim_x, int dim_v);
    static PotentialSpec self_consistent(int dim_x, int dim_v);

    bool closed_form() const { return kind != Kind::SelfConsistent; }

    double value(const double* x) const;
    void gradient(const double* x, double* grad) const;
};

/// Antisymmetric transport matrix J, degenerate diffusion D, and the
/// collision strength/background temperature of the kinetic system.
struct SystemMatrices {
    Eigen::MatrixXd J;  // [[0, -I], [I, 0]]
    Eigen::MatrixXd D;  // [[0, 0], [0, eps I]]
    double epsilon = 1.0;
    double T0 = 1.0;

    static SystemMatrices standard(int d, double epsilon, double T0 = 1.0);

    void validate() const;  // J antisymmetric, D PSD with zero upper-left block
};

}  // namespace kfp

#endif
