#include "kfp/potential.hpp"

#include <cmath>
#include <stdexcept>

namespace kfp {

PotentialSpec PotentialSpec::quadratic_form(Eigen::MatrixXd k_inv, Eigen::VectorXd mu_tilde,
                                            int dim_x, int dim_v) {
    PotentialSpec p;
    p.kind = Kind::QuadraticForm;
    p.dim_x = dim_x;
    p.dim_v = dim_v;
    const int n = dim_x + dim_v;
    if (k_inv.rows() != n || k_inv.cols() != n || mu_tilde.size() != n)
        throw std::invalid_argument("quadratic_form: K^-1 / mu~ shape mismatch");
    Eigen::LLT<Eigen::MatrixXd> llt(k_inv);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("quadratic_form: K^-1 must be SPD");
    p.k_inv = std::move(k_inv);
    p.mu_tilde = std::move(mu_tilde);
    return p;
}

PotentialSpec PotentialSpec::quadratic_plus_cosine(double a, double b, int dim_x, int dim_v) {
    PotentialSpec p;
    p.kind = Kind::QuadraticPlusCosine;
    p.dim_x = dim_x;
    p.dim_v = dim_v;
    p.a = a;
    p.b = b;
    return p;
}

PotentialSpec PotentialSpec::sine_periodic(double amp, double freq, int dim_x, int dim_v) {
    PotentialSpec p;
    p.kind = Kind::SinePeriodic;
    p.dim_x = dim_x;
    p.dim_v = dim_v;
    p.amp = amp;
    p.freq = freq;
    return p;
}

PotentialSpec PotentialSpec::self_consistent(int dim_x, int dim_v) {
    PotentialSpec p;
    p.kind = Kind::SelfConsistent;
    p.dim_x = dim_x;
    p.dim_v = dim_v;
    return p;
}

double PotentialSpec::value(const double* x) const {
    switch (kind) {
        case Kind::QuadraticForm: {
            // phi(x) = 1/2 (x - mu~_x)^T [K^-1]_xx (x - mu~_x)
            double s = 0.0;
            for (int i = 0; i < dim_x; ++i) {
                double row = 0.0;
                for (int j = 0; j < dim_x; ++j)
                    row += k_inv(i, j) * (x[j] - mu_tilde(j));
                s += (x[i] - mu_tilde(i)) * row;
            }
            return 0.5 * s;
        }
        case Kind::QuadraticPlusCosine: {
            double s = 0.0;
            for (int i = 0; i < dim_x; ++i)
                s += 0.5 * a * x[i] * x[i] + b * std::cos(2.0 * M_PI * x[i]);
            return s;
        }
        case Kind::SinePeriodic: {
            double s = 0.0;
            for (int i = 0; i < dim_x; ++i) s += amp * std::sin(freq * x[i]);
            return s;
        }
        case Kind::SelfConsistent:
            throw std::runtime_error(
                "PotentialSpec: self-consistent potential must be evaluated by the PIC field solve");
    }
    return 0.0;
}

void PotentialSpec::gradient(const double* x, double* grad) const {
    switch (kind) {
        case Kind::QuadraticForm: {
            for (int i = 0; i < dim_x; ++i) {
                double row = 0.0;
                for (int j = 0; j < dim_x; ++j)
                    row += k_inv(i, j) * (x[j] - mu_tilde(j));
                grad[i] = row;
            }
            return;
        }
        case Kind::QuadraticPlusCosine: {
            for (int i = 0; i < dim_x; ++i)
                grad[i] = a * x[i] - 2.0 * M_PI * b * std::sin(2.0 * M_PI * x[i]);
            return;
        }
        case Kind::SinePeriodic: {
            for (int i = 0; i < dim_x; ++i)
                grad[i] = amp * freq * std::cos(freq * x[i]);
            return;
        }
        case Kind::SelfConsistent:
            throw std::runtime_error(
                "PotentialSpec: self-consistent potential must be evaluated by the PIC field solve");
    }
}

SystemMatrices SystemMatrices::standard(int d, double epsilon, double T0) {
    SystemMatrices m;
    m.epsilon = epsilon;
    m.T0 = T0;
    const int n = 2 * d;
    m.J = Eigen::MatrixXd::Zero(n, n);
    m.D = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < d; ++i) {
        m.J(i, d + i) = -1.0;
        m.J(d + i, i) = 1.0;
        m.D(d + i, d + i) = epsilon;
    }
    return m;
}

void SystemMatrices::validate() const {
    if ((J + J.transpose()).norm() > 0.0)
        throw std::invalid_argument("SystemMatrices: J must be antisymmetric");
    if ((D - D.transpose()).norm() > 0.0)
        throw std::invalid_argument("SystemMatrices: D must be symmetric");
    const int d = static_cast<int>(J.rows()) / 2;
    if (D.topLeftCorner(d, d).norm() > 0.0)
        throw std::invalid_argument("SystemMatrices: D upper-left block must vanish");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(D);
    if (es.eigenvalues().minCoeff() < -1e-14)
        throw std::invalid_argument("SystemMatrices: D must be positive semidefinite");
}

}  // namespace kfp
