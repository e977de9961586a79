#include "kfp/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "kfp/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace kfp {

namespace {

double log_normal_pdf(double x, double mean, double sigma) {
    const double z = (x - mean) / sigma;
    return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * M_PI);
}

double log_sum_exp(double a, double b) {
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double simpson_local(const std::function<double(double)>& f, double a, double b, int panels) {
    const double h = (b - a) / panels;
    double s = f(a) + f(b);
    for (int i = 1; i < panels; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

}  // namespace

double VelocityMixture::logdensity(const double* v) const {
    if (kind == Kind::Gaussian) {
        double s = 0.0;
        for (int i = 0; i < dim_v; ++i) s += log_normal_pdf(v[i], 0.0, sigma);
        return s;
    }
    double s = log_sum_exp(log_normal_pdf(v[0], center, sigma),
                           log_normal_pdf(v[0], -center, sigma)) -
               std::log(2.0);
    for (int i = 1; i < dim_v; ++i) s += log_normal_pdf(v[i], 0.0, transverse_sigma);
    return s;
}

double SpatialDensity::log_norm(double length) const {
    switch (kind) {
        case Kind::GaussianIso:
            return 0.0;  // already normalized
        case Kind::Uniform:
            return dim_x * std::log(length);
        case Kind::OnePlusCosine: {
            const double amp_ = amp, k_ = k;
            return std::log(simpson_local(
                [amp_, k_](double t) { return 1.0 + amp_ * std::cos(k_ * t); }, 0.0, length,
                8192));
        }
    }
    return 0.0;
}

double SpatialDensity::logdensity(const double* x, double length) const {
    switch (kind) {
        case Kind::GaussianIso: {
            double s = 0.0;
            for (int i = 0; i < dim_x; ++i) s += log_normal_pdf(x[i], 0.0, sigma);
            return s;
        }
        case Kind::Uniform:
            return -dim_x * std::log(length);
        case Kind::OnePlusCosine:
            return std::log(1.0 + amp * std::cos(k * x[0])) - log_norm(length);
    }
    return 0.0;
}

ParticleEnsemble sample_from_initial(const InitialSpec& spec, const DomainSpec& domain,
                                     int n_particles, std::uint64_t seed) {
    domain.validate();
    if (n_particles < 1)
        throw std::invalid_argument("sample_from_initial: need at least one particle");
    const int dx = domain.dim_x, dv = domain.dim_v;
    ParticleEnsemble ens(n_particles, dx, dv);
    const CounterRng rng(seed);

    if (spec.kind == InitialSpec::Kind::PhaseGaussian) {
        const int n = dx + dv;
        if (spec.mu0.size() != n || spec.C0.rows() != n || spec.C0.cols() != n)
            throw std::invalid_argument("sample_from_initial: mu0/C0 shape mismatch");
        Eigen::LLT<Eigen::MatrixXd> llt(spec.C0);
        if (llt.info() != Eigen::Success)
            throw std::invalid_argument("sample_from_initial: C0 must be SPD");
        const Eigen::MatrixXd L = llt.matrixL();
        const Eigen::MatrixXd c_inv = spec.C0.inverse();
        double log_det = 0.0;
        for (int i = 0; i < n; ++i) log_det += 2.0 * std::log(L(i, i));
        const double log_norm_const = -0.5 * (n * std::log(2.0 * M_PI) + log_det);

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int p = 0; p < n_particles; ++p) {
            Eigen::VectorXd xi(n);
            for (int i = 0; i < n; ++i)
                xi(i) = rng.normal(rng_stream::position, static_cast<std::uint64_t>(p), i);
            const Eigen::VectorXd z = spec.mu0 + L * xi;
            for (int i = 0; i < dx; ++i) ens.x(p)[i] = z(i);
            for (int i = 0; i < dv; ++i) ens.v(p)[i] = z(dx + i);
            const Eigen::VectorXd d = z - spec.mu0;
            ens.log_density[p] = -0.5 * d.dot(c_inv * d) + log_norm_const;
        }
        ens.wrap_positions(domain);
        return ens;
    }

    // Product initial condition.
    if (spec.rho.dim_x != dx || spec.velocity.dim_v != dv)
        throw std::invalid_argument("sample_from_initial: product spec dims mismatch");

    // Inverse-transform table on the mesh for the nonuniform periodic profile.
    std::vector<double> cdf;
    double mesh_dx = 0.0;
    if (spec.rho.kind == SpatialDensity::Kind::OnePlusCosine) {
        if (!domain.periodic() || dx != 1)
            throw std::invalid_argument("OnePlusCosine profile requires a periodic 1d domain");
        const int nx = spec.rho.grid_nx;
        mesh_dx = domain.length / nx;
        cdf.resize(nx);
        double acc = 0.0;
        for (int i = 0; i < nx; ++i) {
            const double xc = (i + 0.5) * mesh_dx;
            acc += std::max(0.0, 1.0 + spec.rho.amp * std::cos(spec.rho.k * xc));
            cdf[i] = acc;
        }
        for (int i = 0; i < nx; ++i) cdf[i] /= acc;
    }

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int p = 0; p < n_particles; ++p) {
        const auto pid = static_cast<std::uint64_t>(p);
        double* xp = ens.x(p);
        double* vp = ens.v(p);
        switch (spec.rho.kind) {
            case SpatialDensity::Kind::GaussianIso:
                for (int i = 0; i < dx; ++i)
                    xp[i] = spec.rho.sigma * rng.normal(rng_stream::position, pid, i);
                break;
            case SpatialDensity::Kind::Uniform:
                for (int i = 0; i < dx; ++i)
                    xp[i] = domain.length * rng.uniform(rng_stream::position, pid, i);
                break;
            case SpatialDensity::Kind::OnePlusCosine: {
                const double u = rng.uniform(rng_stream::position, pid, 0);
                const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
                const int cell = static_cast<int>(it - cdf.begin());
                const double jitter = rng.uniform(rng_stream::jitter, pid, 0) - 0.5;
                xp[0] = wrap_coordinate((cell + 0.5 + jitter) * mesh_dx, domain.length);
                break;
            }
        }

        if (spec.gaussian_velocity_alternative) {
            const double s = std::sqrt(spec.alt_t0);
            for (int i = 0; i < dv; ++i)
                vp[i] = s * rng.normal(rng_stream::velocity, pid, i);
        } else if (spec.velocity.kind == VelocityMixture::Kind::Gaussian) {
            for (int i = 0; i < dv; ++i)
                vp[i] = spec.velocity.sigma * rng.normal(rng_stream::velocity, pid, i);
        } else {
            const bool up = rng.uniform(rng_stream::beam, pid, 0) < 0.5;
            vp[0] = (up ? spec.velocity.center : -spec.velocity.center) +
                    spec.velocity.sigma * rng.normal(rng_stream::velocity, pid, 0);
            for (int i = 1; i < dv; ++i)
                vp[i] = spec.velocity.transverse_sigma * rng.normal(rng_stream::velocity, pid, i);
        }

        double lf = spec.rho.logdensity(xp, domain.length);
        if (spec.gaussian_velocity_alternative) {
            for (int i = 0; i < dv; ++i)
                lf += log_normal_pdf(vp[i], 0.0, std::sqrt(spec.alt_t0));
        } else {
            lf += spec.velocity.logdensity(vp);
        }
        ens.log_density[p] = lf;
    }
    ens.wrap_positions(domain);
    return ens;
}

}  // namespace kfp
