// Initial-condition specifications and deterministic ensemble sampling.
//
// Positions on periodic domains use inverse transform sampling of the
// initial spatial profile evaluated on the mesh, with uniform in-cell
// jitter; unbounded profiles are sampled directly. Tracked log-densities
// are initialized from the analytic initial distribution.

#ifndef KFP_SAMPLING_HPP
#define KFP_SAMPLING_HPP

#include <Eigen/Dense>
#include <cstdint>

#include "kfp/domain.hpp"

namespace kfp {

/// Velocity marginal of the initial distribution.
struct VelocityMixture {
    enum class Kind { Gaussian, TwoBeam };

    Kind kind = Kind::Gaussian;
    double sigma = 1.0;             // beam / isotropic std deviation
    double center = 0.0;            // TwoBeam: beams at +-center on component 0
    double transverse_sigma = 1.0;  // TwoBeam: std of the remaining components
    int dim_v = 1;

    double logdensity(const double* v) const;
};

/// Spatial marginal of the initial distribution.
struct SpatialDensity {
    enum class Kind { GaussianIso, Uniform, OnePlusCosine };

    Kind kind = Kind::GaussianIso;
    double sigma = 1.0;   // GaussianIso
    double amp = 0.0;     // OnePlusCosine: rho ~ 1 + amp cos(k x), normalized on [0, L)
    double k = 1.0;
    int grid_nx = 128;    // mesh used for inverse transform sampling
    int dim_x = 1;

    // log of the normalized density; `length` is the periodic domain size.
    double logdensity(const double* x, double length) const;
    // log of the normalization constant of the un-normalized formula.
    double log_norm(double length) const;
};

struct InitialSpec {
    enum class Kind { PhaseGaussian, Product };

    Kind kind = Kind::Product;

    // PhaseGaussian: joint normal on (x, v).
    Eigen::VectorXd mu0;
    Eigen::MatrixXd C0;

    // Product: rho0(x) * mixture(v).
    SpatialDensity rho;
    VelocityMixture velocity;

    // Samples velocities from N(0, T0) instead of the declared mixture
    // (the tracked log-density follows the sampler).
    bool gaussian_velocity_alternative = false;
    double alt_t0 = 1.0;
};

/// Draws n particles; bitwise deterministic in (spec, domain, n, seed)
/// regardless of evaluation order.
ParticleEnsemble sample_from_initial(const InitialSpec& spec, const DomainSpec& domain,
                                     int n_particles, std::uint64_t seed);

}  // namespace kfp

#endif
