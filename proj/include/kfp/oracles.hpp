// Independent ground-truth oracles and error metrics: the Gaussian moment
// ODE of the quadratic test case, closed-form stationary densities,
// per-step drift error, discrete free energy, Monte-Carlo KL, and
// marginal histograms.

#ifndef KFP_ORACLES_HPP
#define KFP_ORACLES_HPP

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "kfp/domain.hpp"
#include "kfp/mlp.hpp"
#include "kfp/potential.hpp"

namespace kfp {

/// Mean and covariance of the Gaussian solution of the quadratic case.
struct GaussianMoments {
    Eigen::VectorXd mu;
    Eigen::MatrixXd C;
};

/// Quadratic model data shared by the moment ODE and the potential.
struct QuadraticModel {
    Eigen::MatrixXd k_inv;     // K^-1, SPD
    Eigen::VectorXd mu_tilde;
};

/// d(mu)/dt = -(D+J) K^-1 (mu - mu~)
/// d(C)/dt  = 2 D - 2 Sym((D+J) K^-1 C)
void moment_ode_rhs(const GaussianMoments& m, const QuadraticModel& model,
                    const SystemMatrices& sys, Eigen::VectorXd& dmu, Eigen::MatrixXd& dC);

/// Classical 4th-order integration at fixed reference step. Throws if C
/// loses positive definiteness along the way.
GaussianMoments integrate_moments(const GaussianMoments& m0, const QuadraticModel& model,
                                  const SystemMatrices& sys, double t_final,
                                  double dt_ref = 1e-4);

/// Incremental fine integrator keeping the moments at the outer-step times.
class GaussianMomentTrajectory {
public:
    GaussianMomentTrajectory(GaussianMoments m0, QuadraticModel model, SystemMatrices sys,
                             double dt_ref = 1e-4);
    void advance(double dt);
    const GaussianMoments& current() const { return m_; }
    double time() const { return t_; }

private:
    GaussianMoments m_;
    QuadraticModel model_;
    SystemMatrices sys_;
    double dt_ref_;
    double t_ = 0.0;
};

/// score = -C^-1 (z - mu) over the full phase vector z = (x, v).
Eigen::VectorXd gaussian_score(const GaussianMoments& m, const double* x, const double* v,
                               int dim_x, int dim_v);
double gaussian_logdensity(const GaussianMoments& m, const double* x, const double* v,
                           int dim_x, int dim_v);

/// f_inf(x, v) = exp(-|v|^2/2 - phi(x)) / Z with Z precomputed by
/// composite quadrature in x (analytic Gaussian factor in v).
struct StationaryDensity {
    PotentialSpec potential;
    double T0 = 1.0;
    double log_normalizer = 0.0;  // log Z

    double logdensity(const double* x, const double* v) const;
};

/// Builds the stationary density; x integration runs over [0, L) for
/// periodic domains and over a wide box otherwise.
StationaryDensity make_stationary_density(const PotentialSpec& pot, const DomainSpec& domain,
                                           double T0 = 1.0, int panels = 8192);

/// Composite Simpson on [a, b]; panels must be even and >= 2.
double simpson(const std::function<double(double)>& f, double a, double b, int panels);

/// Velocity-score callback: fills score (dim_v) at phase point (x, v).
using VelocityScoreFn = std::function<void(const double* x, const double* v, double* score)>;

/// sqrt( mean_p | u(x_p^n, v_p^n) + v_p^{n+1} + grad_v log f_exact(x_p^{n+1}, v_p^{n+1}) |^2 )
double drift_error(const ParticleEnsemble& before, const ParticleEnsemble& after,
                   const MlpArchitecture& arch, const FeatureMap& fm, const MlpParams& params,
                   const VelocityScoreFn& exact_score_at_after);

/// Same residual with the control values supplied directly (used by the
/// score-transport baseline, whose effective control is not an MLP output).
double drift_error_with_controls(const ParticleEnsemble& after, const std::vector<double>& u,
                                 const VelocityScoreFn& exact_score_at_after);

/// mean_p [ |v_p|^2/2 + phi(x_p) + T0 log f_p ] with the tracked densities.
double discrete_energy(const ParticleEnsemble& ens, const PotentialSpec& pot, double T0 = 1.0);

using LogDensityFn = std::function<double(const double* x, const double* v)>;

/// Monte-Carlo KL estimate mean_p [ log f_p - log f_ref(z_p) ].
double kl_mc(const ParticleEnsemble& ens, const LogDensityFn& reference_logdensity);

/// Density histogram; samples outside [lo, hi] are dropped and the
/// histogram integrates to one over the included samples.
std::vector<double> marginal_histogram(const std::vector<double>& samples, int n_bins,
                                       double lo, double hi);

}  // namespace kfp

#endif
