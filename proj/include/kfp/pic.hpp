// Particle-in-cell machinery for the Vlasov-Poisson-Fokker-Planck
// system: tent-function deposition, spectral field solve on the periodic
// mesh, interpolation back to particles, and the PIC coupled step.

#ifndef KFP_PIC_HPP
#define KFP_PIC_HPP

#include <utility>
#include <vector>

#include "kfp/jko.hpp"

namespace kfp {

struct GridField1D {
    int nx = 0;
    double length = 0.0;
    std::vector<double> values;

    GridField1D() = default;
    GridField1D(int nx_, double length_) : nx(nx_), length(length_), values(nx_, 0.0) {}

    double dx() const { return length / nx; }
    double center(int i) const { return (i + 0.5) * dx(); }
};

/// max(0, 1 - |z|/dx)
double tent_basis(double z, double dx);

/// Number density: rho_h = (1/dx) sum_p (1/N) S(x_h - x_p); integrates
/// to one over the domain. Positions must be wrapped into [0, L).
GridField1D deposit_density(const std::vector<double>& positions, int nx, double length);

/// Spectral solve of -phi'' = rho - h with zero-mean gauge; returns
/// (phi, E). Requires mean(rho) = h to 1e-10 and power-of-two nx.
std::pair<GridField1D, GridField1D> solve_poisson_spectral(const GridField1D& rho,
                                                           double background);

/// Tent-basis interpolation of a grid field to particle positions.
std::vector<double> interpolate_field(const GridField1D& field,
                                      const std::vector<double>& positions);

/// sum_i E_i^2 dx
double field_energy(const GridField1D& E);

struct VpfpStepInputs {
    const DomainSpec& domain;
    int nx = 128;
    const MlpArchitecture& arch;
    const FeatureMap& fm;
    double epsilon = 1.0;
    double T0 = 1.0;
};

struct VpfpStepResult {
    StepResult step;
    double field_energy = 0.0;
    GridField1D rho;  // relative density fed to the solve (mean 1)
    GridField1D phi;
    GridField1D E;
};

/// One PIC coupled step: drift positions, deposit/solve/interpolate the
/// field at the new positions, train the control on the dissipative
/// objective (the field term is constant within the step), then commit
/// velocities and log-densities. The field kicks velocity component 0.
VpfpStepResult vpfp_jko_step(const ParticleEnsemble& ens, const VpfpStepInputs& in,
                             const MlpParams& params_init, const JkoConfig& config);

/// Dense phase-space histogram of (x, v_0), normalized to unit mass over
/// the box.
struct PhaseHistogram {
    int nx = 0, nv = 0;
    double length = 0.0, vmin = 0.0, vmax = 0.0;
    std::vector<double> values;  // nx * nv, row-major in x
};

PhaseHistogram phase_space_histogram(const ParticleEnsemble& ens, int nx, int nv, double vmin,
                                     double vmax, double length);

struct VpfpRunInputs {
    DomainSpec domain;
    int nx = 128;
    MlpArchitecture arch;
    FeatureMap fm;
    JkoConfig config;
    double epsilon = 1.0;
    double T0 = 1.0;
};

struct VpfpRunHooks {
    std::function<void(int step, double t, const ParticleEnsemble&)> on_step;
};

struct VpfpRunResult {
    std::vector<DiagnosticsRecord> records;
    ParticleEnsemble final_ensemble;
};

VpfpRunResult run_vpfp(const ParticleEnsemble& initial, const VpfpRunInputs& in,
                       const VpfpRunHooks& hooks = {});

}  // namespace kfp

#endif
