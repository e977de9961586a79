// Per-step constrained minimization and outer time marching for
// prescribed-potential kinetic Fokker-Planck problems.
//
// Each step trains the control field on the one-step transport objective
// (control cost plus the free energy of the pushed-forward ensemble),
// then commits the update and the linearized log-density change.

#ifndef KFP_JKO_HPP
#define KFP_JKO_HPP

#include <functional>
#include <optional>
#include <vector>

#include "kfp/adam.hpp"
#include "kfp/domain.hpp"
#include "kfp/mlp.hpp"
#include "kfp/oracles.hpp"
#include "kfp/potential.hpp"

namespace kfp {

struct StepResult {
    ParticleEnsemble ensemble;
    MlpParams trained_params;
    double final_inner_loss = 0.0;
    std::vector<double> inner_loss_trace;  // loss at each inner iterate, length K
};

struct DiagnosticsRecord {
    int step = 0;
    double time = 0.0;
    double loss = 0.0;
    std::optional<double> energy;
    std::optional<double> kl;
    std::optional<double> drift_error;
    std::optional<double> field_energy;
};

/// x* = x + v dt; v* = v - grad phi(x*) dt.
void symplectic_euler_map(const ParticleEnsemble& ens, const PotentialSpec& pot, double dt,
                          std::vector<double>& x_out, std::vector<double>& v_out);

/// Half kick, drift, half kick.
void stormer_verlet_map(const ParticleEnsemble& ens, const PotentialSpec& pot, double dt,
                        std::vector<double>& x_out, std::vector<double>& v_out);

struct Candidate {
    std::vector<double> x_new;   // n x dim_x (not wrapped)
    std::vector<double> v_new;   // n x dim_v
    std::vector<double> logdet;  // n, equals dt * div_v u at (x^n, v^n)
};

/// Candidate update under the chosen ordering. AlgorithmOne applies the
/// control inside the kick and drifts with the new velocity; the other
/// variants apply the symplectic map first and add the control kick.
Candidate jko_candidate_update(const ParticleEnsemble& ens, const PotentialSpec& pot,
                               const MlpArchitecture& arch, const FeatureMap& fm,
                               const MlpParams& params, double dt, SymplecticVariant variant);

/// One-step objective:
///   dt/2 mean|u|^2 + eps mean[ |v^{n+1}|^2/2 + phi(x^{n+1}) + log f^{n+1} ]
/// with log f^{n+1} = log f^n - dt div_v u.
double jko_loss(const ParticleEnsemble& ens, const PotentialSpec& pot,
                const MlpArchitecture& arch, const FeatureMap& fm, const MlpParams& params,
                double dt, double epsilon, SymplecticVariant variant);

struct LossAndGrad {
    double value = 0.0;
    std::vector<double> grad;
};

LossAndGrad jko_loss_gradient(const ParticleEnsemble& ens, const PotentialSpec& pot,
                              const MlpArchitecture& arch, const FeatureMap& fm,
                              const MlpParams& params, double dt, double epsilon,
                              SymplecticVariant variant);

/// Inner optimization problem interface shared by the step variants.
class InnerProblem {
public:
    virtual ~InnerProblem() = default;
    virtual double loss(const MlpParams& params) const = 0;
    virtual LossAndGrad loss_gradient(const MlpParams& params) const = 0;
};

/// K Adam iterations; returns the trained parameters, the loss at each
/// iterate, and the post-training loss.
struct InnerResult {
    MlpParams params;
    std::vector<double> trace;
    double final_loss = 0.0;
};

InnerResult inner_optimize(const InnerProblem& problem, MlpParams init, int iterations,
                           double learning_rate);

struct JkoStepInputs {
    const DomainSpec& domain;
    const PotentialSpec& potential;
    const MlpArchitecture& arch;
    const FeatureMap& fm;
    double epsilon = 1.0;
};

/// One outer step: train, then commit positions/velocities and the
/// tracked log-densities.
StepResult jko_step(const ParticleEnsemble& ens, const JkoStepInputs& in,
                    const MlpParams& params_init, const JkoConfig& config);

/// Operator-splitting variant: symplectic transport with the density
/// carried unchanged, then the dissipative velocity-only objective.
StepResult split_step(const ParticleEnsemble& ens, const JkoStepInputs& in,
                      const MlpParams& params_init, const JkoConfig& config);

/// Per-step oracles evaluated at the step's end time.
struct StepOracles {
    LogDensityFn reference_logdensity;  // for the KL column (may be empty)
    VelocityScoreFn velocity_score;     // for the drift-error column (may be empty)
};

struct LinearRunInputs {
    DomainSpec domain;
    PotentialSpec potential;
    MlpArchitecture arch;
    FeatureMap fm;
    JkoConfig config;
    double epsilon = 1.0;
    double T0 = 1.0;
    bool use_split = false;
};

struct LinearRunHooks {
    // Called once per step with the step end time, in increasing order.
    std::function<StepOracles(double t_next)> oracles_at;
    // Called after each committed step (snapshots etc.).
    std::function<void(int step, double t, const ParticleEnsemble&)> on_step;
};

struct LinearRunResult {
    std::vector<DiagnosticsRecord> records;
    ParticleEnsemble final_ensemble;
    MlpParams final_params;
};

LinearRunResult run_linear(const ParticleEnsemble& initial, const LinearRunInputs& in,
                           const LinearRunHooks& hooks = {});

}  // namespace kfp

#endif
