// Comparison methods: per-step score-matching transport and the
// velocity-matching objective (evaluation only).

#ifndef KFP_BASELINES_HPP
#define KFP_BASELINES_HPP

#include "kfp/jko.hpp"

namespace kfp {

/// Implicit score-matching objective
///   mean_p [ |s_theta|^2 + 2 div_v s_theta ]
/// minimized when s_theta matches grad_v log f on the samples.
double implicit_score_loss(const ParticleEnsemble& ens, const MlpArchitecture& arch,
                           const FeatureMap& fm, const MlpParams& score_params);

LossAndGrad implicit_score_loss_gradient(const ParticleEnsemble& ens,
                                         const MlpArchitecture& arch, const FeatureMap& fm,
                                         const MlpParams& score_params);

/// K Adam iterations of the implicit score loss on the current ensemble.
InnerResult train_score(const ParticleEnsemble& ens, const MlpArchitecture& arch,
                        const FeatureMap& fm, MlpParams init, int iterations,
                        double learning_rate);

/// Transport step with the dissipative drift -eps (v + s_theta) in place
/// of the learned control; the log-density update uses
/// logdet = -eps dt (dim_v + div_v s_theta).
ParticleEnsemble score_transport_step(const ParticleEnsemble& ens, const PotentialSpec& pot,
                                      const MlpArchitecture& arch, const FeatureMap& fm,
                                      const MlpParams& score_params, const DomainSpec& domain,
                                      double dt, double epsilon, SymplecticVariant variant);

/// Effective per-particle control -eps (v + s_theta) of the transport
/// step, for drift-error diagnostics.
std::vector<double> score_effective_control(const ParticleEnsemble& ens,
                                            const MlpArchitecture& arch, const FeatureMap& fm,
                                            const MlpParams& score_params, double epsilon);

/// Theta-dependent part of the velocity-matching objective for a field
/// with components (u^x, u^v), both network outputs:
///   mean_p [ |u^x|^2 - 2 u^x . v + |u^v|^2 + 2 u^v . grad phi - 2 u^v . v
///            + 2 div_v u^x - 2 div_x u^v + 2 div_v u^v ]
double velocity_matching_objective(const ParticleEnsemble& ens, const PotentialSpec& pot,
                                   const MlpArchitecture& arch, const FeatureMap& fm,
                                   const MlpParams& field_params);

/// Outer loop of the score baseline with the diagnostics schema of the
/// kinetic scheme.
LinearRunResult run_score_baseline(const ParticleEnsemble& initial, const LinearRunInputs& in,
                                   const LinearRunHooks& hooks = {});

}  // namespace kfp

#endif
