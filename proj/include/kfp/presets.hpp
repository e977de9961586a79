// Data-driven experiment presets. Each preset is a structured record
// with fields `domain`, `potential`, `initial`, `defaults` that resolves
// to a complete experiment setup.

#ifndef KFP_PRESETS_HPP
#define KFP_PRESETS_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kfp/domain.hpp"
#include "kfp/mlp.hpp"
#include "kfp/potential.hpp"
#include "kfp/sampling.hpp"

namespace kfp {

struct ExperimentSetup {
    std::string id;
    DomainSpec domain;
    PotentialSpec potential;
    InitialSpec initial;
    MlpArchitecture arch;
    FeatureMap fm;
    JkoConfig jko;
    double t_final = 1.0;
    int n_particles = 1000;
    double epsilon = 1.0;
    double T0 = 1.0;
    int grid_nx = 128;       // PIC / sampling mesh
    int snapshot_every = 0;  // 0 disables snapshots
    double energy_slack_c = 1.0;
    int hist_nx = 128, hist_nv = 128;
    double hist_vmin = -3.0, hist_vmax = 3.0;

    bool is_vpfp() const { return potential.kind == PotentialSpec::Kind::SelfConsistent; }
    bool has_gaussian_oracle() const {
        return potential.kind == PotentialSpec::Kind::QuadraticForm &&
               initial.kind == InitialSpec::Kind::PhaseGaussian;
    }
    bool has_stationary_oracle() const {
        return potential.closed_form() && !has_gaussian_oracle();
    }
};

const std::vector<std::string>& preset_ids();
bool has_preset(const std::string& id);

/// Resolves a preset record; throws on unknown ids.
ExperimentSetup resolve_preset(const std::string& id);

/// Applies `key=value` overrides onto a resolved setup. Unknown keys are
/// rejected. n_steps is derived from (t_final, dt) unless set directly.
void apply_override(ExperimentSetup& setup, const std::string& key, const std::string& value);
void finalize_setup(ExperimentSetup& setup);  // recomputes n_steps, validates

/// Deterministic initial ensemble of a registered preset.
ParticleEnsemble sample_initial_ensemble(const std::string& preset, int n_particles,
                                         std::uint64_t seed);

}  // namespace kfp

#endif
