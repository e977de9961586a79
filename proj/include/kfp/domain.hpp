// Phase-space domain description, particle ensembles, and the scheme
// configuration shared by all solver components.

#ifndef KFP_DOMAIN_HPP
#define KFP_DOMAIN_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace kfp {

enum class XTopology { Unbounded, Periodic };

struct DomainSpec {
    int dim_x = 1;
    int dim_v = 1;
    XTopology topology = XTopology::Unbounded;
    double length = 0.0;  // L, used when periodic

    int phase_dim() const { return dim_x + dim_v; }
    bool periodic() const { return topology == XTopology::Periodic; }

    // Throws std::invalid_argument on dim < 1 or non-positive L.
    void validate() const;
};

// Wrap a coordinate into [0, L). Exact for inputs already in range.
double wrap_coordinate(double x, double length);

/// Particle state of the scheme: positions, velocities, and the tracked
/// log-density log f at each particle's current phase-space location.
/// All particles carry the uniform weight 1/N_p.
struct ParticleEnsemble {
    int n_particles = 0;
    int dim_x = 1;
    int dim_v = 1;
    std::vector<double> positions;    // n_particles x dim_x, row-major
    std::vector<double> velocities;   // n_particles x dim_v, row-major
    std::vector<double> log_density;  // n_particles

    ParticleEnsemble() = default;
    ParticleEnsemble(int n, int dx, int dv)
        : n_particles(n),
          dim_x(dx),
          dim_v(dv),
          positions(static_cast<std::size_t>(n) * dx, 0.0),
          velocities(static_cast<std::size_t>(n) * dv, 0.0),
          log_density(n, 0.0) {}

    double weight() const { return 1.0 / n_particles; }

    double* x(int p) { return positions.data() + static_cast<std::size_t>(p) * dim_x; }
    const double* x(int p) const { return positions.data() + static_cast<std::size_t>(p) * dim_x; }
    double* v(int p) { return velocities.data() + static_cast<std::size_t>(p) * dim_v; }
    const double* v(int p) const { return velocities.data() + static_cast<std::size_t>(p) * dim_v; }

    void wrap_positions(const DomainSpec& domain);

    // Checks array congruence, finiteness, and periodic range.
    void validate(const DomainSpec& domain) const;
};

enum class SymplecticVariant { AlgorithmOne, SymplecticEuler, StormerVerlet };

std::string to_string(SymplecticVariant v);
SymplecticVariant symplectic_variant_from_string(const std::string& s);

/// Configuration of the outer time marching and the per-step inner
/// optimization.
struct JkoConfig {
    double dt = 0.1;
    int n_steps = 100;
    int inner_iters = 100;  // K, Adam iterations per step
    double learning_rate = 1e-2;
    bool warm_start = true;
    std::uint64_t seed = 1;
    SymplecticVariant variant = SymplecticVariant::AlgorithmOne;

    void validate() const;
};

}  // namespace kfp

#endif
