#include "kfp/domain.hpp"

#include <cmath>
#include <stdexcept>

namespace kfp {

void DomainSpec::validate() const {
    if (dim_x < 1 || dim_v < 1)
        throw std::invalid_argument("DomainSpec: dimensions must be >= 1");
    if (topology == XTopology::Periodic && !(length > 0.0))
        throw std::invalid_argument("DomainSpec: periodic length must be > 0");
}

double wrap_coordinate(double x, double length) {
    if (x >= 0.0 && x < length) return x;
    double r = std::fmod(x, length);
    if (r < 0.0) r += length;
    if (r >= length) r = 0.0;  // guards fmod returning length-eps + eps
    return r;
}

void ParticleEnsemble::wrap_positions(const DomainSpec& domain) {
    if (!domain.periodic()) return;
    for (double& xi : positions) xi = wrap_coordinate(xi, domain.length);
}

void ParticleEnsemble::validate(const DomainSpec& domain) const {
    const std::size_t n = static_cast<std::size_t>(n_particles);
    if (positions.size() != n * dim_x || velocities.size() != n * dim_v ||
        log_density.size() != n)
        throw std::invalid_argument("ParticleEnsemble: array sizes disagree");
    for (double xi : positions) {
        if (!std::isfinite(xi))
            throw std::invalid_argument("ParticleEnsemble: non-finite position");
        if (domain.periodic() && (xi < 0.0 || xi >= domain.length))
            throw std::invalid_argument("ParticleEnsemble: position outside [0, L)");
    }
    for (double vi : velocities)
        if (!std::isfinite(vi))
            throw std::invalid_argument("ParticleEnsemble: non-finite velocity");
    for (double li : log_density)
        if (!std::isfinite(li))
            throw std::invalid_argument("ParticleEnsemble: non-finite log-density");
}

std::string to_string(SymplecticVariant v) {
    switch (v) {
        case SymplecticVariant::AlgorithmOne: return "algorithm_one";
        case SymplecticVariant::SymplecticEuler: return "symplectic_euler";
        case SymplecticVariant::StormerVerlet: return "stormer_verlet";
    }
    return "algorithm_one";
}

SymplecticVariant symplectic_variant_from_string(const std::string& s) {
    if (s == "algorithm_one") return SymplecticVariant::AlgorithmOne;
    if (s == "symplectic_euler") return SymplecticVariant::SymplecticEuler;
    if (s == "stormer_verlet") return SymplecticVariant::StormerVerlet;
    throw std::invalid_argument("unknown symplectic variant: " + s);
}

void JkoConfig::validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("JkoConfig: dt must be > 0");
    if (n_steps < 1) throw std::invalid_argument("JkoConfig: n_steps must be >= 1");
    if (inner_iters < 1) throw std::invalid_argument("JkoConfig: inner_iters must be >= 1");
    if (!(learning_rate > 0.0))
        throw std::invalid_argument("JkoConfig: learning rate must be > 0");
}

}  // namespace kfp
