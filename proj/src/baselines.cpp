#include "kfp/baselines.hpp"

#include <cmath>
#include <stdexcept>

namespace kfp {

namespace {

struct ScoreEval {
    double value = 0.0;
    std::vector<double> s, div;
};

void evaluate_score_loss(const ParticleEnsemble& ens, const MlpArchitecture& arch,
                         const FeatureMap& fm, const MlpParams& params, ScoreEval& ev) {
    const int n = ens.n_particles, dv = ens.dim_v;
    FieldKernel kernel(arch, fm);
    ev.s.resize(static_cast<std::size_t>(n) * dv);
    ev.div.resize(n);
    kernel.forward(params, ens.positions.data(), ens.velocities.data(), n, ev.s.data(),
                   ev.div.data());
    double acc = 0.0;
    for (int p = 0; p < n; ++p) {
        double s2 = 0.0;
        for (int i = 0; i < dv; ++i) {
            const double si = ev.s[static_cast<std::size_t>(p) * dv + i];
            s2 += si * si;
        }
        const double term = s2 + 2.0 * ev.div[p];
        if (!std::isfinite(term))
            throw std::runtime_error("implicit_score_loss: non-finite term at particle " +
                                     std::to_string(p));
        acc += term;
    }
    ev.value = acc / n;
}

class ScoreProblem final : public InnerProblem {
public:
    ScoreProblem(const ParticleEnsemble& ens, const MlpArchitecture& arch, const FeatureMap& fm)
        : ens_(ens), arch_(arch), fm_(fm) {}
    double loss(const MlpParams& p) const override {
        return implicit_score_loss(ens_, arch_, fm_, p);
    }
    LossAndGrad loss_gradient(const MlpParams& p) const override {
        return implicit_score_loss_gradient(ens_, arch_, fm_, p);
    }

private:
    const ParticleEnsemble& ens_;
    const MlpArchitecture& arch_;
    const FeatureMap& fm_;
};

}  // namespace

double implicit_score_loss(const ParticleEnsemble& ens, const MlpArchitecture& arch,
                           const FeatureMap& fm, const MlpParams& score_params) {
    ScoreEval ev;
    evaluate_score_loss(ens, arch, fm, score_params, ev);
    return ev.value;
}

LossAndGrad implicit_score_loss_gradient(const ParticleEnsemble& ens,
                                         const MlpArchitecture& arch, const FeatureMap& fm,
                                         const MlpParams& score_params) {
    const int n = ens.n_particles, dv = ens.dim_v;
    const double inv_n = 1.0 / n;
    FieldKernel kernel(arch, fm);
    LossAndGrad out;
    out.grad.assign(arch.param_count(), 0.0);
    out.value = kernel.loss_gradient(
        score_params, ens.positions.data(), ens.velocities.data(), n,
        [dv, inv_n](int, const double* s, double div, double* s_bar, double& div_bar) {
            double s2 = 0.0;
            for (int i = 0; i < dv; ++i) {
                s2 += s[i] * s[i];
                s_bar[i] = 2.0 * s[i] * inv_n;
            }
            div_bar = 2.0 * inv_n;
            return (s2 + 2.0 * div) * inv_n;
        },
        out.grad.data());
    return out;
}

InnerResult train_score(const ParticleEnsemble& ens, const MlpArchitecture& arch,
                        const FeatureMap& fm, MlpParams init, int iterations,
                        double learning_rate) {
    ScoreProblem problem(ens, arch, fm);
    return inner_optimize(problem, std::move(init), iterations, learning_rate);
}

std::vector<double> score_effective_control(const ParticleEnsemble& ens,
                                            const MlpArchitecture& arch, const FeatureMap& fm,
                                            const MlpParams& score_params, double epsilon) {
    const int n = ens.n_particles, dv = ens.dim_v;
    FieldKernel kernel(arch, fm);
    std::vector<double> u(static_cast<std::size_t>(n) * dv);
    kernel.forward(score_params, ens.positions.data(), ens.velocities.data(), n, u.data(),
                   nullptr);
    for (int p = 0; p < n; ++p)
        for (int i = 0; i < dv; ++i) {
            double& ui = u[static_cast<std::size_t>(p) * dv + i];
            ui = -epsilon * (ens.v(p)[i] + ui);
        }
    return u;
}

ParticleEnsemble score_transport_step(const ParticleEnsemble& ens, const PotentialSpec& pot,
                                      const MlpArchitecture& arch, const FeatureMap& fm,
                                      const MlpParams& score_params, const DomainSpec& domain,
                                      double dt, double epsilon, SymplecticVariant variant) {
    const int n = ens.n_particles, dx = ens.dim_x, dv = ens.dim_v;
    FieldKernel kernel(arch, fm);
    std::vector<double> s(static_cast<std::size_t>(n) * dv), div(n);
    kernel.forward(score_params, ens.positions.data(), ens.velocities.data(), n, s.data(),
                   div.data());

    ParticleEnsemble out = ens;
    std::vector<double> g(dx);
    if (variant == SymplecticVariant::AlgorithmOne) {
        for (int p = 0; p < n; ++p) {
            pot.gradient(ens.x(p), g.data());
            const double* sp = s.data() + static_cast<std::size_t>(p) * dv;
            for (int i = 0; i < dv; ++i)
                out.v(p)[i] =
                    ens.v(p)[i] - g[i] * dt - epsilon * (ens.v(p)[i] + sp[i]) * dt;
            for (int i = 0; i < dx; ++i) out.x(p)[i] = ens.x(p)[i] + out.v(p)[i] * dt;
        }
    } else {
        std::vector<double> xs, vs;
        if (variant == SymplecticVariant::SymplecticEuler)
            symplectic_euler_map(ens, pot, dt, xs, vs);
        else
            stormer_verlet_map(ens, pot, dt, xs, vs);
        out.positions = std::move(xs);
        out.velocities = std::move(vs);
        for (int p = 0; p < n; ++p) {
            const double* sp = s.data() + static_cast<std::size_t>(p) * dv;
            for (int i = 0; i < dv; ++i)
                out.v(p)[i] -= epsilon * (ens.v(p)[i] + sp[i]) * dt;
        }
    }
    // logdet = -eps dt (dim_v + div_v s)
    for (int p = 0; p < n; ++p)
        out.log_density[p] = ens.log_density[p] + epsilon * dt * (dv + div[p]);
    out.wrap_positions(domain);
    return out;
}

double velocity_matching_objective(const ParticleEnsemble& ens, const PotentialSpec& pot,
                                   const MlpArchitecture& arch, const FeatureMap& fm,
                                   const MlpParams& field_params) {
    const int n = ens.n_particles, dx = ens.dim_x, dv = ens.dim_v;
    if (arch.output_dim() != dx + dv)
        throw std::invalid_argument(
            "velocity_matching_objective: field must output (u^x, u^v)");
    if (dx != dv)
        throw std::invalid_argument("velocity_matching_objective: needs dim_x == dim_v");
    const int d_in = dx + dv;
    std::vector<double> w(dx + dv), jac(static_cast<std::size_t>(dx + dv) * d_in), grad(dx);
    double acc = 0.0;
    for (int p = 0; p < n; ++p) {
        mlp_forward(arch, fm, field_params, ens.x(p), ens.v(p), w.data());
        input_jacobian(arch, fm, field_params, ens.x(p), ens.v(p), jac.data());
        pot.gradient(ens.x(p), grad.data());
        const double* ux = w.data();
        const double* uv = w.data() + dx;
        double term = 0.0;
        for (int i = 0; i < dx; ++i) {
            term += ux[i] * ux[i] - 2.0 * ux[i] * ens.v(p)[i];
            term += uv[i] * uv[i] + 2.0 * uv[i] * grad[i] - 2.0 * uv[i] * ens.v(p)[i];
            // div_v u^x: d(u^x_i)/d(v_i); input column dx + i
            term += 2.0 * jac[static_cast<std::size_t>(i) * d_in + dx + i];
            // div_x u^v: d(u^v_i)/d(x_i)
            term -= 2.0 * jac[static_cast<std::size_t>(dx + i) * d_in + i];
            // div_v u^v: d(u^v_i)/d(v_i)
            term += 2.0 * jac[static_cast<std::size_t>(dx + i) * d_in + dx + i];
        }
        if (!std::isfinite(term))
            throw std::runtime_error("velocity_matching_objective: non-finite term at particle " +
                                     std::to_string(p));
        acc += term;
    }
    return acc / n;
}

LinearRunResult run_score_baseline(const ParticleEnsemble& initial, const LinearRunInputs& in,
                                   const LinearRunHooks& hooks) {
    in.config.validate();
    LinearRunResult out;
    out.records.reserve(in.config.n_steps);

    ParticleEnsemble ens = initial;
    MlpParams params = init_params(in.arch, in.config.seed);
    for (int n = 0; n < in.config.n_steps; ++n) {
        const MlpParams init =
            in.config.warm_start ? params : init_params(in.arch, in.config.seed);
        InnerResult trained =
            train_score(ens, in.arch, in.fm, init, in.config.inner_iters, in.config.learning_rate);
        params = std::move(trained.params);

        const ParticleEnsemble before = ens;
        ens = score_transport_step(before, in.potential, in.arch, in.fm, params, in.domain,
                                   in.config.dt, in.epsilon, in.config.variant);

        const double t_next = (n + 1) * in.config.dt;
        DiagnosticsRecord rec;
        rec.step = n + 1;
        rec.time = t_next;
        rec.loss = trained.final_loss;
        rec.energy = discrete_energy(ens, in.potential, in.T0);
        if (hooks.oracles_at) {
            StepOracles oracles = hooks.oracles_at(t_next);
            if (oracles.reference_logdensity) rec.kl = kl_mc(ens, oracles.reference_logdensity);
            if (oracles.velocity_score) {
                const std::vector<double> u_eff =
                    score_effective_control(before, in.arch, in.fm, params, in.epsilon);
                rec.drift_error = drift_error_with_controls(ens, u_eff, oracles.velocity_score);
            }
        }
        out.records.push_back(rec);
        if (hooks.on_step) hooks.on_step(n + 1, t_next, ens);
    }
    out.final_ensemble = std::move(ens);
    out.final_params = std::move(params);
    return out;
}

}  // namespace kfp
