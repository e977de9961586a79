#include "kfp/jko.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace kfp {

namespace {

void require_closed_form(const PotentialSpec& pot, const char* who) {
    if (!pot.closed_form())
        throw std::runtime_error(std::string(who) +
                                 ": self-consistent potential requires the PIC step");
}

}  // namespace

void symplectic_euler_map(const ParticleEnsemble& ens, const PotentialSpec& pot, double dt,
                          std::vector<double>& x_out, std::vector<double>& v_out) {
    require_closed_form(pot, "symplectic_euler_map");
    const int n = ens.n_particles, dx = ens.dim_x, dv = ens.dim_v;
    x_out.resize(static_cast<std::size_t>(n) * dx);
    v_out.resize(static_cast<std::size_t>(n) * dv);
    std::vector<double> g(dx);
    for (int p = 0; p < n; ++p) {
        double* xo = x_out.data() + static_cast<std::size_t>(p) * dx;
        double* vo = v_out.data() + static_cast<std::size_t>(p) * dv;
        for (int i = 0; i < dx; ++i) xo[i] = ens.x(p)[i] + ens.v(p)[i] * dt;
        pot.gradient(xo, g.data());
        for (int i = 0; i < dv; ++i) vo[i] = ens.v(p)[i] - g[i] * dt;
    }
}

void stormer_verlet_map(const ParticleEnsemble& ens, const PotentialSpec& pot, double dt,
                        std::vector<double>& x_out, std::vector<double>& v_out) {
    require_closed_form(pot, "stormer_verlet_map");
    const int n = ens.n_particles, dx = ens.dim_x, dv = ens.dim_v;
    x_out.resize(static_cast<std::size_t>(n) * dx);
    v_out.resize(static_cast<std::size_t>(n) * dv);
    std::vector<double> g(dx), vh(dv);
    for (int p = 0; p < n; ++p) {
        double* xo = x_out.data() + static_cast<std::size_t>(p) * dx;
        double* vo = v_out.data() + static_cast<std::size_t>(p) * dv;
        pot.gradient(ens.x(p), g.data());
        for (int i = 0; i < dv; ++i) vh[i] = ens.v(p)[i] - 0.5 * dt * g[i];
        for (int i = 0; i < dx; ++i) xo[i] = ens.x(p)[i] + dt * vh[i];
        pot.gradient(xo, g.data());
        for (int i = 0; i < dv; ++i) vo[i] = vh[i] - 0.5 * dt * g[i];
    }
}

namespace {

// Kick at the old position, then drift with the updated velocity; the
// u = 0 limit of the AlgorithmOne ordering.
void kick_drift_map(const ParticleEnsemble& ens, const PotentialSpec& pot, double dt,
                    std::vector<double>& x_out, std::vector<double>& v_out) {
    require_closed_form(pot, "kick_drift_map");
    const int n = ens.n_particles, dx = ens.dim_x, dv = ens.dim_v;
    x_out.resize(static_cast<std::size_t>(n) * dx);
    v_out.resize(static_cast<std::size_t>(n) * dv);
    std::vector<double> g(dx);
    for (int p = 0; p < n; ++p) {
        double* xo = x_out.data() + static_cast<std::size_t>(p) * dx;
        double* vo = v_out.data() + static_cast<std::size_t>(p) * dv;
        pot.gradient(ens.x(p), g.data());
        for (int i = 0; i < dv; ++i) vo[i] = ens.v(p)[i] - g[i] * dt;
        for (int i = 0; i < dx; ++i) xo[i] = ens.x(p)[i] + vo[i] * dt;
    }
}

void base_map(const ParticleEnsemble& ens, const PotentialSpec& pot, double dt,
              SymplecticVariant variant, std::vector<double>& x_out,
              std::vector<double>& v_out) {
    switch (variant) {
        case SymplecticVariant::AlgorithmOne:
            kick_drift_map(ens, pot, dt, x_out, v_out);
            return;
        case SymplecticVariant::SymplecticEuler:
            symplectic_euler_map(ens, pot, dt, x_out, v_out);
            return;
        case SymplecticVariant::StormerVerlet:
            stormer_verlet_map(ens, pot, dt, x_out, v_out);
            return;
    }
}

// Theta-independent per-step data of the one-step objective. Under the
// AlgorithmOne ordering the control enters the kick, so only grad phi at
// the old positions can be tabulated; under the symplectic-map orderings
// the full (x*, v*) and phi(x*) are fixed before training.
struct JointContext {
    const ParticleEnsemble& ens;
    const PotentialSpec& pot;
    double dt;
    double epsilon;
    SymplecticVariant variant;
    std::vector<double> grad_at_x;   // AlgorithmOne: grad phi(x^n), n x dx
    std::vector<double> x_star;      // other variants: S(x^n, v^n)
    std::vector<double> v_star;
    std::vector<double> phi_star;    // phi(x*)

    JointContext(const ParticleEnsemble& e, const PotentialSpec& p, double dt_, double eps,
                 SymplecticVariant var)
        : ens(e), pot(p), dt(dt_), epsilon(eps), variant(var) {
        require_closed_form(p, "jko_loss");
        if (e.dim_x > 8 || e.dim_v > 8)
            throw std::invalid_argument("jko step: phase dimensions above 8 are not supported");
        const int n = e.n_particles, dx = e.dim_x;
        if (variant == SymplecticVariant::AlgorithmOne) {
            grad_at_x.resize(static_cast<std::size_t>(n) * dx);
            for (int q = 0; q < n; ++q)
                p.gradient(e.x(q), grad_at_x.data() + static_cast<std::size_t>(q) * dx);
        } else {
            base_map(e, p, dt_, variant, x_star, v_star);
            phi_star.resize(n);
            for (int q = 0; q < n; ++q)
                phi_star[q] = p.value(x_star.data() + static_cast<std::size_t>(q) * dx);
        }
    }

    // Per-particle loss term and cotangents. u_bar/div_bar may be null
    // for value-only evaluation. x1/v1 receive the candidate state.
    double term(int p, const double* u, double div, double* u_bar, double* div_bar,
                double* x1, double* v1) const {
        const int dx = ens.dim_x, dv = ens.dim_v;
        const double inv_n = 1.0 / ens.n_particles;
        double u2 = 0.0, v2 = 0.0, phi1 = 0.0;
        if (variant == SymplecticVariant::AlgorithmOne) {
            const double* g = grad_at_x.data() + static_cast<std::size_t>(p) * dx;
            for (int i = 0; i < dv; ++i) {
                v1[i] = ens.v(p)[i] - g[i] * dt + u[i] * dt;
                u2 += u[i] * u[i];
                v2 += v1[i] * v1[i];
            }
            for (int i = 0; i < dx; ++i) x1[i] = ens.x(p)[i] + v1[i] * dt;
            phi1 = pot.value(x1);
            if (u_bar) {
                double gx1[8];
                pot.gradient(x1, gx1);
                for (int i = 0; i < dv; ++i)
                    u_bar[i] =
                        (dt * u[i] + epsilon * dt * v1[i] + epsilon * dt * dt * gx1[i]) * inv_n;
            }
        } else {
            const double* xs = x_star.data() + static_cast<std::size_t>(p) * dx;
            const double* vs = v_star.data() + static_cast<std::size_t>(p) * dv;
            for (int i = 0; i < dv; ++i) {
                v1[i] = vs[i] + u[i] * dt;
                u2 += u[i] * u[i];
                v2 += v1[i] * v1[i];
            }
            for (int i = 0; i < dx; ++i) x1[i] = xs[i];
            phi1 = phi_star[p];
            if (u_bar)
                for (int i = 0; i < dv; ++i)
                    u_bar[i] = (dt * u[i] + epsilon * dt * v1[i]) * inv_n;
        }
        if (div_bar) *div_bar = -epsilon * dt * inv_n;
        const double logf1 = ens.log_density[p] - dt * div;
        return (0.5 * dt * u2 + epsilon * (0.5 * v2 + phi1 + logf1)) * inv_n;
    }
};

double joint_loss_value(const JointContext& ctx, const MlpArchitecture& arch,
                        const FeatureMap& fm, const MlpParams& params) {
    const int n = ctx.ens.n_particles, dv = ctx.ens.dim_v;
    FieldKernel kernel(arch, fm);
    std::vector<double> u(static_cast<std::size_t>(n) * dv), div(n);
    kernel.forward(params, ctx.ens.positions.data(), ctx.ens.velocities.data(), n, u.data(),
                   div.data());
    double x1[8], v1[8];
    double acc = 0.0;
    for (int p = 0; p < n; ++p) {
        const double t = ctx.term(p, u.data() + static_cast<std::size_t>(p) * dv, div[p],
                                  nullptr, nullptr, x1, v1);
        if (!std::isfinite(t))
            throw std::runtime_error("jko_loss: non-finite term at particle " +
                                     std::to_string(p));
        acc += t;
    }
    return acc;
}

}  // namespace

Candidate jko_candidate_update(const ParticleEnsemble& ens, const PotentialSpec& pot,
                               const MlpArchitecture& arch, const FeatureMap& fm,
                               const MlpParams& params, double dt, SymplecticVariant variant) {
    const JointContext ctx(ens, pot, dt, 1.0, variant);
    const int n = ens.n_particles, dx = ens.dim_x, dv = ens.dim_v;
    FieldKernel kernel(arch, fm);
    std::vector<double> u(static_cast<std::size_t>(n) * dv), div(n);
    kernel.forward(params, ens.positions.data(), ens.velocities.data(), n, u.data(), div.data());
    Candidate c;
    c.x_new.resize(static_cast<std::size_t>(n) * dx);
    c.v_new.resize(static_cast<std::size_t>(n) * dv);
    c.logdet.resize(n);
    for (int p = 0; p < n; ++p) {
        ctx.term(p, u.data() + static_cast<std::size_t>(p) * dv, div[p], nullptr, nullptr,
                 c.x_new.data() + static_cast<std::size_t>(p) * dx,
                 c.v_new.data() + static_cast<std::size_t>(p) * dv);
        c.logdet[p] = dt * div[p];
    }
    return c;
}

double jko_loss(const ParticleEnsemble& ens, const PotentialSpec& pot,
                const MlpArchitecture& arch, const FeatureMap& fm, const MlpParams& params,
                double dt, double epsilon, SymplecticVariant variant) {
    const JointContext ctx(ens, pot, dt, epsilon, variant);
    return joint_loss_value(ctx, arch, fm, params);
}

LossAndGrad jko_loss_gradient(const ParticleEnsemble& ens, const PotentialSpec& pot,
                              const MlpArchitecture& arch, const FeatureMap& fm,
                              const MlpParams& params, double dt, double epsilon,
                              SymplecticVariant variant) {
    const JointContext ctx(ens, pot, dt, epsilon, variant);
    FieldKernel kernel(arch, fm);
    LossAndGrad out;
    out.grad.assign(arch.param_count(), 0.0);
    out.value = kernel.loss_gradient(
        params, ens.positions.data(), ens.velocities.data(), ens.n_particles,
        [&ctx](int p, const double* u, double div, double* u_bar, double& div_bar) {
            double x1[8], v1[8];
            return ctx.term(p, u, div, u_bar, &div_bar, x1, v1);
        },
        out.grad.data());
    return out;
}

InnerResult inner_optimize(const InnerProblem& problem, MlpParams init, int iterations,
                           double learning_rate) {
    if (iterations < 1) throw std::invalid_argument("inner_optimize: need K >= 1");
    AdamConfig cfg;
    cfg.learning_rate = learning_rate;
    AdamState state(init.values.size(), cfg);
    InnerResult res;
    res.params = std::move(init);
    res.trace.reserve(iterations);
    for (int k = 0; k < iterations; ++k) {
        LossAndGrad lg;
        try {
            lg = problem.loss_gradient(res.params);
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("inner_optimize: aborted at iterate " + std::to_string(k) +
                                     ": " + e.what());
        }
        if (!std::isfinite(lg.value))
            throw std::runtime_error("inner_optimize: non-finite loss at iterate " +
                                     std::to_string(k));
        res.trace.push_back(lg.value);
        adam_step(state, res.params.values, lg.grad);
    }
    res.final_loss = problem.loss(res.params);
    return res;
}

namespace {

class JointProblem final : public InnerProblem {
public:
    JointProblem(const ParticleEnsemble& ens, const JkoStepInputs& in, const JkoConfig& cfg)
        : ctx_(ens, in.potential, cfg.dt, in.epsilon, cfg.variant), kernel_(in.arch, in.fm),
          arch_(in.arch), fm_(in.fm) {}

    double loss(const MlpParams& p) const override {
        return joint_loss_value(ctx_, arch_, fm_, p);
    }
    LossAndGrad loss_gradient(const MlpParams& p) const override {
        LossAndGrad out;
        out.grad.assign(arch_.param_count(), 0.0);
        out.value = kernel_.loss_gradient(
            p, ctx_.ens.positions.data(), ctx_.ens.velocities.data(), ctx_.ens.n_particles,
            [this](int q, const double* u, double div, double* u_bar, double& div_bar) {
                double x1[8], v1[8];
                return ctx_.term(q, u, div, u_bar, &div_bar, x1, v1);
            },
            out.grad.data());
        return out;
    }

    const JointContext& context() const { return ctx_; }

private:
    JointContext ctx_;
    FieldKernel kernel_;
    const MlpArchitecture& arch_;
    const FeatureMap& fm_;
};

// Velocity-only objective of the splitting variant; the control is
// evaluated at (x*, v^n) and the potential term is absent.
class SplitProblem final : public InnerProblem {
public:
    SplitProblem(const ParticleEnsemble& ens, const std::vector<double>& x_star,
                 const std::vector<double>& v_star, const JkoStepInputs& in,
                 const JkoConfig& cfg)
        : ens_(ens), x_star_(x_star), v_star_(v_star), in_(in), cfg_(cfg),
          kernel_(in.arch, in.fm) {}

    double loss(const MlpParams& p) const override {
        const int n = ens_.n_particles, dv = ens_.dim_v;
        std::vector<double> u(static_cast<std::size_t>(n) * dv), div(n);
        kernel_.forward(p, x_star_.data(), ens_.velocities.data(), n, u.data(), div.data());
        double acc = 0.0;
        double dummy;
        for (int q = 0; q < n; ++q) {
            const double t =
                term(q, u.data() + static_cast<std::size_t>(q) * dv, div[q], nullptr, dummy);
            if (!std::isfinite(t))
                throw std::runtime_error("split loss: non-finite term at particle " +
                                         std::to_string(q));
            acc += t;
        }
        return acc;
    }

    LossAndGrad loss_gradient(const MlpParams& p) const override {
        LossAndGrad out;
        out.grad.assign(in_.arch.param_count(), 0.0);
        out.value = kernel_.loss_gradient(
            p, x_star_.data(), ens_.velocities.data(), ens_.n_particles,
            [this](int q, const double* u, double div, double* u_bar, double& div_bar) {
                return term(q, u, div, u_bar, div_bar);
            },
            out.grad.data());
        return out;
    }

private:
    double term(int q, const double* u, double div, double* u_bar, double& div_bar) const {
        const int dv = ens_.dim_v;
        const double dt = cfg_.dt, eps = in_.epsilon;
        const double inv_n = 1.0 / ens_.n_particles;
        const double* vs = v_star_.data() + static_cast<std::size_t>(q) * dv;
        double u2 = 0.0, v2 = 0.0;
        for (int i = 0; i < dv; ++i) {
            const double v1 = vs[i] + u[i] * dt;
            u2 += u[i] * u[i];
            v2 += v1 * v1;
            if (u_bar) u_bar[i] = (dt * u[i] + eps * dt * v1) * inv_n;
        }
        div_bar = -eps * dt * inv_n;
        const double logf1 = ens_.log_density[q] - dt * div;
        return (0.5 * dt * u2 + eps * (0.5 * v2 + logf1)) * inv_n;
    }

    const ParticleEnsemble& ens_;
    const std::vector<double>& x_star_;
    const std::vector<double>& v_star_;
    const JkoStepInputs& in_;
    const JkoConfig& cfg_;
    FieldKernel kernel_;
};

}  // namespace

StepResult jko_step(const ParticleEnsemble& ens, const JkoStepInputs& in,
                    const MlpParams& params_init, const JkoConfig& config) {
    JointProblem problem(ens, in, config);
    InnerResult opt =
        inner_optimize(problem, params_init, config.inner_iters, config.learning_rate);

    Candidate c = jko_candidate_update(ens, in.potential, in.arch, in.fm, opt.params, config.dt,
                                       config.variant);
    StepResult res;
    res.ensemble = ens;
    res.ensemble.positions = std::move(c.x_new);
    res.ensemble.velocities = std::move(c.v_new);
    for (int p = 0; p < ens.n_particles; ++p)
        res.ensemble.log_density[p] = ens.log_density[p] - c.logdet[p];
    res.ensemble.wrap_positions(in.domain);
    res.trained_params = std::move(opt.params);
    res.final_inner_loss = opt.final_loss;
    res.inner_loss_trace = std::move(opt.trace);
    return res;
}

StepResult split_step(const ParticleEnsemble& ens, const JkoStepInputs& in,
                      const MlpParams& params_init, const JkoConfig& config) {
    // Step 1: transport alone, density carried unchanged.
    std::vector<double> x_star, v_star;
    base_map(ens, in.potential, config.dt, config.variant, x_star, v_star);

    // Step 2: dissipative objective over velocities.
    SplitProblem problem(ens, x_star, v_star, in, config);
    InnerResult opt =
        inner_optimize(problem, params_init, config.inner_iters, config.learning_rate);

    const int n = ens.n_particles, dv = ens.dim_v;
    std::vector<double> u(static_cast<std::size_t>(n) * dv), div(n);
    FieldKernel kernel(in.arch, in.fm);
    kernel.forward(opt.params, x_star.data(), ens.velocities.data(), n, u.data(), div.data());

    StepResult res;
    res.ensemble = ens;
    res.ensemble.positions = std::move(x_star);
    res.ensemble.velocities = std::move(v_star);
    for (int p = 0; p < n; ++p) {
        double* vp = res.ensemble.v(p);
        const double* up = u.data() + static_cast<std::size_t>(p) * dv;
        for (int i = 0; i < dv; ++i) vp[i] += up[i] * config.dt;
        res.ensemble.log_density[p] = ens.log_density[p] - config.dt * div[p];
    }
    res.ensemble.wrap_positions(in.domain);
    res.trained_params = std::move(opt.params);
    res.final_inner_loss = opt.final_loss;
    res.inner_loss_trace = std::move(opt.trace);
    return res;
}

LinearRunResult run_linear(const ParticleEnsemble& initial, const LinearRunInputs& in,
                           const LinearRunHooks& hooks) {
    in.config.validate();
    JkoStepInputs step_in{in.domain, in.potential, in.arch, in.fm, in.epsilon};
    LinearRunResult out;
    out.records.reserve(in.config.n_steps);

    ParticleEnsemble ens = initial;
    MlpParams params = init_params(in.arch, in.config.seed);
    for (int n = 0; n < in.config.n_steps; ++n) {
        const MlpParams init =
            in.config.warm_start ? params : init_params(in.arch, in.config.seed);
        const ParticleEnsemble before = ens;
        StepResult step = in.use_split ? split_step(ens, step_in, init, in.config)
                                       : jko_step(ens, step_in, init, in.config);
        ens = std::move(step.ensemble);
        params = std::move(step.trained_params);

        const double t_next = (n + 1) * in.config.dt;
        DiagnosticsRecord rec;
        rec.step = n + 1;
        rec.time = t_next;
        rec.loss = step.final_inner_loss;
        rec.energy = discrete_energy(ens, in.potential, in.T0);
        if (hooks.oracles_at) {
            StepOracles oracles = hooks.oracles_at(t_next);
            if (oracles.reference_logdensity) rec.kl = kl_mc(ens, oracles.reference_logdensity);
            if (oracles.velocity_score)
                rec.drift_error =
                    drift_error(before, ens, in.arch, in.fm, params, oracles.velocity_score);
        }
        out.records.push_back(rec);
        if (hooks.on_step) hooks.on_step(n + 1, t_next, ens);
    }
    out.final_ensemble = std::move(ens);
    out.final_params = std::move(params);
    return out;
}

}  // namespace kfp
