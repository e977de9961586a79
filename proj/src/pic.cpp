#include "kfp/pic.hpp"

#include <cmath>
#include <complex>
#include <stdexcept>

namespace kfp {

double tent_basis(double z, double dx) { return std::max(0.0, 1.0 - std::abs(z) / dx); }

GridField1D deposit_density(const std::vector<double>& positions, int nx, double length) {
    if (nx < 2) throw std::invalid_argument("deposit_density: need nx >= 2");
    GridField1D rho(nx, length);
    const double dx = rho.dx();
    const std::size_t n = positions.size();
    const double w = 1.0 / (static_cast<double>(n) * dx);
    for (double x : positions) {
        if (x < 0.0 || x >= length)
            throw std::invalid_argument("deposit_density: position outside [0, L)");
        const double s = x / dx - 0.5;
        double i0 = std::floor(s);
        const double frac = s - i0;
        int c0 = static_cast<int>(i0);
        if (c0 < 0) c0 += nx;
        const int c1 = (c0 + 1) % nx;
        rho.values[c0] += (1.0 - frac) * w;
        rho.values[c1] += frac * w;
    }
    return rho;
}

namespace {

bool is_power_of_two(int n) { return n >= 2 && (n & (n - 1)) == 0; }

// Iterative radix-2 transform; inverse applies the 1/N factor.
void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> even = a[i + k];
                const std::complex<double> odd = a[i + k + len / 2] * w;
                a[i + k] = even + odd;
                a[i + k + len / 2] = even - odd;
                w *= wl;
            }
        }
    }
    if (inverse)
        for (auto& z : a) z /= static_cast<double>(n);
}

}  // namespace

std::pair<GridField1D, GridField1D> solve_poisson_spectral(const GridField1D& rho,
                                                           double background) {
    const int nx = rho.nx;
    if (!is_power_of_two(nx))
        throw std::invalid_argument("solve_poisson_spectral: nx must be a power of two");
    double mean = 0.0;
    for (double r : rho.values) mean += r;
    mean /= nx;
    if (std::abs(mean - background) > 1e-10)
        throw std::invalid_argument(
            "solve_poisson_spectral: global neutrality violated (mean rho != h)");

    std::vector<std::complex<double>> fhat(nx);
    for (int i = 0; i < nx; ++i) fhat[i] = rho.values[i] - background;
    fft_radix2(fhat, false);

    std::vector<std::complex<double>> phihat(nx), ehat(nx);
    const double L = rho.length;
    phihat[0] = 0.0;  // zero-mean gauge
    ehat[0] = 0.0;
    for (int j = 1; j < nx; ++j) {
        const double k = 2.0 * M_PI * (j <= nx / 2 ? j : j - nx) / L;
        phihat[j] = fhat[j] / (k * k);
        ehat[j] = std::complex<double>(0.0, -k) * phihat[j];
    }
    // The Nyquist mode has no odd (derivative) representation on the grid.
    ehat[nx / 2] = 0.0;

    fft_radix2(phihat, true);
    fft_radix2(ehat, true);
    GridField1D phi(nx, L), E(nx, L);
    for (int i = 0; i < nx; ++i) {
        phi.values[i] = phihat[i].real();
        E.values[i] = ehat[i].real();
    }
    return {std::move(phi), std::move(E)};
}

std::vector<double> interpolate_field(const GridField1D& field,
                                      const std::vector<double>& positions) {
    const int nx = field.nx;
    const double dx = field.dx();
    std::vector<double> out(positions.size());
    for (std::size_t p = 0; p < positions.size(); ++p) {
        const double s = positions[p] / dx - 0.5;
        double i0 = std::floor(s);
        const double frac = s - i0;
        int c0 = static_cast<int>(i0);
        if (c0 < 0) c0 += nx;
        const int c1 = (c0 + 1) % nx;
        out[p] = (1.0 - frac) * field.values[c0] + frac * field.values[c1];
    }
    return out;
}

double field_energy(const GridField1D& E) {
    double s = 0.0;
    for (double e : E.values) s += e * e;
    return s * E.dx();
}

namespace {

// Dissipative objective of the PIC coupled step; positions and the field
// are frozen, u is evaluated at (x^n, v^n).
class VpfpProblem final : public InnerProblem {
public:
    VpfpProblem(const ParticleEnsemble& ens, const std::vector<double>& e_at_particles,
                double field_term, const VpfpStepInputs& in, const JkoConfig& cfg)
        : ens_(ens), e_p_(e_at_particles), field_term_(field_term), in_(in), cfg_(cfg),
          kernel_(in.arch, in.fm) {}

    double loss(const MlpParams& p) const override { return evaluate(p, false).value; }
    LossAndGrad loss_gradient(const MlpParams& p) const override { return evaluate(p, true); }

    // v^{n+1} for the trained parameters (field kick on component 0).
    std::vector<double> committed_velocities(const MlpParams& params,
                                             std::vector<double>& div_out) const {
        const int n = ens_.n_particles, dv = ens_.dim_v;
        std::vector<double> u(static_cast<std::size_t>(n) * dv);
        div_out.resize(n);
        kernel_.forward(params, ens_.positions.data(), ens_.velocities.data(), n, u.data(),
                        div_out.data());
        std::vector<double> v1(static_cast<std::size_t>(n) * dv);
        for (int p = 0; p < n; ++p)
            for (int i = 0; i < dv; ++i)
                v1[static_cast<std::size_t>(p) * dv + i] =
                    ens_.v(p)[i] + (i == 0 ? e_p_[p] * cfg_.dt : 0.0) +
                    u[static_cast<std::size_t>(p) * dv + i] * cfg_.dt;
        return v1;
    }

private:
    double term(int p, const double* u, double div, double* u_bar, double& div_bar) const {
        const int dv = ens_.dim_v;
        const double dt = cfg_.dt, eps = in_.epsilon, t0 = in_.T0;
        const double inv_n = 1.0 / ens_.n_particles;
        const double* vp = ens_.v(p);
        double u2 = 0.0, v2 = 0.0;
        for (int i = 0; i < dv; ++i) {
            const double v1 = vp[i] + (i == 0 ? e_p_[p] * dt : 0.0) + u[i] * dt;
            u2 += u[i] * u[i];
            v2 += v1 * v1;
            if (u_bar) u_bar[i] = (dt * u[i] + eps * dt * v1) * inv_n;
        }
        div_bar = -eps * t0 * dt * inv_n;
        const double logf1 = ens_.log_density[p] - dt * div;
        return (0.5 * dt * u2 + eps * (0.5 * v2 + t0 * logf1)) * inv_n;
    }

    LossAndGrad evaluate(const MlpParams& params, bool want_grad) const {
        const int n = ens_.n_particles, dv = ens_.dim_v;
        LossAndGrad out;
        if (want_grad) {
            out.grad.assign(in_.arch.param_count(), 0.0);
            out.value = kernel_.loss_gradient(
                params, ens_.positions.data(), ens_.velocities.data(), n,
                [this](int p, const double* u, double div, double* u_bar, double& div_bar) {
                    return term(p, u, div, u_bar, div_bar);
                },
                out.grad.data());
        } else {
            std::vector<double> u(static_cast<std::size_t>(n) * dv), div(n);
            kernel_.forward(params, ens_.positions.data(), ens_.velocities.data(), n, u.data(),
                            div.data());
            double dummy;
            for (int p = 0; p < n; ++p) {
                const double t =
                    term(p, u.data() + static_cast<std::size_t>(p) * dv, div[p], nullptr, dummy);
                if (!std::isfinite(t))
                    throw std::runtime_error("vpfp loss: non-finite term at particle " +
                                             std::to_string(p));
                out.value += t;
            }
        }
        out.value += field_term_;
        return out;
    }

    const ParticleEnsemble& ens_;
    const std::vector<double>& e_p_;
    double field_term_;
    const VpfpStepInputs& in_;
    const JkoConfig& cfg_;
    FieldKernel kernel_;
};

}  // namespace

VpfpStepResult vpfp_jko_step(const ParticleEnsemble& ens, const VpfpStepInputs& in,
                             const MlpParams& params_init, const JkoConfig& config) {
    if (!in.domain.periodic() || in.domain.dim_x != 1)
        throw std::invalid_argument("vpfp_jko_step: requires a periodic 1d spatial domain");
    const int n = ens.n_particles, dv = ens.dim_v;
    const double L = in.domain.length;

    // Drift to the new positions, then solve the field there.
    ParticleEnsemble drifted = ens;
    for (int p = 0; p < n; ++p)
        drifted.x(p)[0] = wrap_coordinate(ens.x(p)[0] + ens.v(p)[0] * config.dt, L);

    GridField1D rho = deposit_density(drifted.positions, in.nx, L);
    // Relative density: uniform state is 1, which makes the background
    // charge h = 1 exactly after renormalizing away deposition roundoff.
    double mean = 0.0;
    for (double& r : rho.values) {
        r *= L;
        mean += r;
    }
    mean /= in.nx;
    for (double& r : rho.values) r /= mean;

    auto [phi, E] = solve_poisson_spectral(rho, 1.0);
    const std::vector<double> e_p = interpolate_field(E, drifted.positions);
    // Reported in the units of the probability-normalized field E/L (the
    // ensemble is a unit-mass density; the solve uses the relative
    // density so that the uniform state carries unit plasma frequency).
    const double fe = field_energy(E) / (L * L);

    VpfpProblem problem(ens, e_p, fe, in, config);
    InnerResult opt =
        inner_optimize(problem, params_init, config.inner_iters, config.learning_rate);

    std::vector<double> div;
    std::vector<double> v1 = problem.committed_velocities(opt.params, div);

    VpfpStepResult out;
    out.step.ensemble = std::move(drifted);
    out.step.ensemble.velocities = std::move(v1);
    for (int p = 0; p < n; ++p)
        out.step.ensemble.log_density[p] = ens.log_density[p] - config.dt * div[p];
    out.step.trained_params = std::move(opt.params);
    out.step.final_inner_loss = opt.final_loss;
    out.step.inner_loss_trace = std::move(opt.trace);
    out.field_energy = fe;
    out.rho = std::move(rho);
    out.phi = std::move(phi);
    out.E = std::move(E);
    (void)dv;
    return out;
}

PhaseHistogram phase_space_histogram(const ParticleEnsemble& ens, int nx, int nv, double vmin,
                                     double vmax, double length) {
    PhaseHistogram h;
    h.nx = nx;
    h.nv = nv;
    h.length = length;
    h.vmin = vmin;
    h.vmax = vmax;
    h.values.assign(static_cast<std::size_t>(nx) * nv, 0.0);
    const double dxb = length / nx;
    const double dvb = (vmax - vmin) / nv;
    long included = 0;
    for (int p = 0; p < ens.n_particles; ++p) {
        const double x = ens.x(p)[0];
        const double v = ens.v(p)[0];
        if (x < 0.0 || x >= length || v < vmin || v >= vmax) continue;
        const int bx = std::min(nx - 1, static_cast<int>(x / dxb));
        const int bv = std::min(nv - 1, static_cast<int>((v - vmin) / dvb));
        h.values[static_cast<std::size_t>(bx) * nv + bv] += 1.0;
        ++included;
    }
    if (included > 0) {
        const double norm = 1.0 / (included * dxb * dvb);
        for (double& c : h.values) c *= norm;
    }
    return h;
}

VpfpRunResult run_vpfp(const ParticleEnsemble& initial, const VpfpRunInputs& in,
                       const VpfpRunHooks& hooks) {
    in.config.validate();
    VpfpStepInputs step_in{in.domain, in.nx, in.arch, in.fm, in.epsilon, in.T0};
    VpfpRunResult out;
    out.records.reserve(in.config.n_steps);

    ParticleEnsemble ens = initial;
    MlpParams params = init_params(in.arch, in.config.seed);
    for (int n = 0; n < in.config.n_steps; ++n) {
        const MlpParams init =
            in.config.warm_start ? params : init_params(in.arch, in.config.seed);
        VpfpStepResult step = vpfp_jko_step(ens, step_in, init, in.config);
        ens = std::move(step.step.ensemble);
        params = std::move(step.step.trained_params);

        DiagnosticsRecord rec;
        rec.step = n + 1;
        rec.time = (n + 1) * in.config.dt;
        rec.loss = step.step.final_inner_loss;
        rec.field_energy = step.field_energy;
        out.records.push_back(rec);
        if (hooks.on_step) hooks.on_step(n + 1, rec.time, ens);
    }
    out.final_ensemble = std::move(ens);
    return out;
}

}  // namespace kfp
