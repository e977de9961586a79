#include "kfp/runner.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "kfp/baselines.hpp"
#include "kfp/sampling.hpp"

namespace kfp {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Method m) {
    switch (m) {
        case Method::KineticJko: return "kinetic_jko";
        case Method::SplitJko: return "split_jko";
        case Method::ScoreBaseline: return "score_baseline";
    }
    return "kinetic_jko";
}

Method method_from_string(const std::string& s) {
    if (s == "kinetic_jko") return Method::KineticJko;
    if (s == "split_jko") return Method::SplitJko;
    if (s == "score_baseline") return Method::ScoreBaseline;
    throw std::invalid_argument("unknown method: " + s);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

LinearRunHooks make_oracle_hooks(const ExperimentSetup& setup) {
    LinearRunHooks hooks;
    if (setup.has_gaussian_oracle()) {
        const int d = setup.domain.dim_x;
        auto traj = std::make_shared<GaussianMomentTrajectory>(
            GaussianMoments{setup.initial.mu0, setup.initial.C0},
            QuadraticModel{setup.potential.k_inv, setup.potential.mu_tilde},
            SystemMatrices::standard(d, setup.epsilon));
        const int dx = setup.domain.dim_x, dv = setup.domain.dim_v;
        hooks.oracles_at = [traj, dx, dv](double t_next) {
            if (t_next > traj->time() + 1e-12) traj->advance(t_next - traj->time());
            const GaussianMoments m = traj->current();
            StepOracles o;
            o.reference_logdensity = [m, dx, dv](const double* x, const double* v) {
                return gaussian_logdensity(m, x, v, dx, dv);
            };
            o.velocity_score = [m, dx, dv](const double* x, const double* v, double* out) {
                const Eigen::VectorXd s = gaussian_score(m, x, v, dx, dv);
                for (int i = 0; i < dv; ++i) out[i] = s(dx + i);
            };
            return o;
        };
    } else if (setup.has_stationary_oracle()) {
        auto stat = std::make_shared<StationaryDensity>(
            make_stationary_density(setup.potential, setup.domain, setup.T0));
        hooks.oracles_at = [stat](double) {
            StepOracles o;
            o.reference_logdensity = [stat](const double* x, const double* v) {
                return stat->logdensity(x, v);
            };
            return o;
        };
    }
    return hooks;
}

namespace {

LinearRunHooks merge_hooks(const LinearRunHooks& oracle, const LinearRunHooks& extra) {
    LinearRunHooks hooks = oracle;
    if (extra.oracles_at) hooks.oracles_at = extra.oracles_at;
    hooks.on_step = extra.on_step;
    return hooks;
}

LinearRunInputs linear_inputs(const ExperimentSetup& setup, Method method) {
    LinearRunInputs in;
    in.domain = setup.domain;
    in.potential = setup.potential;
    in.arch = setup.arch;
    in.fm = setup.fm;
    in.config = setup.jko;
    in.epsilon = setup.epsilon;
    in.T0 = setup.T0;
    in.use_split = (method == Method::SplitJko);
    return in;
}

}  // namespace

LinearRunResult execute_linear(const ExperimentSetup& setup, Method method,
                               const LinearRunHooks& extra_hooks) {
    if (setup.is_vpfp())
        throw std::invalid_argument("execute_linear: preset is a PIC experiment");
    const ParticleEnsemble initial =
        sample_from_initial(setup.initial, setup.domain, setup.n_particles, setup.jko.seed);
    const LinearRunHooks hooks = merge_hooks(make_oracle_hooks(setup), extra_hooks);
    const LinearRunInputs in = linear_inputs(setup, method);
    if (method == Method::ScoreBaseline) return run_score_baseline(initial, in, hooks);
    return run_linear(initial, in, hooks);
}

VpfpRunResult execute_vpfp(const ExperimentSetup& setup, const VpfpRunHooks& hooks) {
    if (!setup.is_vpfp())
        throw std::invalid_argument("execute_vpfp: preset is not a PIC experiment");
    const ParticleEnsemble initial =
        sample_from_initial(setup.initial, setup.domain, setup.n_particles, setup.jko.seed);
    VpfpRunInputs in;
    in.domain = setup.domain;
    in.nx = setup.grid_nx;
    in.arch = setup.arch;
    in.fm = setup.fm;
    in.config = setup.jko;
    in.epsilon = setup.epsilon;
    in.T0 = setup.T0;
    return run_vpfp(initial, in, hooks);
}

namespace {

void write_cell(std::ostream& os, const std::optional<double>& v) {
    if (v) os << format_double(*v);
}

}  // namespace

void write_diagnostics_csv(const std::string& path, const std::vector<DiagnosticsRecord>& records,
                           bool vpfp_schema) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    if (vpfp_schema) {
        os << "step,time,field_energy,loss\n";
        for (const auto& r : records) {
            os << r.step << ',' << format_double(r.time) << ',';
            write_cell(os, r.field_energy);
            os << ',' << format_double(r.loss) << '\n';
        }
    } else {
        os << "step,time,loss,energy,kl,drift_error\n";
        for (const auto& r : records) {
            os << r.step << ',' << format_double(r.time) << ',' << format_double(r.loss) << ',';
            write_cell(os, r.energy);
            os << ',';
            write_cell(os, r.kl);
            os << ',';
            write_cell(os, r.drift_error);
            os << '\n';
        }
    }
}

void write_ensemble_snapshot(const std::string& path, const ParticleEnsemble& ens, double time) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    // header: N_p,dim_x,dim_v,time
    os << ens.n_particles << ',' << ens.dim_x << ',' << ens.dim_v << ','
       << format_double(time) << '\n';
    for (int p = 0; p < ens.n_particles; ++p) {
        for (int i = 0; i < ens.dim_x; ++i) os << format_double(ens.x(p)[i]) << ',';
        for (int i = 0; i < ens.dim_v; ++i) os << format_double(ens.v(p)[i]) << ',';
        os << format_double(ens.log_density[p]) << '\n';
    }
}

void write_histogram_snapshot(const std::string& path, const PhaseHistogram& hist, double time) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "t," << format_double(time) << ",nx," << hist.nx << ",nv," << hist.nv << ",vmin,"
       << format_double(hist.vmin) << ",vmax," << format_double(hist.vmax) << '\n';
    for (int i = 0; i < hist.nx; ++i) {
        for (int j = 0; j < hist.nv; ++j) {
            if (j) os << ',';
            os << format_double(hist.values[static_cast<std::size_t>(i) * hist.nv + j]);
        }
        os << '\n';
    }
}

namespace {

json manifest_json(const ExperimentSetup& setup, Method method) {
    json j;
    j["version"] = "kfp 0.1.0";
    j["preset"] = setup.id;
    j["method"] = to_string(method);
    json c;
    c["n_particles"] = setup.n_particles;
    c["dt"] = setup.jko.dt;
    c["t_final"] = setup.t_final;
    c["n_steps"] = setup.jko.n_steps;
    c["inner_iters"] = setup.jko.inner_iters;
    c["learning_rate"] = setup.jko.learning_rate;
    c["warm_start"] = setup.jko.warm_start;
    c["seed"] = setup.jko.seed;
    c["variant"] = to_string(setup.jko.variant);
    c["epsilon"] = setup.epsilon;
    c["t0"] = setup.T0;
    c["snapshot_every"] = setup.snapshot_every;
    c["grid_nx"] = setup.grid_nx;
    c["velocity_sampler"] =
        setup.initial.gaussian_velocity_alternative ? "gaussian" : "mixture";
    j["config"] = c;
    return j;
}

std::string snapshot_name(const char* stem, int step) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%06d.csv", stem, step);
    return buf;
}

}  // namespace

int run(const RunConfig& config) {
    ExperimentSetup setup = resolve_preset(config.preset);
    for (const auto& [k, v] : config.overrides) apply_override(setup, k, v);

    const fs::path out_dir(config.output_dir);
    fs::create_directories(out_dir);
    const fs::path snap_dir = out_dir / "snapshots";
    if (setup.snapshot_every > 0) fs::create_directories(snap_dir);

    {
        std::ofstream os(out_dir / "manifest.json");
        if (!os) throw std::runtime_error("cannot write manifest");
        os << manifest_json(setup, config.method).dump(2) << '\n';
    }

    if (setup.is_vpfp()) {
        if (config.method != Method::KineticJko)
            throw std::invalid_argument("PIC presets support only the kinetic_jko method");
        VpfpRunHooks hooks;
        const ExperimentSetup& s = setup;
        const std::string snap_base = snap_dir.string();
        if (setup.snapshot_every > 0)
            hooks.on_step = [&s, snap_base](int step, double t, const ParticleEnsemble& ens) {
                if (step % s.snapshot_every != 0) return;
                const PhaseHistogram h = phase_space_histogram(
                    ens, s.hist_nx, s.hist_nv, s.hist_vmin, s.hist_vmax, s.domain.length);
                write_histogram_snapshot(snap_base + "/" + snapshot_name("hist", step), h, t);
            };
        VpfpRunResult res = execute_vpfp(setup, hooks);
        write_diagnostics_csv((out_dir / "diagnostics.csv").string(), res.records, true);
    } else {
        LinearRunHooks extra;
        const ExperimentSetup& s = setup;
        const std::string snap_base = snap_dir.string();
        if (setup.snapshot_every > 0)
            extra.on_step = [&s, snap_base](int step, double t, const ParticleEnsemble& ens) {
                if (step % s.snapshot_every != 0) return;
                write_ensemble_snapshot(snap_base + "/" + snapshot_name("particles", step), ens,
                                        t);
            };
        LinearRunResult res = execute_linear(setup, config.method, extra);
        write_diagnostics_csv((out_dir / "diagnostics.csv").string(), res.records, false);
    }
    return 0;
}

RunConfig run_config_from_manifest(const std::string& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw std::runtime_error("cannot open manifest " + manifest_path);
    json j;
    is >> j;
    RunConfig cfg;
    cfg.preset = j.at("preset").get<std::string>();
    cfg.method = method_from_string(j.at("method").get<std::string>());
    const json& c = j.at("config");
    auto put = [&cfg](const std::string& k, const std::string& v) {
        cfg.overrides.emplace_back(k, v);
    };
    put("n_particles", std::to_string(c.at("n_particles").get<int>()));
    put("dt", format_double(c.at("dt").get<double>()));
    put("t_final", format_double(c.at("t_final").get<double>()));
    put("inner_iters", std::to_string(c.at("inner_iters").get<int>()));
    put("learning_rate", format_double(c.at("learning_rate").get<double>()));
    put("warm_start", c.at("warm_start").get<bool>() ? "true" : "false");
    put("seed", std::to_string(c.at("seed").get<std::uint64_t>()));
    put("variant", c.at("variant").get<std::string>());
    put("epsilon", format_double(c.at("epsilon").get<double>()));
    put("t0", format_double(c.at("t0").get<double>()));
    put("snapshot_every", std::to_string(c.at("snapshot_every").get<int>()));
    put("grid_nx", std::to_string(c.at("grid_nx").get<int>()));
    put("velocity_sampler", c.at("velocity_sampler").get<std::string>());
    return cfg;
}

double time_averaged_drift_error(const ExperimentSetup& setup, Method method) {
    LinearRunResult res = execute_linear(setup, method);
    double acc = 0.0;
    long n = 0;
    for (const auto& r : res.records)
        if (r.drift_error) {
            acc += *r.drift_error;
            ++n;
        }
    if (n == 0) throw std::runtime_error("time_averaged_drift_error: no drift-error oracle");
    return acc / n;
}

double fit_loglog_slope(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 2)
        throw std::invalid_argument("fit_loglog_slope: need at least two points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(points.size());
    for (const auto& [x, y] : points) {
        const double lx = std::log(x), ly = std::log(y);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

SweepResult convergence_sweep(const std::string& preset, const std::vector<double>& dts,
                              const std::vector<std::uint64_t>& seeds,
                              const std::vector<std::pair<std::string, std::string>>& overrides,
                              const std::string& output_dir) {
    if (dts.empty() || seeds.empty())
        throw std::invalid_argument("convergence_sweep: need dts and seeds");
    SweepResult out;
    for (double dt : dts) {
        std::vector<double> errs;
        for (std::uint64_t seed : seeds) {
            ExperimentSetup setup = resolve_preset(preset);
            for (const auto& [k, v] : overrides) apply_override(setup, k, v);
            apply_override(setup, "dt", format_double(dt));
            apply_override(setup, "seed", std::to_string(seed));
            errs.push_back(time_averaged_drift_error(setup, Method::KineticJko));
        }
        SweepRow row;
        row.dt = dt;
        for (double e : errs) row.mean_error += e;
        row.mean_error /= errs.size();
        if (errs.size() > 1) {
            double var = 0.0;
            for (double e : errs) var += (e - row.mean_error) * (e - row.mean_error);
            var /= (errs.size() - 1);
            row.stderr_error = std::sqrt(var / errs.size());
        }
        out.rows.push_back(row);
    }
    if (out.rows.size() >= 2) {
        std::vector<std::pair<double, double>> pts;
        for (const auto& r : out.rows) pts.emplace_back(r.dt, r.mean_error);
        out.slope = fit_loglog_slope(pts);
    }
    if (!output_dir.empty()) {
        fs::create_directories(output_dir);
        std::ofstream os(fs::path(output_dir) / "sweep.csv");
        os << "dt,mean_drift_error,stderr\n";
        for (const auto& r : out.rows)
            os << format_double(r.dt) << ',' << format_double(r.mean_error) << ','
               << format_double(r.stderr_error) << '\n';
        if (out.slope) os << "# slope," << format_double(*out.slope) << '\n';
    }
    return out;
}

}  // namespace kfp
