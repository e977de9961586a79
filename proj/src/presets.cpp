#include "kfp/presets.hpp"

#include <cmath>
#include <json.hpp>
#include <stdexcept>

namespace kfp {

namespace {

using nlohmann::json;

// All registered experiments. Matrices are stored with the phase-space
// ordering (x_1..x_dx, v_1..v_dv).
const char* kPresetJson = R"json({
  "example1_1d": {
    "domain": {"dim_x": 1, "dim_v": 1, "topology": "unbounded"},
    "potential": {"kind": "quadratic_form",
                  "k_inv": [[2.0, 0.0], [0.0, 1.0]],
                  "mu_tilde": [0.0, 0.0]},
    "initial": {"kind": "phase_gaussian",
                "mu0": [0.0, 1.0],
                "cov0": [[2.0, 1.0], [1.0, 3.0]]},
    "defaults": {"n_particles": 2000, "dt": 0.1, "t_final": 8.0,
                 "inner_iters": 100, "learning_rate": 0.01,
                 "epsilon": 1.0, "t0": 1.0, "warm_start": true, "seed": 1,
                 "variant": "algorithm_one", "snapshot_every": 0,
                 "network": {"hidden": [], "activation": "none"},
                 "features": {"kind": "identity"}}
  },
  "example1_1d_comparison": {
    "domain": {"dim_x": 1, "dim_v": 1, "topology": "unbounded"},
    "potential": {"kind": "quadratic_form",
                  "k_inv": [[2.0, 0.0], [0.0, 1.0]],
                  "mu_tilde": [0.0, 0.0]},
    "initial": {"kind": "phase_gaussian",
                "mu0": [0.0, 1.0],
                "cov0": [[2.0, 1.0], [1.0, 3.0]]},
    "defaults": {"n_particles": 2000, "dt": 0.1, "t_final": 10.0,
                 "inner_iters": 150, "learning_rate": 0.003,
                 "epsilon": 1.0, "t0": 1.0, "warm_start": false, "seed": 1,
                 "variant": "algorithm_one", "snapshot_every": 0,
                 "network": {"hidden": [16, 16], "activation": "tanh"},
                 "features": {"kind": "identity"}}
  },
  "example1_3d": {
    "domain": {"dim_x": 3, "dim_v": 3, "topology": "unbounded"},
    "potential": {"kind": "quadratic_form",
                  "k_inv": [[2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                            [0.0, 2.0, 0.0, 0.0, 0.0, 0.0],
                            [0.0, 0.0, 2.0, 0.0, 0.0, 0.0],
                            [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
                            [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
                            [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]],
                  "mu_tilde": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]},
    "initial": {"kind": "phase_gaussian",
                "mu0": [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
                "cov0": [[2.0, 0.0, 0.0, 1.0, 0.0, 0.0],
                         [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
                         [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
                         [1.0, 0.0, 0.0, 3.0, 0.0, 0.0],
                         [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
                         [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]]},
    "defaults": {"n_particles": 2000, "dt": 0.1, "t_final": 20.0,
                 "inner_iters": 150, "learning_rate": 0.003,
                 "epsilon": 1.0, "t0": 1.0, "warm_start": false, "seed": 1,
                 "variant": "algorithm_one", "snapshot_every": 0,
                 "network": {"hidden": [32, 32], "activation": "tanh"},
                 "features": {"kind": "identity"}}
  },
  "example2": {
    "domain": {"dim_x": 1, "dim_v": 1, "topology": "unbounded"},
    "potential": {"kind": "quadratic_plus_cosine", "a": 1.0, "b": 1.0},
    "initial": {"kind": "product",
                "rho": {"kind": "gaussian", "sigma": 1.0},
                "velocity": {"kind": "two_beam", "center": 1.5, "sigma": 1.0,
                             "transverse_sigma": 1.0}},
    "defaults": {"n_particles": 5000, "dt": 0.1, "t_final": 10.0,
                 "inner_iters": 150, "learning_rate": 0.003,
                 "epsilon": 1.0, "t0": 1.0, "warm_start": false, "seed": 1,
                 "variant": "algorithm_one", "snapshot_every": 0,
                 "network": {"hidden": [16, 16], "activation": "tanh"},
                 "features": {"kind": "identity"},
                 "energy_slack_c": 2.0}
  },
  "example3_periodic": {
    "domain": {"dim_x": 1, "dim_v": 1, "topology": "periodic", "length": 1.0},
    "potential": {"kind": "sine_periodic", "amp": 0.2, "freq": 6.283185307179586},
    "initial": {"kind": "product",
                "rho": {"kind": "one_plus_cosine", "amp": 0.5,
                        "k": 6.283185307179586, "grid_nx": 128},
                "velocity": {"kind": "two_beam", "center": 1.5, "sigma": 1.0,
                             "transverse_sigma": 1.0}},
    "defaults": {"n_particles": 5000, "dt": 0.1, "t_final": 20.0,
                 "inner_iters": 150, "learning_rate": 0.003,
                 "epsilon": 1.0, "t0": 1.0, "warm_start": false, "seed": 1,
                 "variant": "algorithm_one", "snapshot_every": 0,
                 "network": {"hidden": [16, 16], "activation": "tanh"},
                 "features": {"kind": "periodic_embed", "omega": 6.283185307179586},
                 "energy_slack_c": 1.0}
  },
  "example4_3d": {
    "domain": {"dim_x": 3, "dim_v": 3, "topology": "unbounded"},
    "potential": {"kind": "quadratic_plus_cosine", "a": 1.0, "b": 1.0},
    "initial": {"kind": "product",
                "rho": {"kind": "gaussian", "sigma": 1.0},
                "velocity": {"kind": "two_beam", "center": 1.5, "sigma": 1.0,
                             "transverse_sigma": 1.0}},
    "defaults": {"n_particles": 5000, "dt": 0.1, "t_final": 5.0,
                 "inner_iters": 150, "learning_rate": 0.003,
                 "epsilon": 1.0, "t0": 1.0, "warm_start": false, "seed": 1,
                 "variant": "algorithm_one", "snapshot_every": 0,
                 "network": {"hidden": [32, 32], "activation": "tanh"},
                 "features": {"kind": "identity"}}
  },
  "vpfp_1d1v_eps10": {
    "domain": {"dim_x": 1, "dim_v": 1, "topology": "periodic",
               "length": 25.132741228718345},
    "potential": {"kind": "self_consistent"},
    "initial": {"kind": "product",
                "rho": {"kind": "one_plus_cosine", "amp": 0.1, "k": 0.2, "grid_nx": 128},
                "velocity": {"kind": "two_beam", "center": 0.3, "sigma": 0.1,
                             "transverse_sigma": 0.1}},
    "defaults": {"n_particles": 5000, "dt": 0.01, "t_final": 4.0,
                 "inner_iters": 50, "learning_rate": 0.001,
                 "epsilon": 10.0, "t0": 1.0, "warm_start": true, "seed": 1,
                 "variant": "algorithm_one", "snapshot_every": 10,
                 "grid_nx": 128,
                 "network": {"hidden": [32, 32], "activation": "leaky_relu", "alpha": 0.01},
                 "features": {"kind": "periodic_embed", "omega": 0.5}}
  },
  "vpfp_1d1v_eps5e-3": {
    "domain": {"dim_x": 1, "dim_v": 1, "topology": "periodic",
               "length": 25.132741228718345},
    "potential": {"kind": "self_consistent"},
    "initial": {"kind": "product",
                "rho": {"kind": "one_plus_cosine", "amp": 0.1, "k": 0.2, "grid_nx": 128},
                "velocity": {"kind": "two_beam", "center": 0.3, "sigma": 0.1,
                             "transverse_sigma": 0.1}},
    "defaults": {"n_particles": 5000, "dt": 0.01, "t_final": 4.0,
                 "inner_iters": 50, "learning_rate": 0.001,
                 "epsilon": 0.005, "t0": 1.0, "warm_start": true, "seed": 1,
                 "variant": "algorithm_one", "snapshot_every": 10,
                 "grid_nx": 128,
                 "network": {"hidden": [32, 32], "activation": "leaky_relu", "alpha": 0.01},
                 "features": {"kind": "periodic_embed", "omega": 0.5}}
  },
  "vpfp_1d1v_eps1e-2": {
    "domain": {"dim_x": 1, "dim_v": 1, "topology": "periodic",
               "length": 25.132741228718345},
    "potential": {"kind": "self_consistent"},
    "initial": {"kind": "product",
                "rho": {"kind": "one_plus_cosine", "amp": 0.1, "k": 0.2, "grid_nx": 128},
                "velocity": {"kind": "two_beam", "center": 0.3, "sigma": 0.1,
                             "transverse_sigma": 0.1}},
    "defaults": {"n_particles": 5000, "dt": 0.01, "t_final": 4.0,
                 "inner_iters": 50, "learning_rate": 0.001,
                 "epsilon": 0.01, "t0": 1.0, "warm_start": true, "seed": 1,
                 "variant": "algorithm_one", "snapshot_every": 10,
                 "grid_nx": 128,
                 "network": {"hidden": [32, 32], "activation": "leaky_relu", "alpha": 0.01},
                 "features": {"kind": "periodic_embed", "omega": 0.5}}
  },
  "vpfp_1d3v_eps10": {
    "domain": {"dim_x": 1, "dim_v": 3, "topology": "periodic",
               "length": 25.132741228718345},
    "potential": {"kind": "self_consistent"},
    "initial": {"kind": "product",
                "rho": {"kind": "one_plus_cosine", "amp": 0.005,
                        "k": 6.283185307179586, "grid_nx": 128},
                "velocity": {"kind": "two_beam", "center": 1.5, "sigma": 0.1,
                             "transverse_sigma": 0.1}},
    "defaults": {"n_particles": 5000, "dt": 0.01, "t_final": 4.0,
                 "inner_iters": 50, "learning_rate": 0.001,
                 "epsilon": 10.0, "t0": 1.0, "warm_start": true, "seed": 1,
                 "variant": "algorithm_one", "snapshot_every": 10,
                 "grid_nx": 128,
                 "network": {"hidden": [64, 64], "activation": "leaky_relu", "alpha": 0.01},
                 "features": {"kind": "periodic_embed", "omega": 0.25}}
  },
  "vpfp_1d3v_eps5e-3": {
    "domain": {"dim_x": 1, "dim_v": 3, "topology": "periodic",
               "length": 25.132741228718345},
    "potential": {"kind": "self_consistent"},
    "initial": {"kind": "product",
                "rho": {"kind": "one_plus_cosine", "amp": 0.005,
                        "k": 6.283185307179586, "grid_nx": 128},
                "velocity": {"kind": "two_beam", "center": 1.5, "sigma": 0.1,
                             "transverse_sigma": 0.1}},
    "defaults": {"n_particles": 5000, "dt": 0.01, "t_final": 4.0,
                 "inner_iters": 50, "learning_rate": 0.001,
                 "epsilon": 0.005, "t0": 1.0, "warm_start": true, "seed": 1,
                 "variant": "algorithm_one", "snapshot_every": 10,
                 "grid_nx": 128,
                 "network": {"hidden": [64, 64], "activation": "leaky_relu", "alpha": 0.01},
                 "features": {"kind": "periodic_embed", "omega": 0.25}}
  }
})json";

const json& registry() {
    static const json reg = json::parse(kPresetJson);
    return reg;
}

Eigen::MatrixXd parse_matrix(const json& j) {
    const int rows = static_cast<int>(j.size());
    const int cols = static_cast<int>(j.at(0).size());
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
    return m;
}

Eigen::VectorXd parse_vector(const json& j) {
    Eigen::VectorXd v(j.size());
    for (int i = 0; i < static_cast<int>(j.size()); ++i) v(i) = j.at(i).get<double>();
    return v;
}

}  // namespace

const std::vector<std::string>& preset_ids() {
    static const std::vector<std::string> ids = [] {
        std::vector<std::string> out;
        for (auto it = registry().begin(); it != registry().end(); ++it)
            out.push_back(it.key());
        return out;
    }();
    return ids;
}

bool has_preset(const std::string& id) { return registry().contains(id); }

ExperimentSetup resolve_preset(const std::string& id) {
    if (!has_preset(id)) throw std::invalid_argument("unknown preset: " + id);
    const json& rec = registry().at(id);
    ExperimentSetup s;
    s.id = id;

    const json& dom = rec.at("domain");
    s.domain.dim_x = dom.at("dim_x").get<int>();
    s.domain.dim_v = dom.at("dim_v").get<int>();
    s.domain.topology = dom.at("topology").get<std::string>() == "periodic"
                            ? XTopology::Periodic
                            : XTopology::Unbounded;
    if (s.domain.periodic()) s.domain.length = dom.at("length").get<double>();
    s.domain.validate();

    const json& pot = rec.at("potential");
    const std::string pkind = pot.at("kind").get<std::string>();
    if (pkind == "quadratic_form") {
        s.potential = PotentialSpec::quadratic_form(parse_matrix(pot.at("k_inv")),
                                                    parse_vector(pot.at("mu_tilde")),
                                                    s.domain.dim_x, s.domain.dim_v);
    } else if (pkind == "quadratic_plus_cosine") {
        s.potential = PotentialSpec::quadratic_plus_cosine(
            pot.at("a").get<double>(), pot.at("b").get<double>(), s.domain.dim_x,
            s.domain.dim_v);
    } else if (pkind == "sine_periodic") {
        s.potential = PotentialSpec::sine_periodic(pot.at("amp").get<double>(),
                                                   pot.at("freq").get<double>(),
                                                   s.domain.dim_x, s.domain.dim_v);
    } else if (pkind == "self_consistent") {
        s.potential = PotentialSpec::self_consistent(s.domain.dim_x, s.domain.dim_v);
    } else {
        throw std::invalid_argument("preset " + id + ": unknown potential kind " + pkind);
    }

    const json& init = rec.at("initial");
    const std::string ikind = init.at("kind").get<std::string>();
    if (ikind == "phase_gaussian") {
        s.initial.kind = InitialSpec::Kind::PhaseGaussian;
        s.initial.mu0 = parse_vector(init.at("mu0"));
        s.initial.C0 = parse_matrix(init.at("cov0"));
    } else if (ikind == "product") {
        s.initial.kind = InitialSpec::Kind::Product;
        const json& rho = init.at("rho");
        const std::string rkind = rho.at("kind").get<std::string>();
        s.initial.rho.dim_x = s.domain.dim_x;
        if (rkind == "gaussian") {
            s.initial.rho.kind = SpatialDensity::Kind::GaussianIso;
            s.initial.rho.sigma = rho.at("sigma").get<double>();
        } else if (rkind == "uniform") {
            s.initial.rho.kind = SpatialDensity::Kind::Uniform;
        } else if (rkind == "one_plus_cosine") {
            s.initial.rho.kind = SpatialDensity::Kind::OnePlusCosine;
            s.initial.rho.amp = rho.at("amp").get<double>();
            s.initial.rho.k = rho.at("k").get<double>();
            s.initial.rho.grid_nx = rho.value("grid_nx", 128);
        } else {
            throw std::invalid_argument("preset " + id + ": unknown rho kind " + rkind);
        }
        const json& vel = init.at("velocity");
        s.initial.velocity.dim_v = s.domain.dim_v;
        if (vel.at("kind").get<std::string>() == "gaussian") {
            s.initial.velocity.kind = VelocityMixture::Kind::Gaussian;
            s.initial.velocity.sigma = vel.at("sigma").get<double>();
        } else {
            s.initial.velocity.kind = VelocityMixture::Kind::TwoBeam;
            s.initial.velocity.center = vel.at("center").get<double>();
            s.initial.velocity.sigma = vel.at("sigma").get<double>();
            s.initial.velocity.transverse_sigma = vel.at("transverse_sigma").get<double>();
        }
    } else {
        throw std::invalid_argument("preset " + id + ": unknown initial kind " + ikind);
    }

    const json& def = rec.at("defaults");
    s.n_particles = def.at("n_particles").get<int>();
    s.jko.dt = def.at("dt").get<double>();
    s.t_final = def.at("t_final").get<double>();
    s.jko.inner_iters = def.at("inner_iters").get<int>();
    s.jko.learning_rate = def.at("learning_rate").get<double>();
    s.epsilon = def.at("epsilon").get<double>();
    s.T0 = def.at("t0").get<double>();
    s.jko.warm_start = def.at("warm_start").get<bool>();
    s.jko.seed = def.at("seed").get<std::uint64_t>();
    s.jko.variant = symplectic_variant_from_string(def.at("variant").get<std::string>());
    s.snapshot_every = def.value("snapshot_every", 0);
    s.grid_nx = def.value("grid_nx", s.initial.rho.grid_nx);
    s.energy_slack_c = def.value("energy_slack_c", 1.0);

    const json& net = def.at("network");
    const json& feat = def.at("features");
    if (feat.at("kind").get<std::string>() == "identity")
        s.fm = FeatureMap::identity(s.domain.dim_x, s.domain.dim_v);
    else
        s.fm = FeatureMap::periodic_embed(feat.at("omega").get<double>(), s.domain.dim_x,
                                          s.domain.dim_v);
    std::vector<int> hidden = net.value("hidden", std::vector<int>{});
    const Activation act = activation_from_string(net.at("activation").get<std::string>());
    if (hidden.empty())
        s.arch = MlpArchitecture::affine(s.fm.output_dim(), s.domain.dim_v);
    else
        s.arch = MlpArchitecture::mlp(s.fm.output_dim(), hidden, s.domain.dim_v, act,
                                      net.value("alpha", 0.01));
    s.arch.validate(s.fm.output_dim(), s.domain.dim_v);

    finalize_setup(s);
    return s;
}

void apply_override(ExperimentSetup& s, const std::string& key, const std::string& value) {
    try {
        if (key == "n_particles") s.n_particles = std::stoi(value);
        else if (key == "dt") s.jko.dt = std::stod(value);
        else if (key == "t_final") s.t_final = std::stod(value);
        else if (key == "n_steps") { s.jko.n_steps = std::stoi(value); s.t_final = s.jko.n_steps * s.jko.dt; }
        else if (key == "inner_iters") s.jko.inner_iters = std::stoi(value);
        else if (key == "learning_rate") s.jko.learning_rate = std::stod(value);
        else if (key == "warm_start") s.jko.warm_start = (value == "true" || value == "1");
        else if (key == "seed") s.jko.seed = std::stoull(value);
        else if (key == "variant") s.jko.variant = symplectic_variant_from_string(value);
        else if (key == "epsilon") s.epsilon = std::stod(value);
        else if (key == "t0") s.T0 = std::stod(value);
        else if (key == "snapshot_every") s.snapshot_every = std::stoi(value);
        else if (key == "grid_nx") { s.grid_nx = std::stoi(value); s.initial.rho.grid_nx = s.grid_nx; }
        else if (key == "velocity_sampler") {
            if (value == "gaussian") { s.initial.gaussian_velocity_alternative = true; s.initial.alt_t0 = s.T0; }
            else if (value == "mixture") s.initial.gaussian_velocity_alternative = false;
            else throw std::invalid_argument("velocity_sampler must be gaussian or mixture");
        }
        else throw std::invalid_argument("unknown override key: " + key);
    } catch (const std::invalid_argument&) {
        throw;
    } catch (const std::exception&) {
        throw std::invalid_argument("bad value for override " + key + ": " + value);
    }
    finalize_setup(s);
}

void finalize_setup(ExperimentSetup& s) {
    s.jko.n_steps = static_cast<int>(std::ceil(s.t_final / s.jko.dt - 1e-12));
    if (s.jko.n_steps < 1) s.jko.n_steps = 1;
    s.jko.validate();
    if (s.n_particles < 1)
        throw std::invalid_argument("setup: n_particles must be positive");
}

ParticleEnsemble sample_initial_ensemble(const std::string& preset, int n_particles,
                                         std::uint64_t seed) {
    ExperimentSetup s = resolve_preset(preset);
    return sample_from_initial(s.initial, s.domain, n_particles, seed);
}

}  // namespace kfp
