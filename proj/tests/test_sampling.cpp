#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "kfp/oracles.hpp"
#include "kfp/presets.hpp"
#include "kfp/sampling.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace kfp;

TEST_CASE("uniform profile fills mesh cells within the concentration bound") {
    DomainSpec dom;
    dom.topology = XTopology::Periodic;
    dom.length = 8.0 * M_PI;
    InitialSpec spec;
    spec.kind = InitialSpec::Kind::Product;
    spec.rho.kind = SpatialDensity::Kind::OnePlusCosine;
    spec.rho.amp = 0.0;  // uniform
    spec.rho.k = 1.0;
    spec.rho.grid_nx = 128;
    spec.rho.dim_x = 1;
    spec.velocity.kind = VelocityMixture::Kind::Gaussian;
    spec.velocity.dim_v = 1;

    const int n = 100000, nx = 128;
    const auto ens = sample_from_initial(spec, dom, n, 4);
    std::vector<int> counts(nx, 0);
    const double dx = dom.length / nx;
    for (int p = 0; p < n; ++p) {
        const int c = std::min(nx - 1, static_cast<int>(ens.x(p)[0] / dx));
        counts[c]++;
    }
    const double expected = static_cast<double>(n) / nx;
    const double bound = 4.0 * std::sqrt(expected);
    for (int c = 0; c < nx; ++c) CHECK(std::abs(counts[c] - expected) < bound);
}

TEST_CASE("phase gaussian matches the example-1 moments at 1e5 particles") {
    const auto ens = sample_initial_ensemble("example1_1d", 100000, 7);
    const int n = ens.n_particles;
    double mx = 0.0, mv = 0.0;
    for (int p = 0; p < n; ++p) {
        mx += ens.x(p)[0];
        mv += ens.v(p)[0];
    }
    mx /= n;
    mv /= n;
    double cxx = 0.0, cxv = 0.0, cvv = 0.0;
    for (int p = 0; p < n; ++p) {
        cxx += (ens.x(p)[0] - mx) * (ens.x(p)[0] - mx);
        cxv += (ens.x(p)[0] - mx) * (ens.v(p)[0] - mv);
        cvv += (ens.v(p)[0] - mv) * (ens.v(p)[0] - mv);
    }
    cxx /= n - 1;
    cxv /= n - 1;
    cvv /= n - 1;
    const double tol = 5.0 / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mx - 0.0) < tol * std::sqrt(2.0));
    CHECK(std::abs(mv - 1.0) < tol * std::sqrt(3.0));
    // per-entry asymptotic stderr of a covariance entry ~ sqrt((Cii Cjj + Cij^2) / n)
    CHECK(std::abs(cxx - 2.0) < 5.0 * std::sqrt((2.0 * 2.0 + 2.0 * 2.0) / n));
    CHECK(std::abs(cxv - 1.0) < 5.0 * std::sqrt((2.0 * 3.0 + 1.0) / n));
    CHECK(std::abs(cvv - 3.0) < 5.0 * std::sqrt((3.0 * 3.0 + 9.0) / n));
}

TEST_CASE("tracked initial log-density matches the analytic gaussian") {
    const auto setup = resolve_preset("example1_1d");
    const auto ens = sample_from_initial(setup.initial, setup.domain, 500, 3);
    GaussianMoments m{setup.initial.mu0, setup.initial.C0};
    for (int p = 0; p < ens.n_particles; ++p) {
        const double ref = gaussian_logdensity(m, ens.x(p), ens.v(p), 1, 1);
        CHECK(ens.log_density[p] == doctest::Approx(ref).epsilon(1e-10));
    }
}

TEST_CASE("two-beam mixture splits mass across both beams") {
    const auto setup = resolve_preset("vpfp_1d1v_eps10");
    const auto ens = sample_from_initial(setup.initial, setup.domain, 20000, 9);
    int up = 0;
    for (int p = 0; p < ens.n_particles; ++p)
        if (ens.v(p)[0] > 0) up++;
    CHECK(std::abs(up - 10000) < 4.0 * std::sqrt(20000.0 * 0.25));
    // beam spread
    double m2 = 0.0;
    for (int p = 0; p < ens.n_particles; ++p) {
        const double d = std::abs(ens.v(p)[0]) - 0.3;
        m2 += d * d;
    }
    m2 /= ens.n_particles;
    CHECK(m2 == doctest::Approx(0.01).epsilon(0.1));
}

TEST_CASE("identical seeds give bitwise-identical ensembles") {
    const auto a = sample_initial_ensemble("example2", 5000, 42);
    const auto b = sample_initial_ensemble("example2", 5000, 42);
    CHECK(a.positions == b.positions);
    CHECK(a.velocities == b.velocities);
    CHECK(a.log_density == b.log_density);
    const auto c = sample_initial_ensemble("example2", 5000, 43);
    CHECK(a.positions != c.positions);
}

#ifdef _OPENMP
TEST_CASE("sampling is thread-count independent") {
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const auto a = sample_initial_ensemble("vpfp_1d1v_eps10", 20000, 5);
    omp_set_num_threads(4);
    const auto b = sample_initial_ensemble("vpfp_1d1v_eps10", 20000, 5);
    omp_set_num_threads(saved);
    CHECK(a.positions == b.positions);
    CHECK(a.velocities == b.velocities);
    CHECK(a.log_density == b.log_density);
}
#endif

TEST_CASE("periodic positions stay inside [0, L)") {
    const auto setup = resolve_preset("example3_periodic");
    const auto ens = sample_from_initial(setup.initial, setup.domain, 10000, 1);
    for (int p = 0; p < ens.n_particles; ++p) {
        CHECK(ens.x(p)[0] >= 0.0);
        CHECK(ens.x(p)[0] < setup.domain.length);
    }
    CHECK_NOTHROW(ens.validate(setup.domain));
}

TEST_CASE("product log-density integrates consistently with the mixture formula") {
    const auto setup = resolve_preset("example2");
    const auto ens = sample_from_initial(setup.initial, setup.domain, 200, 11);
    for (int p = 0; p < ens.n_particles; ++p) {
        const double x = ens.x(p)[0], v = ens.v(p)[0];
        const double logrho = -0.5 * x * x - 0.5 * std::log(2.0 * M_PI);
        const double mix =
            (std::exp(-0.5 * (v - 1.5) * (v - 1.5)) + std::exp(-0.5 * (v + 1.5) * (v + 1.5))) /
            (2.0 * std::sqrt(2.0 * M_PI));
        CHECK(ens.log_density[p] == doctest::Approx(logrho + std::log(mix)).epsilon(1e-10));
    }
}

TEST_CASE("unknown preset id is rejected") {
    CHECK_THROWS_AS(sample_initial_ensemble("no_such_preset", 100, 1), std::invalid_argument);
}

TEST_CASE("gaussian velocity alternative changes the sampler and the tracked density") {
    auto setup = resolve_preset("vpfp_1d1v_eps10");
    apply_override(setup, "velocity_sampler", "gaussian");
    const auto ens = sample_from_initial(setup.initial, setup.domain, 20000, 3);
    double m2 = 0.0;
    for (int p = 0; p < ens.n_particles; ++p) m2 += ens.v(p)[0] * ens.v(p)[0];
    m2 /= ens.n_particles;
    CHECK(m2 == doctest::Approx(1.0).epsilon(0.05));  // T0 = 1, not the 0.1-sigma beams
}
