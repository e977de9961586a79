#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "kfp/runner.hpp"

using namespace kfp;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "kfp_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("example1 run emits diagnostics with a populated drift-error column") {
    const auto dir = fresh_dir("ex1");
    RunConfig cfg;
    cfg.preset = "example1_1d";
    cfg.overrides = {{"n_particles", "300"}, {"t_final", "0.5"}, {"inner_iters", "30"}};
    cfg.output_dir = dir.string();
    CHECK(run(cfg) == 0);
    const std::string csv = slurp(dir / "diagnostics.csv");
    CHECK(csv.rfind("step,time,loss,energy,kl,drift_error\n", 0) == 0);
    // 5 steps -> 6 lines including the header, each with a drift value
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    int rows = 0;
    while (std::getline(is, line)) {
        ++rows;
        const auto last_comma = line.rfind(',');
        CHECK(last_comma + 1 < line.size());  // drift_error cell non-empty
    }
    CHECK(rows == 5);
    CHECK(fs::exists(dir / "manifest.json"));
}

TEST_CASE("vpfp run emits the field-energy schema on the 128-cell mesh") {
    const auto dir = fresh_dir("vpfp");
    RunConfig cfg;
    cfg.preset = "vpfp_1d1v_eps10";
    cfg.overrides = {{"n_particles", "2000"}, {"n_steps", "10"}, {"inner_iters", "5"},
                     {"snapshot_every", "5"}};
    cfg.output_dir = dir.string();
    CHECK(run(cfg) == 0);
    const std::string csv = slurp(dir / "diagnostics.csv");
    CHECK(csv.rfind("step,time,field_energy,loss\n", 0) == 0);
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 10);
    CHECK(fs::exists(dir / "snapshots" / "hist_000005.csv"));
    CHECK(fs::exists(dir / "snapshots" / "hist_000010.csv"));
    const std::string hist = slurp(dir / "snapshots" / "hist_000010.csv");
    CHECK(hist.rfind("t,", 0) == 0);
    CHECK(hist.find(",nx,128,nv,128,vmin,-3,vmax,3") != std::string::npos);
    const auto setup = resolve_preset("vpfp_1d1v_eps10");
    CHECK(setup.grid_nx == 128);
}

TEST_CASE("identical configs produce byte-identical diagnostics") {
    const auto dir1 = fresh_dir("det1");
    const auto dir2 = fresh_dir("det2");
    for (const auto& dir : {dir1, dir2}) {
        RunConfig cfg;
        cfg.preset = "example2";
        cfg.overrides = {{"n_particles", "400"}, {"t_final", "0.5"}, {"inner_iters", "20"}};
        cfg.output_dir = dir.string();
        CHECK(run(cfg) == 0);
    }
    CHECK(slurp(dir1 / "diagnostics.csv") == slurp(dir2 / "diagnostics.csv"));
}

TEST_CASE("re-running from a manifest reproduces the diagnostics bytes") {
    const auto dir1 = fresh_dir("man1");
    RunConfig cfg;
    cfg.preset = "example3_periodic";
    cfg.overrides = {{"n_particles", "300"}, {"t_final", "0.4"}, {"inner_iters", "15"},
                     {"seed", "9"}};
    cfg.output_dir = dir1.string();
    CHECK(run(cfg) == 0);

    const auto dir2 = fresh_dir("man2");
    RunConfig replay = run_config_from_manifest((dir1 / "manifest.json").string());
    replay.output_dir = dir2.string();
    CHECK(run(replay) == 0);
    CHECK(slurp(dir1 / "diagnostics.csv") == slurp(dir2 / "diagnostics.csv"));
}

TEST_CASE("unknown presets and override keys are rejected") {
    RunConfig cfg;
    cfg.preset = "not_an_experiment";
    cfg.output_dir = fresh_dir("bad").string();
    CHECK_THROWS_AS(run(cfg), std::invalid_argument);

    auto setup = resolve_preset("example2");
    CHECK_THROWS_AS(apply_override(setup, "particles", "100"), std::invalid_argument);
    CHECK_THROWS_AS(apply_override(setup, "dt", "abc"), std::invalid_argument);
    CHECK_NOTHROW(apply_override(setup, "n_particles", "100"));
}

TEST_CASE("snapshot files carry the ensemble header") {
    const auto dir = fresh_dir("snap");
    RunConfig cfg;
    cfg.preset = "example2";
    cfg.overrides = {{"n_particles", "100"}, {"t_final", "0.3"}, {"inner_iters", "5"},
                     {"snapshot_every", "3"}};
    cfg.output_dir = dir.string();
    CHECK(run(cfg) == 0);
    const std::string snap = slurp(dir / "snapshots" / "particles_000003.csv");
    CHECK(snap.rfind("100,1,1,", 0) == 0);
    std::istringstream is(snap);
    std::string line;
    std::getline(is, line);
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 100);
}

TEST_CASE("preset defaults resolve to the documented step counts") {
    const auto ex1 = resolve_preset("example1_1d");
    CHECK(ex1.jko.n_steps == 80);  // dt = 0.1 to T = 8
    CHECK(ex1.jko.dt == doctest::Approx(0.1));
    const auto vpfp = resolve_preset("vpfp_1d1v_eps5e-3");
    CHECK(vpfp.jko.n_steps == 400);  // dt = 1e-2 to T = 4
    CHECK(vpfp.grid_nx == 128);
    CHECK(vpfp.epsilon == doctest::Approx(0.005));
    const auto ex2 = resolve_preset("example2");
    CHECK(ex2.jko.n_steps == 100);
}

TEST_CASE("3d presets run end to end at toy scale") {
    auto ex4 = resolve_preset("example4_3d");
    ex4.n_particles = 400;
    apply_override(ex4, "t_final", "0.2");
    apply_override(ex4, "inner_iters", "10");
    const auto res = execute_linear(ex4, Method::KineticJko);
    CHECK(res.records.size() == 2);
    CHECK(res.records.back().kl.has_value());
    CHECK(res.final_ensemble.dim_x == 3);

    auto ex13 = resolve_preset("example1_3d");
    ex13.n_particles = 400;
    apply_override(ex13, "t_final", "0.2");
    apply_override(ex13, "inner_iters", "10");
    const auto res13 = execute_linear(ex13, Method::KineticJko);
    CHECK(res13.records.back().drift_error.has_value());

    auto v3 = resolve_preset("vpfp_1d3v_eps10");
    v3.n_particles = 800;
    apply_override(v3, "n_steps", "4");
    apply_override(v3, "inner_iters", "5");
    const auto resv = execute_vpfp(v3);
    CHECK(resv.records.size() == 4);
    CHECK(resv.final_ensemble.dim_v == 3);
}

TEST_CASE("splitting method runs through the runner") {
    auto setup = resolve_preset("example2");
    setup.n_particles = 300;
    apply_override(setup, "t_final", "0.5");
    apply_override(setup, "inner_iters", "15");
    apply_override(setup, "variant", "symplectic_euler");
    const auto res = execute_linear(setup, Method::SplitJko);
    CHECK(res.records.size() == 5);
    for (const auto& r : res.records) CHECK(r.energy.has_value());
}

TEST_CASE("log-log slope fit recovers synthetic first order exactly") {
    std::vector<std::pair<double, double>> pts;
    for (double dt : {0.2, 0.1, 0.05, 0.025}) pts.emplace_back(dt, 0.37 * dt);
    CHECK(fit_loglog_slope(pts) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<std::pair<double, double>> quad;
    for (double dt : {0.2, 0.1, 0.05}) quad.emplace_back(dt, 2.0 * dt * dt);
    CHECK(fit_loglog_slope(quad) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("degenerate single-dt sweep returns one row and no slope") {
    const auto res = convergence_sweep(
        "example1_1d", {0.2}, {1},
        {{"n_particles", "200"}, {"t_final", "0.4"}, {"inner_iters", "20"}}, "");
    CHECK(res.rows.size() == 1);
    CHECK(!res.slope.has_value());
    CHECK(res.rows[0].mean_error > 0.0);
}

TEST_CASE("score baseline produces the same diagnostics schema") {
    const auto dir = fresh_dir("score");
    RunConfig cfg;
    cfg.preset = "example1_1d_comparison";
    cfg.method = Method::ScoreBaseline;
    cfg.overrides = {{"n_particles", "300"}, {"t_final", "0.5"}, {"inner_iters", "20"}};
    cfg.output_dir = dir.string();
    CHECK(run(cfg) == 0);
    const std::string csv = slurp(dir / "diagnostics.csv");
    CHECK(csv.rfind("step,time,loss,energy,kl,drift_error\n", 0) == 0);
}
