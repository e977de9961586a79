// Experiment execution: preset resolution, deterministic runs, CSV
// diagnostics, snapshots, manifests, and the time-step convergence sweep.

#ifndef KFP_RUNNER_HPP
#define KFP_RUNNER_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kfp/jko.hpp"
#include "kfp/pic.hpp"
#include "kfp/presets.hpp"

namespace kfp {

enum class Method { KineticJko, SplitJko, ScoreBaseline };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct RunConfig {
    std::string preset;
    std::vector<std::pair<std::string, std::string>> overrides;
    std::string output_dir;
    Method method = Method::KineticJko;
};

/// Full-precision decimal formatting (17 significant digits).
std::string format_double(double v);

/// Per-step oracle hook bound to the preset's exact solution (Gaussian
/// moments or stationary density); empty when no oracle is registered.
LinearRunHooks make_oracle_hooks(const ExperimentSetup& setup);

/// In-memory execution of a resolved linear/baseline setup.
LinearRunResult execute_linear(const ExperimentSetup& setup, Method method,
                               const LinearRunHooks& extra_hooks = {});
/// In-memory execution of a PIC coupled setup.
VpfpRunResult execute_vpfp(const ExperimentSetup& setup,
                           const VpfpRunHooks& hooks = {});

void write_diagnostics_csv(const std::string& path, const std::vector<DiagnosticsRecord>& records,
                           bool vpfp_schema);
void write_ensemble_snapshot(const std::string& path, const ParticleEnsemble& ens, double time);
void write_histogram_snapshot(const std::string& path, const PhaseHistogram& hist, double time);

/// Runs a configured experiment and emits diagnostics.csv, snapshots/,
/// and manifest.json under output_dir. Returns the process exit status.
int run(const RunConfig& config);

/// Reconstructs the run configuration recorded in a manifest.
RunConfig run_config_from_manifest(const std::string& manifest_path);

/// Mean drift error over the recorded steps of one run.
double time_averaged_drift_error(const ExperimentSetup& setup, Method method);

struct SweepRow {
    double dt = 0.0;
    double mean_error = 0.0;
    double stderr_error = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::optional<double> slope;  // least-squares slope of log(err) vs log(dt)
};

SweepResult convergence_sweep(const std::string& preset, const std::vector<double>& dts,
                              const std::vector<std::uint64_t>& seeds,
                              const std::vector<std::pair<std::string, std::string>>& overrides,
                              const std::string& output_dir);

/// Least-squares slope of log(y) against log(x).
double fit_loglog_slope(const std::vector<std::pair<double, double>>& points);

}  // namespace kfp

#endif
