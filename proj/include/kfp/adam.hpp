// Adam with bias correction for the inner per-step optimization.

#ifndef KFP_ADAM_HPP
#define KFP_ADAM_HPP

#include <vector>

namespace kfp {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_hat = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    long step_count = 0;

    AdamState(std::size_t n_params, const AdamConfig& cfg)
        : config(cfg), first_moment(n_params, 0.0), second_moment(n_params, 0.0) {}
};

/// One bias-corrected update; increments step_count. Throws on non-finite
/// gradient entries.
void adam_step(AdamState& state, std::vector<double>& params, const std::vector<double>& grad);

}  // namespace kfp

#endif
