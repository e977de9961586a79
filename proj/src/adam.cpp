#include "kfp/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace kfp {

void adam_step(AdamState& state, std::vector<double>& params, const std::vector<double>& grad) {
    const std::size_t n = params.size();
    if (grad.size() != n || state.first_moment.size() != n)
        throw std::invalid_argument("adam_step: gradient not congruent to parameters");
    for (double g : grad)
        if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient entry");

    state.step_count += 1;
    const AdamConfig& c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < n; ++i) {
        state.first_moment[i] = c.beta1 * state.first_moment[i] + (1.0 - c.beta1) * grad[i];
        state.second_moment[i] =
            c.beta2 * state.second_moment[i] + (1.0 - c.beta2) * grad[i] * grad[i];
        const double mhat = state.first_moment[i] / bc1;
        const double vhat = state.second_moment[i] / bc2;
        params[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.eps_hat);
    }
}

}  // namespace kfp
