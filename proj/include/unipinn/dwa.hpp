#pragma once
// Dynamic weight allocation: per-flow relative improvement rates drive a
// temperature softmax, smoothed by an exponential moving average.  Weights
// stay at 1 through the warm-up (first two epochs).
//
// The sign of the softmax argument is configurable.  `prose` (default)
// softmaxes -r/tau so weight concentrates on the slowest-improving task as
// the temperature drops; `literal` softmaxes +r/tau, which favors the
// fastest-improving task instead.  Both are kept because the two published
// descriptions of the scheme disagree.

#include <cmath>
#include <string>
#include <vector>

#include "unipinn/errors.hpp"

namespace unipinn {

enum class DwaSign { literal, prose };
enum class DwaScale { sum_to_n, sum_to_1 };

struct DwaState {
    std::vector<double> prev_losses;      // L_i at the previous epoch
    std::vector<double> raw_weights;      // lambda_i
    std::vector<double> smoothed_weights; // lambda~_i
    double temperature = 2.0;
    double smoothing = 0.9;
    DwaSign sign_mode = DwaSign::prose;
    DwaScale scale_mode = DwaScale::sum_to_n;
    int epoch = 0; // advanced by the caller before update_weights

    static DwaState make(int n_flows, double tau = 2.0, double gamma = 0.9,
                         DwaSign sign = DwaSign::prose, DwaScale scale = DwaScale::sum_to_n) {
        DwaState s;
        s.raw_weights.assign(n_flows, 1.0);
        s.smoothed_weights.assign(n_flows, 1.0);
        s.temperature = tau;
        s.smoothing = gamma;
        s.sign_mode = sign;
        s.scale_mode = scale;
        return s;
    }
};

// One DWA step for the losses recorded at state.epoch.  Weights stay at 1 for
// the first two epochs; afterwards the improvement-rate softmax runs over all
// flows and the EMA smooths the result.
inline void update_weights(DwaState& state, const std::vector<double>& current_losses) {
    const int n = static_cast<int>(state.raw_weights.size());
    if (static_cast<int>(current_losses.size()) != n)
        throw std::invalid_argument("update_weights: loss count != flow count");
    if (state.temperature <= 0.0) throw config_error("DWA temperature must be positive");

    if (state.epoch <= 2 || state.prev_losses.empty()) {
        state.raw_weights.assign(n, 1.0);
        state.smoothed_weights.assign(n, 1.0);
        state.prev_losses = current_losses;
        return;
    }

    std::vector<double> rate(n, 0.0);
    for (int i = 0; i < n; ++i) {
        if (state.prev_losses[i] == 0.0) {
            log::warn("DWA: previous loss for flow " + std::to_string(i) +
                      " is zero; improvement rate treated as 0");
            rate[i] = 0.0;
        } else {
            rate[i] = (state.prev_losses[i] - current_losses[i]) / state.prev_losses[i];
        }
    }
    const double sign = state.sign_mode == DwaSign::literal ? 1.0 : -1.0;
    double max_score = -std::numeric_limits<double>::infinity();
    std::vector<double> score(n);
    for (int i = 0; i < n; ++i) {
        score[i] = sign * rate[i] / state.temperature;
        max_score = std::max(max_score, score[i]);
    }
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
        score[i] = std::exp(score[i] - max_score);
        z += score[i];
    }
    const double scale = state.scale_mode == DwaScale::sum_to_n ? static_cast<double>(n) : 1.0;
    for (int i = 0; i < n; ++i) state.raw_weights[i] = scale * score[i] / z;
    for (int i = 0; i < n; ++i)
        state.smoothed_weights[i] = state.smoothing * state.smoothed_weights[i] +
                                    (1.0 - state.smoothing) * state.raw_weights[i];
    state.prev_losses = current_losses;
}

// Weighted multi-flow total; the weights are constants with respect to the
// parameters (the gradient path runs through each per-flow loss seed).
inline double combine_total_loss(const std::vector<double>& smoothed_weights,
                                 const std::vector<double>& per_flow_losses) {
    if (smoothed_weights.size() != per_flow_losses.size())
        throw std::invalid_argument("combine_total_loss: size mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < smoothed_weights.size(); ++i)
        total += smoothed_weights[i] * per_flow_losses[i];
    return total;
}

} // namespace unipinn
