#include "rcod/schedule.hpp"

#include <cmath>

namespace rcod {

Schedule build_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 2) throw ConfigError("schedule: need at least 2 timesteps");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ConfigError("schedule: require 0 < beta_start <= beta_end < 1");

    Schedule s;
    s.steps = steps;
    s.beta.assign(size_t(steps) + 1, 0.0);
    s.alpha_cum.assign(size_t(steps) + 1, 1.0);
    s.sigma.assign(size_t(steps) + 1, 0.0);

    for (int t = 1; t <= steps; ++t) {
        s.beta[size_t(t)] = beta_start + (beta_end - beta_start) * double(t - 1) / double(steps - 1);
        s.alpha_cum[size_t(t)] = s.alpha_cum[size_t(t) - 1] * std::sqrt(1.0 - s.beta[size_t(t)]);
        s.sigma[size_t(t)] = std::sqrt(1.0 - s.alpha_cum[size_t(t)] * s.alpha_cum[size_t(t)]);
    }

    for (int t = 1; t <= steps; ++t) {
        const double a = s.alpha_cum[size_t(t)], sg = s.sigma[size_t(t)];
        if (std::abs(a * a + sg * sg - 1.0) > 1e-6)
            throw ConfigError("schedule: alpha_cum^2 + sigma^2 identity violated");
        if (t > 1 && !(a < s.alpha_cum[size_t(t) - 1]))
            throw ConfigError("schedule: alpha_cum must be strictly decreasing");
        if (t > 1 && !(sg > s.sigma[size_t(t) - 1]))
            throw ConfigError("schedule: sigma must be strictly increasing");
    }
    return s;
}

}  // namespace rcod
