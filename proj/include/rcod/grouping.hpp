#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rcod/errors.hpp"
#include "rcod/rng.hpp"
#include "rcod/tensor.hpp"

namespace rcod {

// Metric -> timestep bucketing configuration. Produced timesteps lie in
// {interval, 2*interval, ..., groups*interval}.
struct GroupingConfig {
    int groups = 3;        // n, at most 4
    int interval = 250;    // k
    double m_min = 0.0;    // corpus lower bound of the metric
    double m_max = 1.0;    // corpus upper bound
    int total_steps = 1000;

    void validate() const {
        if (groups < 1 || groups > 4) throw ConfigError("grouping: need 1 <= groups <= 4");
        if (interval < 1 || int64_t(interval) * groups > total_steps)
            throw ConfigError("grouping: need interval*groups <= total timesteps");
        if (!(m_min < m_max)) throw ConfigError("grouping: need m_min < m_max");
    }
};

enum class MetricKind { cosine, l1, mse };

MetricKind metric_kind_from_string(const std::string& s);

// Latent degradation metric between same-shape latents, flattened.
// cosine: normalized inner product; l1: mean absolute difference;
// mse: mean squared difference.
template <class F>
double latent_metric(const Tensor<F>& zl, const Tensor<F>& zh, MetricKind kind) {
    if (!zl.same_shape(zh)) throw DimensionError("latent_metric: shape mismatch");
    const size_t n = zl.data.size();
    switch (kind) {
        case MetricKind::cosine: {
            double dot = 0, na = 0, nb = 0;
            for (size_t i = 0; i < n; ++i) {
                dot += double(zl.data[i]) * double(zh.data[i]);
                na += double(zl.data[i]) * double(zl.data[i]);
                nb += double(zh.data[i]) * double(zh.data[i]);
            }
            na = std::sqrt(na);
            nb = std::sqrt(nb);
            if (na <= 1e-12 || nb <= 1e-12)
                throw DegenerateInputError("latent_metric: zero-norm input for cosine");
            return dot / (na * nb);
        }
        case MetricKind::l1: {
            double acc = 0;
            for (size_t i = 0; i < n; ++i) acc += std::abs(double(zl.data[i]) - double(zh.data[i]));
            return acc / double(n);
        }
        case MetricKind::mse: {
            double acc = 0;
            for (size_t i = 0; i < n; ++i) {
                const double d = double(zl.data[i]) - double(zh.data[i]);
                acc += d * d;
            }
            return acc / double(n);
        }
    }
    throw ContractError("latent_metric: unknown kind");
}

// t = k * (n - floor(n * u)) with u the normalized metric clamped to
// [0, 1 - 1e-9]; the clamp keeps the cleanest inputs in the fidelity bucket
// instead of the degenerate t = 0.
int assign_timestep(double metric, const GroupingConfig& cfg);

// Uniform integer from [max(20, t-k), min(980, t+k)], inclusive.
int das_sample(int t, const GroupingConfig& cfg, Rng& rng);

// Robust corpus bounds: 1st/99th percentiles by default, exact extremes on
// request.
std::pair<double, double> fit_bounds(const std::vector<double>& metrics,
                                     bool exact_extremes = false);

}  // namespace rcod
