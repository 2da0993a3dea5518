#include "rcod/grouping.hpp"

#include <algorithm>
#include <cmath>

namespace rcod {

MetricKind metric_kind_from_string(const std::string& s) {
    if (s == "cosine") return MetricKind::cosine;
    if (s == "l1") return MetricKind::l1;
    if (s == "mse") return MetricKind::mse;
    throw ConfigError("unknown metric kind: " + s);
}

int assign_timestep(double metric, const GroupingConfig& cfg) {
    cfg.validate();
    double u = (metric - cfg.m_min) / (cfg.m_max - cfg.m_min);
    u = std::min(1.0 - 1e-9, std::max(0.0, u));
    const int bucket = int(std::floor(double(cfg.groups) * u));
    return cfg.interval * (cfg.groups - bucket);
}

int das_sample(int t, const GroupingConfig& cfg, Rng& rng) {
    if (t < 1 || t > cfg.total_steps)
        throw ContractError("das_sample: timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(cfg.total_steps) + "]");
    int lo = std::max(20, t - cfg.interval);
    int hi = std::min(980, t + cfg.interval);
    if (hi < lo) hi = lo;  // tiny-interval degenerate window
    return int(rng.uniform_int(lo, hi));
}

std::pair<double, double> fit_bounds(const std::vector<double>& metrics, bool exact_extremes) {
    if (metrics.size() < 2) throw DegenerateInputError("fit_bounds: need at least 2 values");
    std::vector<double> sorted = metrics;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back())
        throw DegenerateInputError("fit_bounds: all metric values identical");
    double lo, hi;
    if (exact_extremes) {
        lo = sorted.front();
        hi = sorted.back();
    } else {
        const auto n = int64_t(sorted.size());
        const auto idx_lo = std::min<int64_t>(n - 1, int64_t(std::floor(0.01 * double(n))));
        const auto idx_hi = std::min<int64_t>(n - 1, int64_t(std::floor(0.99 * double(n))));
        lo = sorted[size_t(idx_lo)];
        hi = sorted[size_t(idx_hi)];
        if (!(lo < hi)) {  // heavy ties in the tails; fall back to extremes
            lo = sorted.front();
            hi = sorted.back();
        }
    }
    return {lo, hi};
}

}  // namespace rcod
