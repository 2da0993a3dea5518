#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rcod/grouping.hpp"
#include "rcod/rng.hpp"

using namespace rcod;

// Independent brute-force coding of the bucket map with the clamp, kept
// deliberately separate from the library implementation.
static int bucket_oracle(double m, int n, int k, double lo, double hi) {
    double u = (m - lo) / (hi - lo);
    if (u < 0.0) u = 0.0;
    if (u > 1.0 - 1e-9) u = 1.0 - 1e-9;
    int floor_term = 0;
    while (double(floor_term + 1) <= double(n) * u) ++floor_term;
    return k * (n - floor_term);
}

TEST_CASE("latent_metric identical vectors give cosine 1") {
    TensorF z({4}, {0.5f, -1.f, 2.f, 0.25f});
    CHECK(latent_metric(z, z, MetricKind::cosine) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("latent_metric hand geometry") {
    TensorF a({2}, {1.f, 0.f});
    TensorF b({2}, {0.f, 1.f});
    TensorF c({2}, {1.f, 1.f});
    CHECK(latent_metric(a, b, MetricKind::cosine) == doctest::Approx(0.0));
    CHECK(latent_metric(a, c, MetricKind::cosine) == doctest::Approx(0.70710678).epsilon(1e-6));
}

TEST_CASE("latent_metric matches flat dot/norm oracle") {
    Rng rng(5);
    auto a = TensorD::randn({3, 4, 4}, rng);
    auto b = TensorD::randn({3, 4, 4}, rng);
    double dot = 0, na = 0, nb = 0, l1 = 0, mse = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        dot += a.data[i] * b.data[i];
        na += a.data[i] * a.data[i];
        nb += b.data[i] * b.data[i];
        l1 += std::abs(a.data[i] - b.data[i]);
        mse += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    }
    CHECK(latent_metric(a, b, MetricKind::cosine) ==
          doctest::Approx(dot / std::sqrt(na * nb)).epsilon(1e-6));
    CHECK(latent_metric(a, b, MetricKind::l1) ==
          doctest::Approx(l1 / double(a.numel())).epsilon(1e-6));
    CHECK(latent_metric(a, b, MetricKind::mse) ==
          doctest::Approx(mse / double(a.numel())).epsilon(1e-6));
}

TEST_CASE("latent_metric cosine scale invariance") {
    Rng rng(9);
    auto a = TensorD::randn({20}, rng);
    auto b = TensorD::randn({20}, rng);
    const double base = latent_metric(a, b, MetricKind::cosine);
    for (double c : {1e-3, 0.7, 3.0, 250.0}) {
        auto scaled = a;
        for (auto& v : scaled.data) v *= c;
        CHECK(std::abs(latent_metric(scaled, b, MetricKind::cosine) - base) < 1e-6);
    }
}

TEST_CASE("latent_metric degenerate input") {
    TensorF z({3}, {1.f, 2.f, 3.f});
    TensorF zero({3});
    CHECK_THROWS_AS((void)latent_metric(z, zero, MetricKind::cosine), DegenerateInputError);
    TensorF other({4});
    CHECK_THROWS_AS((void)latent_metric(z, other, MetricKind::l1), DimensionError);
}

TEST_CASE("assign_timestep direct evaluations") {
    GroupingConfig cfg;  // n=3, k=250, bounds (0,1)
    CHECK(assign_timestep(0.95, cfg) == 250);
    CHECK(assign_timestep(0.5, cfg) == 500);
    CHECK(assign_timestep(0.1, cfg) == 750);
    CHECK(assign_timestep(1.0, cfg) == 250);   // clamped, never t=0
    CHECK(assign_timestep(1.7, cfg) == 250);   // above-range metric absorbed
    CHECK(assign_timestep(-0.3, cfg) == 750);  // below-range metric absorbed
}

TEST_CASE("assign_timestep matches brute force over grid and group counts") {
    for (int n = 1; n <= 4; ++n) {
        GroupingConfig cfg;
        cfg.groups = n;
        cfg.interval = 250;
        cfg.m_min = -0.25;
        cfg.m_max = 0.9;
        for (int i = 0; i < 10000; ++i) {
            const double m = -0.5 + 1.6 * double(i) / 9999.0;
            CHECK(assign_timestep(m, cfg) == bucket_oracle(m, n, 250, -0.25, 0.9));
        }
    }
}

TEST_CASE("assign_timestep monotone non-increasing and in codomain") {
    Rng rng(21);
    GroupingConfig cfg;
    std::vector<double> ms;
    for (int i = 0; i < 100; ++i) ms.push_back(rng.uniform(-0.5, 1.5));
    std::sort(ms.begin(), ms.end());
    int prev = 1 << 30;
    for (double m : ms) {
        const int t = assign_timestep(m, cfg);
        CHECK(t <= prev);
        CHECK(t % cfg.interval == 0);
        CHECK(t >= cfg.interval);
        CHECK(t <= cfg.interval * cfg.groups);
        prev = t;
    }
}

TEST_CASE("grouping config validation") {
    GroupingConfig bad;
    bad.groups = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = GroupingConfig{};
    bad.interval = 300;
    bad.groups = 4;  // 1200 > 1000
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = GroupingConfig{};
    bad.m_min = 1.0;
    bad.m_max = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("das_sample windows per Eq.-style clamping") {
    GroupingConfig cfg;
    Rng rng(33);
    for (int i = 0; i < 2000; ++i) {
        const int a = das_sample(250, cfg, rng);
        CHECK(a >= 20);
        CHECK(a <= 500);
        const int b = das_sample(750, cfg, rng);
        CHECK(b >= 500);
        CHECK(b <= 980);
        const int c = das_sample(500, cfg, rng);
        CHECK(c >= 250);
        CHECK(c <= 750);
    }
    CHECK_THROWS_AS((void)das_sample(0, cfg, rng), ContractError);
    CHECK_THROWS_AS((void)das_sample(1001, cfg, rng), ContractError);
}

TEST_CASE("das_sample is uniform over the window (Monte Carlo)") {
    GroupingConfig cfg;
    Rng rng(55);
    const int n = 100000;
    const int lo = 250, hi = 750;  // t=500 window
    const int span = hi - lo + 1;
    std::vector<int> counts(10, 0);
    bool saw_lo = false, saw_hi = false;
    for (int i = 0; i < n; ++i) {
        const int v = das_sample(500, cfg, rng);
        saw_lo = saw_lo || v == lo;
        saw_hi = saw_hi || v == hi;
        const int bin = std::min(9, (v - lo) * 10 / span);
        ++counts[size_t(bin)];
    }
    CHECK(saw_lo);
    CHECK(saw_hi);
    for (int b = 0; b < 10; ++b) {
        // exact per-bin probability from the integer counts in the bin
        int nvals = 0;
        for (int v = lo; v <= hi; ++v)
            if (std::min(9, (v - lo) * 10 / span) == b) ++nvals;
        const double p = double(nvals) / span;
        const double se = std::sqrt(p * (1 - p) / n);
        CHECK(std::abs(double(counts[size_t(b)]) / n - p) <= 3.0 * se);
    }
}

TEST_CASE("fit_bounds small set degenerates to extremes") {
    auto [lo, hi] = fit_bounds({0.1, 0.5, 0.9});
    CHECK(lo == doctest::Approx(0.1));
    CHECK(hi == doctest::Approx(0.9));
}

TEST_CASE("fit_bounds percentiles on uniform samples") {
    Rng rng(77);
    std::vector<double> vals;
    for (int i = 0; i < 10000; ++i) vals.push_back(rng.uniform());
    auto [lo, hi] = fit_bounds(vals);
    CHECK(std::abs(lo - 0.01) < 0.01);
    CHECK(std::abs(hi - 0.99) < 0.01);

    // sorted-array oracle with the same nearest-rank definition
    std::vector<double> sorted = vals;
    std::sort(sorted.begin(), sorted.end());
    CHECK(lo == sorted[size_t(std::floor(0.01 * 10000))]);
    CHECK(hi == sorted[size_t(std::floor(0.99 * 10000))]);

    auto [elo, ehi] = fit_bounds(vals, true);
    CHECK(elo == sorted.front());
    CHECK(ehi == sorted.back());
}

TEST_CASE("fit_bounds rejects constant corpus") {
    CHECK_THROWS_AS((void)fit_bounds({0.5, 0.5, 0.5}), DegenerateInputError);
    CHECK_THROWS_AS((void)fit_bounds({0.5}), DegenerateInputError);
}
