#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rcod/degrade.hpp"
#include "rcod/quality.hpp"
#include "rcod/rng.hpp"

using namespace rcod;

static Image random_image(int h, int w, Rng& rng, int c = 1) {
    Image img(h, w, c);
    for (auto& v : img.data) v = float(rng.uniform());
    return img;
}

// ---------------------------------------------------------------------------
// PSNR
// ---------------------------------------------------------------------------

TEST_CASE("psnr identical images hit the cap") {
    Rng rng(1);
    auto a = random_image(8, 8, rng);
    CHECK(psnr(a, a) == 99.0);
}

TEST_CASE("psnr uniform difference of 0.1 is 20 dB") {
    Image a(8, 8, 1), b(8, 8, 1);
    for (auto& v : a.data) v = 0.4f;
    for (auto& v : b.data) v = 0.5f;
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));
}

TEST_CASE("psnr matches direct-MSE oracle") {
    Rng rng(2);
    auto a = random_image(12, 9, rng);
    auto b = random_image(12, 9, rng);
    double mse = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        mse += d * d;
    }
    mse /= double(a.numel());
    CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-9));
    CHECK(psnr(a, b) == psnr(b, a));
}

TEST_CASE("psnr shape mismatch") {
    Image a(4, 4, 1), b(4, 5, 1);
    CHECK_THROWS_AS((void)psnr(a, b), DimensionError);
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

// Direct per-window oracle: explicit Gaussian-weighted moments at every
// valid window position.
static double ssim_oracle(const Image& a, const Image& b) {
    const int win = 11;
    const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    std::vector<double> k(win);
    double ks = 0;
    for (int i = 0; i < win; ++i) {
        const double d = i - 5.0;
        k[size_t(i)] = std::exp(-d * d / (2 * sigma * sigma));
        ks += k[size_t(i)];
    }
    for (auto& v : k) v /= ks;
    auto gray = [](const Image& img, int y, int x) {
        double acc = 0;
        for (int c = 0; c < img.c; ++c) acc += img.at(y, x, c);
        return acc / img.c;
    };
    double total = 0;
    int np = 0;
    for (int y = 0; y + win <= a.h; ++y)
        for (int x = 0; x + win <= a.w; ++x) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    const double wgt = k[size_t(i)] * k[size_t(j)];
                    const double va = gray(a, y + i, x + j);
                    const double vb = gray(b, y + i, x + j);
                    ma += wgt * va;
                    mb += wgt * vb;
                    saa += wgt * va * va;
                    sbb += wgt * vb * vb;
                    sab += wgt * va * vb;
                }
            const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++np;
        }
    return total / np;
}

TEST_CASE("ssim of identical images is 1") {
    Rng rng(3);
    auto a = random_image(16, 16, rng);
    CHECK(std::abs(ssim(a, a) - 1.0) < 1e-9);
}

TEST_CASE("ssim of inverted checkerboard is negative") {
    Image a(16, 16, 1);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) a.at(y, x) = float((y / 2 + x / 2) % 2);
    Image b = a;
    for (auto& v : b.data) v = 1.f - v;
    CHECK(ssim(a, b) < 0.0);
}

TEST_CASE("ssim matches the per-window oracle") {
    Rng rng(4);
    auto a = random_image(20, 17, rng);
    auto b = a;
    for (auto& v : b.data) v = std::min(1.f, std::max(0.f, v + float(rng.normal() * 0.05)));
    CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-6);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
}

TEST_CASE("ssim on rgb uses the channel average") {
    Rng rng(5);
    auto a = random_image(14, 14, rng, 3);
    auto b = random_image(14, 14, rng, 3);
    CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-6);
}

TEST_CASE("ssim rejects tiny images") {
    Image a(8, 8, 1), b(8, 8, 1);
    CHECK_THROWS_AS((void)ssim(a, b), DimensionError);
}

// ---------------------------------------------------------------------------
// sharpness
// ---------------------------------------------------------------------------

TEST_CASE("sharpness of a constant image is zero") {
    Image a(10, 10, 1);
    for (auto& v : a.data) v = 0.5f;
    CHECK(sharpness(a) == 0.0);
}

TEST_CASE("sharpness of a diagonal step edge in closed form") {
    const int n = 16;
    Image a(n, n, 1);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) a.at(y, x) = x > y ? 1.f : 0.f;
    // one unit transition per row (horizontal) and per column (vertical),
    // minus the corner rows/cols that lack a neighbor: (n-1)/n^2 each
    const double want = 2.0 * double(n - 1) / double(n * n);
    CHECK(sharpness(a) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("blurring strictly decreases sharpness") {
    Rng rng(6);
    for (int i = 0; i < 20; ++i) {
        auto tex = synth_texture(32, rng);
        CHECK(sharpness(gaussian_blur(tex, 1.5)) < sharpness(tex));
    }
}

// ---------------------------------------------------------------------------
// spearman
// ---------------------------------------------------------------------------

TEST_CASE("spearman monotone and reversed sequences") {
    CHECK(spearman({1, 2, 3}, {10, 20, 30}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3}, {30, 20, 10}) == doctest::Approx(-1.0));
}

TEST_CASE("spearman matches rank-then-Pearson oracle") {
    Rng rng(7);
    std::vector<double> x, y;
    for (int i = 0; i < 50; ++i) {
        x.push_back(rng.uniform());
        y.push_back(rng.uniform());
    }
    // oracle: explicit midranks then Pearson
    auto rank_of = [](const std::vector<double>& v) {
        std::vector<double> r(v.size());
        for (size_t i = 0; i < v.size(); ++i) {
            double less = 0, equal = 0;
            for (size_t j = 0; j < v.size(); ++j) {
                if (v[j] < v[i]) ++less;
                if (v[j] == v[i]) ++equal;
            }
            r[i] = less + (equal + 1.0) / 2.0;
        }
        return r;
    };
    auto rx = rank_of(x);
    auto ry = rank_of(y);
    double mx = 0, my = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= double(rx.size());
    my /= double(ry.size());
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    const double want = sxy / std::sqrt(sxx * syy);
    CHECK(spearman(x, y) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("spearman handles ties via average ranks") {
    CHECK(spearman({1, 1, 2, 3}, {1, 1, 2, 3}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 2, 3}, {4, 5, 5, 9}) == doctest::Approx(1.0));
}

TEST_CASE("spearman invariant under strictly monotone transforms") {
    Rng rng(8);
    std::vector<double> x, y;
    for (int i = 0; i < 40; ++i) {
        x.push_back(rng.uniform(-3, 3));
        y.push_back(rng.uniform(-3, 3));
    }
    const double base = spearman(x, y);
    auto tx = x;
    for (auto& v : tx) v = std::exp(0.7 * v) + 2.0;
    auto ty = y;
    for (auto& v : ty) v = v * v * v + 0.1 * v;
    CHECK(spearman(tx, y) == doctest::Approx(base).epsilon(1e-12));
    CHECK(spearman(x, ty) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("spearman degenerate inputs") {
    CHECK_THROWS_AS((void)spearman({1, 2}, {1, 2, 3}), DimensionError);
    CHECK_THROWS_AS((void)spearman({1, 2}, {1, 2}), DegenerateInputError);
    CHECK_THROWS_AS((void)spearman({2, 2, 2}, {1, 2, 3}), DegenerateInputError);
}

// ---------------------------------------------------------------------------
// MetricReport
// ---------------------------------------------------------------------------

TEST_CASE("metric report JSON round trip") {
    MetricReport r;
    r.psnr_values = {20.0, 25.5};
    r.ssim_values = {0.8, 0.9};
    r.sharpness_values = {0.01, 0.02};
    auto text = r.to_json();
    auto back = MetricReport::from_json(text);
    CHECK(back.count() == 2);
    CHECK(back.psnr_mean() == doctest::Approx(22.75));
    CHECK(back.ssim_mean() == doctest::Approx(0.85));
}
