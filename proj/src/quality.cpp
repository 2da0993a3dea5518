#include "rcod/quality.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "rcod/errors.hpp"

using nlohmann::json;

namespace rcod {

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw DimensionError("psnr: shape mismatch");
    double mse = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        mse += d * d;
    }
    mse /= double(a.numel());
    if (mse == 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> to_gray(const Image& img) {
    std::vector<double> g(size_t(img.h) * img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double acc = 0;
            for (int c = 0; c < img.c; ++c) acc += img.at(y, x, c);
            g[size_t(y) * img.w + x] = acc / img.c;
        }
    return g;
}

std::vector<double> ssim_kernel() {
    std::vector<double> k(kSsimWindow);
    double sum = 0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - (kSsimWindow - 1) / 2.0;
        k[size_t(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[size_t(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable valid-region Gaussian filtering: horizontal then vertical pass.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w,
                                 const std::vector<double>& k) {
    const int r = int(k.size());
    const int ow = w - r + 1, oh = h - r + 1;
    std::vector<double> tmp(size_t(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int i = 0; i < r; ++i) acc += k[size_t(i)] * img[size_t(y) * w + x + i];
            tmp[size_t(y) * ow + x] = acc;
        }
    std::vector<double> out(size_t(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int i = 0; i < r; ++i) acc += k[size_t(i)] * tmp[size_t(y + i) * ow + x];
            out[size_t(y) * ow + x] = acc;
        }
    return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw DimensionError("ssim: shape mismatch");
    if (a.h < kSsimWindow || a.w < kSsimWindow)
        throw DimensionError("ssim: image smaller than the 11x11 window");

    const auto ga = to_gray(a);
    const auto gb = to_gray(b);
    const int h = a.h, w = a.w;
    std::vector<double> aa(ga.size()), bb(ga.size()), ab(ga.size());
    for (size_t i = 0; i < ga.size(); ++i) {
        aa[i] = ga[i] * ga[i];
        bb[i] = gb[i] * gb[i];
        ab[i] = ga[i] * gb[i];
    }
    const auto k = ssim_kernel();
    const auto mu_a = filter_valid(ga, h, w, k);
    const auto mu_b = filter_valid(gb, h, w, k);
    const auto m_aa = filter_valid(aa, h, w, k);
    const auto m_bb = filter_valid(bb, h, w, k);
    const auto m_ab = filter_valid(ab, h, w, k);

    double total = 0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        const double va = m_aa[i] - mu_a[i] * mu_a[i];
        const double vb = m_bb[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        const double num = (2.0 * mu_a[i] * mu_b[i] + kC1) * (2.0 * cov + kC2);
        const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2);
        total += num / den;
    }
    return total / double(mu_a.size());
}

double sharpness(const Image& a) {
    if (a.h < 2 || a.w < 2) throw DimensionError("sharpness: image too small");
    double acc = 0;
    for (int c = 0; c < a.c; ++c) {
        for (int y = 0; y < a.h; ++y)
            for (int x = 0; x + 1 < a.w; ++x)
                acc += std::abs(double(a.at(y, x + 1, c)) - double(a.at(y, x, c)));
        for (int y = 0; y + 1 < a.h; ++y)
            for (int x = 0; x < a.w; ++x)
                acc += std::abs(double(a.at(y + 1, x, c)) - double(a.at(y, x, c)));
    }
    return acc / (double(a.h) * a.w * a.c);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    std::sort(order.begin(), order.end(), [&](size_t i, size_t j) { return v[i] < v[j]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double rank = (double(i) + double(j)) / 2.0 + 1.0;  // 1-based average rank
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DimensionError("spearman: length mismatch");
    if (x.size() < 3) throw DegenerateInputError("spearman: need at least 3 points");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double n = double(x.size());
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        throw DegenerateInputError("spearman: constant input has no rank ordering");
    return sxy / std::sqrt(sxx * syy);
}

namespace {

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double acc = 0;
    for (double x : v) acc += x;
    return acc / double(v.size());
}

}  // namespace

double MetricReport::psnr_mean() const { return mean_of(psnr_values); }
double MetricReport::ssim_mean() const { return mean_of(ssim_values); }
double MetricReport::sharpness_mean() const { return mean_of(sharpness_values); }

std::string MetricReport::to_json() const {
    json j{{"count", count()},
           {"psnr_mean", psnr_mean()},
           {"ssim_mean", ssim_mean()},
           {"sharpness_mean", sharpness_mean()},
           {"psnr", psnr_values},
           {"ssim", ssim_values},
           {"sharpness", sharpness_values}};
    return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& ex) {
        throw ParseError(std::string("metric report: ") + ex.what());
    }
    MetricReport r;
    r.psnr_values = j.at("psnr").get<std::vector<double>>();
    r.ssim_values = j.at("ssim").get<std::vector<double>>();
    r.sharpness_values = j.at("sharpness").get<std::vector<double>>();
    return r;
}

}  // namespace rcod
