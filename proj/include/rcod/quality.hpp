#pragma once

#include <string>
#include <vector>

#include "rcod/image.hpp"

namespace rcod {

// 10*log10(1/MSE) for [0,1] images; identical images return the 99 dB cap.
double psnr(const Image& a, const Image& b);

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), C1=(0.01)^2,
// C2=(0.03)^2, luminance only (RGB averaged to gray), valid windows only.
double ssim(const Image& a, const Image& b);

// Mean magnitude of first-order forward differences, both directions,
// normalized by the pixel count. No-reference sharpness proxy.
double sharpness(const Image& a);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct MetricReport {
    std::vector<double> psnr_values;
    std::vector<double> ssim_values;
    std::vector<double> sharpness_values;

    int count() const { return int(psnr_values.size()); }
    double psnr_mean() const;
    double ssim_mean() const;
    double sharpness_mean() const;

    std::string to_json() const;
    static MetricReport from_json(const std::string& text);
};

}  // namespace rcod
