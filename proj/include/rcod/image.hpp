#pragma once

#include <string>
#include <vector>

#include "rcod/errors.hpp"

namespace rcod {

// Pixel-domain image, row-major H x W x C with intensities in [0,1].
struct Image {
    int h = 0, w = 0, c = 1;
    std::vector<float> data;

    Image() = default;
    Image(int h_, int w_, int c_ = 1) : h(h_), w(w_), c(c_), data(size_t(h_) * w_ * c_, 0.f) {
        if (h_ <= 0 || w_ <= 0 || (c_ != 1 && c_ != 3))
            throw DimensionError("image dims must be positive with 1 or 3 channels");
    }

    float& at(int y, int x, int ch = 0) { return data[(size_t(y) * w + x) * c + ch]; }
    float at(int y, int x, int ch = 0) const { return data[(size_t(y) * w + x) * c + ch]; }

    int64_t numel() const { return int64_t(data.size()); }
    bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
};

// Binary PGM (P5) / PPM (P6) with maxval 255; intensities mapped by /255.
Image load_image(const std::string& path);
void save_image(const Image& img, const std::string& path);

Image clip01(Image img);

}  // namespace rcod
