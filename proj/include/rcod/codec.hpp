#pragma once

#include <cmath>
#include <vector>

#include "rcod/errors.hpp"
#include "rcod/image.hpp"
#include "rcod/tensor.hpp"

namespace rcod {

// Exactly invertible pixel<->latent codec: space-to-depth rearrangement
// (each r x r block becomes r^2 channels) followed by a per-channel
// power-of-two scale. Scales are powers of two and there is no shift, which
// is what makes the round trip bit-exact and encode linear; see fit().
class LatentCodec {
public:
    LatentCodec() = default;

    static LatentCodec identity(int image_channels, int factor = 2) {
        LatentCodec c;
        c.factor_ = factor;
        c.scale_.assign(size_t(image_channels) * factor * factor, 1.0);
        return c;
    }

    // Freezes per-channel scales from a corpus: nearest power of two to
    // 1/std so latent magnitudes sit near unit scale. A shift term is
    // deliberately absent: encode must be linear and bit-exactly invertible,
    // and any nonzero shift breaks both in float arithmetic.
    static LatentCodec fit(const std::vector<Image>& corpus, int factor = 2);

    static LatentCodec from_scales(std::vector<double> scales, int factor) {
        LatentCodec c;
        c.factor_ = factor;
        c.scale_ = std::move(scales);
        return c;
    }

    int factor() const { return factor_; }
    int latent_channels() const { return int(scale_.size()); }
    int image_channels() const { return int(scale_.size()) / (factor_ * factor_); }
    const std::vector<double>& scales() const { return scale_; }

    template <class F>
    Tensor<F> encode(const Image& x) const {
        const int r = factor_;
        if (x.h % r != 0 || x.w % r != 0)
            throw DimensionError("encode: image dims must be divisible by the codec factor");
        if (x.c != image_channels())
            throw DimensionError("encode: image channel count does not match codec");
        const int lh = x.h / r, lw = x.w / r;
        Tensor<F> z({int(scale_.size()), lh, lw});
        for (int c = 0; c < x.c; ++c)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const int lc = (c * r + dy) * r + dx;
                    const F s = F(scale_[size_t(lc)]);
                    for (int y = 0; y < lh; ++y)
                        for (int xx = 0; xx < lw; ++xx)
                            z.at(lc, y, xx) = F(x.at(y * r + dy, xx * r + dx, c)) * s;
                }
        return z;
    }

    template <class F>
    Image decode(const Tensor<F>& z) const {
        const int r = factor_;
        if (z.ndim() != 3 || z.dim(0) != int(scale_.size()))
            throw DimensionError("decode: latent channels do not match codec");
        const int lh = z.dim(1), lw = z.dim(2);
        Image x(lh * r, lw * r, image_channels());
        for (int c = 0; c < x.c; ++c)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const int lc = (c * r + dy) * r + dx;
                    const F inv = F(1.0 / scale_[size_t(lc)]);
                    for (int y = 0; y < lh; ++y)
                        for (int xx = 0; xx < lw; ++xx)
                            x.at(y * r + dy, xx * r + dx, c) = float(z.at(lc, y, xx) * inv);
                }
        return x;
    }

private:
    int factor_ = 2;
    std::vector<double> scale_;
};

}  // namespace rcod
