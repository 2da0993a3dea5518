#include "rcod/codec.hpp"

#include <cmath>

namespace rcod {

LatentCodec LatentCodec::fit(const std::vector<Image>& corpus, int factor) {
    if (corpus.empty()) throw DegenerateInputError("codec fit: empty corpus");
    const int c = corpus[0].c;
    const int lc = c * factor * factor;
    std::vector<double> sum(size_t(lc), 0.0), sum2(size_t(lc), 0.0);
    std::vector<int64_t> count(size_t(lc), 0);
    for (const auto& img : corpus) {
        if (img.c != c) throw DimensionError("codec fit: mixed channel counts in corpus");
        if (img.h % factor != 0 || img.w % factor != 0)
            throw DimensionError("codec fit: image dims must be divisible by the factor");
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x) {
                    const int k = (ch * factor + y % factor) * factor + x % factor;
                    const double v = img.at(y, x, ch);
                    sum[size_t(k)] += v;
                    sum2[size_t(k)] += v * v;
                    ++count[size_t(k)];
                }
    }
    std::vector<double> scales(size_t(lc), 1.0);
    for (int k = 0; k < lc; ++k) {
        const double n = double(count[size_t(k)]);
        const double mean = sum[size_t(k)] / n;
        const double var = std::max(0.0, sum2[size_t(k)] / n - mean * mean);
        const double sd = std::sqrt(var);
        if (sd > 1e-12) {
            int e = int(std::lround(std::log2(1.0 / sd)));
            e = std::min(6, std::max(-6, e));
            scales[size_t(k)] = std::exp2(double(e));
        }
    }
    LatentCodec codec;
    codec.factor_ = factor;
    codec.scale_ = std::move(scales);
    return codec;
}

}  // namespace rcod
