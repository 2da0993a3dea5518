#include "rcod/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "rcod/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rcod {

void DegradationParams::validate() const {
    if (blur_sigma < 0.0 || blur_sigma > 3.0)
        throw ConfigError("degradation: blur_sigma outside [0, 3]");
    if (noise_sigma < 0.0 || noise_sigma > 25.0 / 255.0 + 1e-12)
        throw ConfigError("degradation: noise_sigma outside [0, 25/255]");
    if (scale < 1) throw ConfigError("degradation: scale must be >= 1");
}

namespace {

// Half-sample symmetric reflection: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
int reflect(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

std::vector<float> gaussian_kernel(double sigma) {
    const int radius = int(std::ceil(3.0 * sigma));
    std::vector<float> k(size_t(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-double(i) * i / (2.0 * sigma * sigma));
        k[size_t(i + radius)] = float(v);
        sum += v;
    }
    for (auto& v : k) v = float(v / sum);
    return k;
}

}  // namespace

Image gaussian_blur(const Image& x, double sigma) {
    if (sigma <= 0.0) return x;
    const auto k = gaussian_kernel(sigma);
    const int radius = int(k.size() / 2);

    Image tmp(x.h, x.w, x.c);
    for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx)
            for (int c = 0; c < x.c; ++c) {
                float acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[size_t(i + radius)] * x.at(y, reflect(xx + i, x.w), c);
                tmp.at(y, xx, c) = acc;
            }
    Image out(x.h, x.w, x.c);
    for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx)
            for (int c = 0; c < x.c; ++c) {
                float acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[size_t(i + radius)] * tmp.at(reflect(y + i, x.h), xx, c);
                out.at(y, xx, c) = acc;
            }
    return out;
}

Image resample_down(const Image& x, int factor) {
    if (factor == 1) return x;
    if (factor < 1 || x.h % factor != 0 || x.w % factor != 0)
        throw DimensionError("resample_down: dims must be divisible by the factor");
    Image out(x.h / factor, x.w / factor, x.c);
    const float inv = 1.f / float(factor * factor);
    for (int y = 0; y < out.h; ++y)
        for (int xx = 0; xx < out.w; ++xx)
            for (int c = 0; c < x.c; ++c) {
                float acc = 0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        acc += x.at(y * factor + dy, xx * factor + dx, c);
                out.at(y, xx, c) = acc * inv;
            }
    return out;
}

Image resample_up(const Image& x, int factor) {
    if (factor == 1) return x;
    if (factor < 1) throw DimensionError("resample_up: factor must be >= 1");
    Image out(x.h * factor, x.w * factor, x.c);
    for (int y = 0; y < out.h; ++y) {
        const double sy = (double(y) + 0.5) / factor - 0.5;
        const int y0 = int(std::floor(sy));
        const double fy = sy - y0;
        const int ya = std::clamp(y0, 0, x.h - 1);
        const int yb = std::clamp(y0 + 1, 0, x.h - 1);
        for (int xx = 0; xx < out.w; ++xx) {
            const double sx = (double(xx) + 0.5) / factor - 0.5;
            const int x0 = int(std::floor(sx));
            const double fx = sx - x0;
            const int xa = std::clamp(x0, 0, x.w - 1);
            const int xb = std::clamp(x0 + 1, 0, x.w - 1);
            for (int c = 0; c < x.c; ++c) {
                const double top = (1.0 - fx) * x.at(ya, xa, c) + fx * x.at(ya, xb, c);
                const double bot = (1.0 - fx) * x.at(yb, xa, c) + fx * x.at(yb, xb, c);
                out.at(y, xx, c) = float((1.0 - fy) * top + fy * bot);
            }
        }
    }
    return out;
}

PairedSample degrade(const Image& hr, const DegradationParams& params, uint64_t seed) {
    params.validate();
    if (hr.h % params.scale != 0 || hr.w % params.scale != 0)
        throw DimensionError("degrade: HR dims must be divisible by the scale");

    Image x = gaussian_blur(hr, params.blur_sigma);
    x = resample_down(x, params.scale);
    if (params.noise_sigma > 0.0) {
        Rng rng(seed);
        for (auto& v : x.data) v += float(params.noise_sigma * rng.normal());
    }
    x = clip01(std::move(x));
    if (params.quantize)
        for (auto& v : x.data) v = float(std::lround(v * 255.f)) / 255.f;
    x = clip01(resample_up(x, params.scale));

    PairedSample out;
    out.hr = hr;
    out.lr_up = std::move(x);
    out.params = params;
    out.seed = seed;
    return out;
}

Image synth_texture(int patch, Rng& rng) {
    Image tex(patch, patch, 1);
    // type mix favors content whose fine detail stays identifiable in the
    // degraded LR (sub-Nyquist sinusoids, coarse checkers); that keeps the
    // latent metric learnable from LR features alone
    const double u = rng.uniform();
    const int kind = u < 0.1 ? 0 : u < 0.6 ? 1 : u < 0.8 ? 2 : 3;
    switch (kind) {
        case 0: {  // band-limited noise
            for (auto& v : tex.data) v = float(rng.normal());
            tex = gaussian_blur(tex, 1.5);
            break;
        }
        case 1: {  // oriented sinusoid, kept below the x4 decimation Nyquist
            const double fx = rng.uniform(0.02, 0.11);
            const double fy = rng.uniform(0.02, 0.11);
            const double phase = rng.uniform(0.0, 6.283185307179586);
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    tex.at(y, x) =
                        float(std::sin(6.283185307179586 * (fx * x + fy * y) + phase));
            break;
        }
        case 2: {  // checkerboard; cells of 4+ survive the downsampling
            const int cell = int(rng.uniform_int(2, 4)) * 2;
            const int oy = int(rng.uniform_int(0, cell - 1));
            const int ox = int(rng.uniform_int(0, cell - 1));
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    tex.at(y, x) = ((y + oy) / cell + (x + ox) / cell) % 2 ? 1.f : -1.f;
            break;
        }
        default: {  // random axis-aligned rectangles
            const int count = int(rng.uniform_int(4, 8));
            for (int i = 0; i < count; ++i) {
                const int x0 = int(rng.uniform_int(0, patch - 2));
                const int y0 = int(rng.uniform_int(0, patch - 2));
                const int x1 = int(rng.uniform_int(x0 + 1, patch - 1));
                const int y1 = int(rng.uniform_int(y0 + 1, patch - 1));
                const float v = float(rng.uniform(-1.0, 1.0));
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x) tex.at(y, x) += v;
            }
            break;
        }
    }

    // center and normalize to [-1, 1], then place around mid-gray with a
    // per-image amplitude; amplitude diversity is what separates magnitude-
    // sensitive latent distances from the scale-free cosine metric. The
    // range keeps texture energy high relative to the mid-gray offset so the
    // cosine normalization is signal-driven rather than DC-driven.
    double mean = 0;
    for (float v : tex.data) mean += v;
    mean /= double(tex.numel());
    double peak = 1e-9;
    for (float v : tex.data) peak = std::max(peak, std::abs(double(v) - mean));
    const float amp = float(rng.uniform(0.3, 0.5));
    for (auto& v : tex.data) v = 0.5f + amp * float((double(v) - mean) / peak);
    return clip01(std::move(tex));
}

DegradationParams sample_degradation(Rng& rng, int scale) {
    DegradationParams p;
    p.blur_sigma = rng.uniform(0.2, 3.0);
    p.noise_sigma = rng.uniform(0.0, 25.0 / 255.0);
    p.scale = scale;
    p.quantize = rng.bernoulli(0.5);
    return p;
}

namespace {

std::string index_name(const char* prefix, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%06d.pgm", prefix, index);
    return buf;
}

json entry_to_json(const ManifestEntry& e) {
    return json{{"index", e.index},
                {"hr_path", e.hr_path},
                {"lr_path", e.lr_path},
                {"blur_sigma", e.params.blur_sigma},
                {"noise_sigma", e.params.noise_sigma},
                {"scale", e.params.scale},
                {"quantize", e.params.quantize},
                {"seed", e.seed}};
}

ManifestEntry entry_from_json(const json& j) {
    ManifestEntry e;
    e.index = j.at("index").get<int>();
    e.hr_path = j.at("hr_path").get<std::string>();
    e.lr_path = j.at("lr_path").get<std::string>();
    e.params.blur_sigma = j.at("blur_sigma").get<double>();
    e.params.noise_sigma = j.at("noise_sigma").get<double>();
    e.params.scale = j.at("scale").get<int>();
    e.params.quantize = j.at("quantize").get<bool>();
    e.seed = j.at("seed").get<uint64_t>();
    return e;
}

}  // namespace

std::vector<ManifestEntry> synth_corpus(const SynthConfig& cfg) {
    if (cfg.count < 0) throw ConfigError("synth_corpus: negative count");
    if (cfg.patch % cfg.scale != 0 || cfg.patch % 2 != 0)
        throw ConfigError("synth_corpus: patch must be divisible by the scale and the codec factor");
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (!fs::is_directory(cfg.out_dir))
        throw IoError("synth_corpus: cannot create output directory " + cfg.out_dir);

    std::vector<ManifestEntry> entries(size_t(cfg.count));
    parallel_for(cfg.count, cfg.threads, [&](int64_t i) {
        const uint64_t item_seed = derive_seed(cfg.seed, uint64_t(i));
        Rng rng(item_seed);
        Image hr = synth_texture(cfg.patch, rng);
        DegradationParams params = sample_degradation(rng, cfg.scale);
        PairedSample pair = degrade(hr, params, derive_seed(item_seed, 1));

        ManifestEntry e;
        e.index = int(i);
        e.hr_path = index_name("hr", int(i));
        e.lr_path = index_name("lr", int(i));
        e.params = params;
        e.seed = item_seed;
        save_image(pair.hr, (fs::path(cfg.out_dir) / e.hr_path).string());
        save_image(pair.lr_up, (fs::path(cfg.out_dir) / e.lr_path).string());
        entries[size_t(i)] = std::move(e);
    });

    const auto manifest_path = fs::path(cfg.out_dir) / "manifest.jsonl";
    std::ofstream out(manifest_path);
    if (!out) throw IoError("synth_corpus: cannot write " + manifest_path.string());
    for (const auto& e : entries) out << entry_to_json(e).dump() << "\n";
    return entries;
}

std::vector<ManifestEntry> load_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest: " + manifest_path);
    const auto dir = fs::path(manifest_path).parent_path();
    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& ex) {
            throw ParseError(manifest_path + ":" + std::to_string(lineno) + ": " + ex.what());
        }
        auto e = entry_from_json(j);
        e.hr_path = (dir / e.hr_path).string();
        e.lr_path = (dir / e.lr_path).string();
        entries.push_back(std::move(e));
    }
    return entries;
}

PairedSample load_pair(const ManifestEntry& e) {
    PairedSample p;
    p.hr = load_image(e.hr_path);
    p.lr_up = load_image(e.lr_path);
    p.params = e.params;
    p.seed = e.seed;
    return p;
}

}  // namespace rcod
