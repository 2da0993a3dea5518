#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rcod/image.hpp"
#include "rcod/rng.hpp"

namespace rcod {

struct DegradationParams {
    double blur_sigma = 0.2;   // [0.2, 3.0]
    double noise_sigma = 0.0;  // [0, 25/255]
    int scale = 4;
    bool quantize = false;

    void validate() const;
};

// HR patch plus its degraded counterpart re-upsampled to the HR grid.
struct PairedSample {
    Image hr;
    Image lr_up;
    DegradationParams params;
    uint64_t seed = 0;
};

// Separable Gaussian with reflect padding; kernel radius ceil(3*sigma),
// normalized to sum 1. sigma = 0 is the identity.
Image gaussian_blur(const Image& x, double sigma);

// down: area averaging over factor x factor blocks; up: bilinear.
Image resample_down(const Image& x, int factor);
Image resample_up(const Image& x, int factor);

// blur -> down -> additive Gaussian noise -> optional 8-bit quantization ->
// up; clipped to [0,1]. Deterministic for a fixed seed.
PairedSample degrade(const Image& hr, const DegradationParams& params, uint64_t seed);

// Procedural HR texture: band-limited noise, oriented sinusoids,
// checkerboards, or random polygons, centered at mid-gray.
Image synth_texture(int patch, Rng& rng);

DegradationParams sample_degradation(Rng& rng, int scale);

struct SynthConfig {
    int count = 0;
    int patch = 32;
    int scale = 4;
    uint64_t seed = 0;
    std::string out_dir;
    int threads = 1;
};

struct ManifestEntry {
    int index = 0;
    std::string hr_path;
    std::string lr_path;
    DegradationParams params;
    uint64_t seed = 0;
};

// Generates the corpus under cfg.out_dir and writes manifest.jsonl (one JSON
// object per line). Per-item seeds derive from cfg.seed and the index, so
// any worker count produces identical bytes.
std::vector<ManifestEntry> synth_corpus(const SynthConfig& cfg);

std::vector<ManifestEntry> load_manifest(const std::string& manifest_path);

// Loads the referenced image pair.
PairedSample load_pair(const ManifestEntry& e);

}  // namespace rcod
