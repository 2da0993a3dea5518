#pragma once

#include <map>
#include <string>
#include <vector>

#include "rcod/degrade.hpp"
#include "rcod/quality.hpp"
#include "rcod/trainer.hpp"

namespace rcod {

// Maps a realism keyword to a timestep: fid -> k, neu -> 2k (capped),
// real -> n*k, or an explicit "t=<int>". "adaptive" is resolved by the
// caller via the MEM.
int realism_to_timestep(const std::string& realism, const GroupingConfig& grouping);

// One-step restoration of an LR image (already on the HR grid).
Image restore_image(const Params<float>& params, const DenoiserConfig& dcfg,
                    const PromptConfig& pcfg, const LatentCodec& codec, const Schedule& sched,
                    const Image& lr_up, int t, bool noise_inject, Rng& rng);

struct InferOutcome {
    Image output;
    int t_used = 0;
    bool adaptive = false;
    double m_hat = 0;  // valid when adaptive
    double runtime_ms = 0;
};

InferOutcome infer_image(const StudentBundle& student, const MemBundle* mem, const Image& lr_up,
                         const std::string& realism, uint64_t seed);

struct EvalOutcome {
    std::map<std::string, MetricReport> modes;
};

EvalOutcome evaluate(const StudentBundle& student, const MemBundle* mem,
                     const std::vector<ManifestEntry>& manifest,
                     const std::vector<std::string>& modes, uint64_t seed, int threads);

std::string eval_to_json(const EvalOutcome& outcome);
EvalOutcome eval_from_json(const std::string& text);

}  // namespace rcod
