#include "rcod/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include <json.hpp>

#include "rcod/losses.hpp"
#include "rcod/parallel.hpp"

using nlohmann::json;

namespace rcod {

int resolve_threads(int requested) {
    if (const char* env = std::getenv("RCOD_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? int(hw) : 1;
}

int realism_to_timestep(const std::string& realism, const GroupingConfig& grouping) {
    const int k = grouping.interval;
    if (realism == "fid") return k;
    if (realism == "neu") return std::min(2, grouping.groups) * k;
    if (realism == "real") return grouping.groups * k;
    if (realism.rfind("t=", 0) == 0) {
        int t = 0;
        try {
            t = std::stoi(realism.substr(2));
        } catch (const std::exception&) {
            throw ConfigError("bad explicit timestep: " + realism);
        }
        if (t < 1 || t > grouping.total_steps)
            throw ConfigError("explicit timestep " + std::to_string(t) + " outside [1, " +
                              std::to_string(grouping.total_steps) + "]");
        return t;
    }
    throw ConfigError("unknown realism mode: " + realism +
                      " (want fid|neu|real|adaptive|t=<int>)");
}

Image restore_image(const Params<float>& params, const DenoiserConfig& dcfg,
                    const PromptConfig& pcfg, const LatentCodec& codec, const Schedule& sched,
                    const Image& lr_up, int t, bool noise_inject, Rng& rng) {
    const auto z_l = codec.encode<float>(lr_up);
    TensorF z_in = noise_inject ? forward_diffuse(sched, z_l, t, rng).z_t : z_l;

    Tape<float> tape;
    ParamBinder<float> denoiser_pb{tape, params, "denoiser.", false};
    ParamBinder<float> prompt_pb{tape, params, "prompt.", false};
    const int tokens =
        prompt_forward(tape, pcfg, prompt_pb, tape.constant(image_to_tensor<float>(lr_up)));
    const int eps_id = denoiser_forward(tape, dcfg, denoiser_pb, tape.constant(z_in), t, tokens);
    const auto restored = one_step_restore(sched, z_in, tape.value(eps_id), t);
    return clip01(codec.decode(restored));
}

InferOutcome infer_image(const StudentBundle& student, const MemBundle* mem, const Image& lr_up,
                         const std::string& realism, uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    const Schedule sched = default_schedule();
    InferOutcome out;
    if (realism == "adaptive") {
        if (!mem) throw ConfigError("adaptive realism requires a MEM checkpoint");
        if (mem->cfg.bottleneck) {
            const auto feat = mem_bottleneck_features(mem->cfg, student.dcfg, student.pcfg,
                                                      student.params, mem->codec, lr_up);
            out.m_hat = mem_predict_features(mem->cfg, mem->params, "mem.", feat);
        } else {
            const auto z_l = mem->codec.encode<float>(lr_up);
            out.m_hat = mem_predict(mem->cfg, mem->params, "mem.", z_l);
        }
        out.t_used = assign_timestep(out.m_hat, mem->grouping);
        out.adaptive = true;
    } else {
        out.t_used = realism_to_timestep(realism, student.grouping);
    }
    Rng rng(seed);
    out.output = restore_image(student.params, student.dcfg, student.pcfg, student.codec, sched,
                               lr_up, out.t_used, student.noise_inject, rng);
    out.runtime_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    return out;
}

EvalOutcome evaluate(const StudentBundle& student, const MemBundle* mem,
                     const std::vector<ManifestEntry>& manifest,
                     const std::vector<std::string>& modes, uint64_t seed, int threads) {
    if (manifest.empty()) throw ConfigError("eval: empty manifest");
    if (modes.empty()) throw ConfigError("eval: no realism modes requested");

    EvalOutcome outcome;
    for (const auto& mode : modes) {
        struct Row {
            double psnr = 0, ssim = 0, sharp = 0;
        };
        std::vector<Row> rows(manifest.size());
        parallel_for(int64_t(manifest.size()), threads, [&](int64_t i) {
            auto pair = load_pair(manifest[size_t(i)]);
            auto inf = infer_image(student, mem, pair.lr_up, mode,
                                   derive_seed(seed, uint64_t(i)));
            rows[size_t(i)].psnr = psnr(inf.output, pair.hr);
            rows[size_t(i)].ssim = ssim(inf.output, pair.hr);
            rows[size_t(i)].sharp = sharpness(inf.output);
        });
        MetricReport report;
        for (const auto& r : rows) {
            report.psnr_values.push_back(r.psnr);
            report.ssim_values.push_back(r.ssim);
            report.sharpness_values.push_back(r.sharp);
        }
        outcome.modes.emplace(mode, std::move(report));
    }
    return outcome;
}

std::string eval_to_json(const EvalOutcome& outcome) {
    json modes = json::object();
    for (const auto& [mode, report] : outcome.modes) modes[mode] = json::parse(report.to_json());
    return json{{"modes", modes}}.dump(2);
}

EvalOutcome eval_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& ex) {
        throw ParseError(std::string("eval report: ") + ex.what());
    }
    if (!j.contains("modes") || !j.at("modes").is_object())
        throw ParseError("eval report: missing modes object");
    EvalOutcome out;
    for (const auto& [mode, rep] : j.at("modes").items())
        out.modes.emplace(mode, MetricReport::from_json(rep.dump()));
    return out;
}

}  // namespace rcod
