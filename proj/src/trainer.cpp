#include "rcod/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "rcod/checkpoint.hpp"
#include "rcod/degrade.hpp"
#include "rcod/losses.hpp"
#include "rcod/parallel.hpp"
#include "rcod/pipeline.hpp"
#include "rcod/quality.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rcod {

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (steps <= 0) throw ConfigError("train config: steps must be positive");
    if (batch_size <= 0) throw ConfigError("train config: batch_size must be positive");
    if (learning_rate <= 0) throw ConfigError("train config: learning_rate must be positive");
    if (lambda_eps < 0 || lambda_pix < 0 || lambda_das < 0)
        throw ConfigError("train config: loss weights must be >= 0");
    GroupingConfig g;
    g.groups = groups;
    g.interval = interval;
    g.validate();
    if (corpus.empty()) throw ConfigError("train config: corpus manifest path is required");
}

TrainConfig train_config_from_json_text(const std::string& text, const TrainConfig& base) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& ex) {
        throw ParseError(std::string("train config: ") + ex.what());
    }
    if (!j.is_object()) throw ParseError("train config: top level must be a JSON object");
    TrainConfig cfg = base;
    for (const auto& [key, value] : j.items()) {
        if (key == "steps") cfg.steps = value.get<int>();
        else if (key == "batch_size") cfg.batch_size = value.get<int>();
        else if (key == "learning_rate") cfg.learning_rate = value.get<double>();
        else if (key == "adam_beta1") cfg.adam_beta1 = value.get<double>();
        else if (key == "adam_beta2") cfg.adam_beta2 = value.get<double>();
        else if (key == "adam_eps") cfg.adam_eps = value.get<double>();
        else if (key == "lambda_eps") cfg.lambda_eps = value.get<double>();
        else if (key == "lambda_pix") cfg.lambda_pix = value.get<double>();
        else if (key == "lambda_das") cfg.lambda_das = value.get<double>();
        else if (key == "groups") cfg.groups = value.get<int>();
        else if (key == "interval") cfg.interval = value.get<int>();
        else if (key == "exact_bounds") cfg.exact_bounds = value.get<bool>();
        else if (key == "noise_inject") cfg.noise_inject = value.get<bool>();
        else if (key == "seed") cfg.seed = value.get<uint64_t>();
        else if (key == "corpus") cfg.corpus = value.get<std::string>();
        else if (key == "val_corpus") cfg.val_corpus = value.get<std::string>();
        else if (key == "checkpoint_every") cfg.checkpoint_every = value.get<int>();
        else if (key == "val_every") cfg.val_every = value.get<int>();
        else if (key == "out_dir") cfg.out_dir = value.get<std::string>();
        else if (key == "threads") cfg.threads = value.get<int>();
        else throw ConfigError("train config: unknown key \"" + key + "\"");
    }
    return cfg;
}

TrainConfig train_config_from_file(const std::string& path, const TrainConfig& base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open train config: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return train_config_from_json_text(text, base);
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

void adam_step(Params<float>& params, const std::map<std::string, TensorF>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(beta2, double(state.step));
    for (const auto& [name, g] : grads) {
        auto pit = params.find(name);
        if (pit == params.end()) throw ContractError("adam: gradient for unknown parameter " + name);
        auto& m = state.m.try_emplace(name, TensorF::zeros(g.shape)).first->second;
        auto& v = state.v.try_emplace(name, TensorF::zeros(g.shape)).first->second;
        auto& p = pit->second;
        for (size_t i = 0; i < g.data.size(); ++i) {
            m.data[i] = float(beta1 * m.data[i] + (1.0 - beta1) * g.data[i]);
            v.data[i] = float(beta2 * v.data[i] + (1.0 - beta2) * double(g.data[i]) * g.data[i]);
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= float(lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

// ---------------------------------------------------------------------------
// checkpoint meta encoding
// ---------------------------------------------------------------------------

namespace {

TensorF meta_vec(const std::vector<double>& v) {
    TensorF t({int(v.size())});
    for (size_t i = 0; i < v.size(); ++i) t.data[i] = float(v[i]);
    return t;
}

void put_codec(std::map<std::string, TensorF>& out, const LatentCodec& codec) {
    out["meta.codec_factor"] = meta_vec({double(codec.factor())});
    out["meta.codec_scale"] = meta_vec(codec.scales());
}

LatentCodec get_codec(const std::map<std::string, TensorF>& in) {
    const auto& factor = in.at("meta.codec_factor");
    const auto& scales = in.at("meta.codec_scale");
    std::vector<double> s(scales.data.begin(), scales.data.end());
    return LatentCodec::from_scales(std::move(s), int(factor.data[0]));
}

void put_denoiser_cfg(std::map<std::string, TensorF>& out, const std::string& key,
                      const DenoiserConfig& cfg) {
    out[key] = meta_vec({double(cfg.latent_channels), double(cfg.base_channels),
                         double(cfg.levels), double(cfg.sinusoid_dim), double(cfg.t_embed_dim),
                         double(cfg.tokens), double(cfg.token_dim),
                         cfg.cross_attention ? 1.0 : 0.0});
}

DenoiserConfig get_denoiser_cfg(const std::map<std::string, TensorF>& in, const std::string& key) {
    const auto& v = in.at(key).data;
    DenoiserConfig cfg;
    cfg.latent_channels = int(v[0]);
    cfg.base_channels = int(v[1]);
    cfg.levels = int(v[2]);
    cfg.sinusoid_dim = int(v[3]);
    cfg.t_embed_dim = int(v[4]);
    cfg.tokens = int(v[5]);
    cfg.token_dim = int(v[6]);
    cfg.cross_attention = v[7] != 0.f;
    return cfg;
}

void put_prompt_cfg(std::map<std::string, TensorF>& out, const PromptConfig& cfg) {
    std::vector<double> v = {double(cfg.image_channels), double(cfg.tokens),
                             double(cfg.token_dim), double(cfg.channels.size())};
    for (int c : cfg.channels) v.push_back(double(c));
    out["meta.prompt_arch"] = meta_vec(v);
}

PromptConfig get_prompt_cfg(const std::map<std::string, TensorF>& in) {
    const auto& v = in.at("meta.prompt_arch").data;
    PromptConfig cfg;
    cfg.image_channels = int(v[0]);
    cfg.tokens = int(v[1]);
    cfg.token_dim = int(v[2]);
    cfg.channels.clear();
    for (int i = 0; i < int(v[3]); ++i) cfg.channels.push_back(int(v[size_t(4 + i)]));
    return cfg;
}

void put_mem_cfg(std::map<std::string, TensorF>& out, const MemConfig& cfg) {
    std::vector<double> v = {double(cfg.latent_channels), double(cfg.latent_size),
                             double(cfg.pool),            cfg.bottleneck ? 1.0 : 0.0,
                             double(cfg.bottleneck_channels), double(cfg.probe_t),
                             double(cfg.hidden.size())};
    for (int h : cfg.hidden) v.push_back(double(h));
    out["meta.mem_arch"] = meta_vec(v);
}

MemConfig get_mem_cfg(const std::map<std::string, TensorF>& in) {
    const auto& v = in.at("meta.mem_arch").data;
    MemConfig cfg;
    cfg.latent_channels = int(v[0]);
    cfg.latent_size = int(v[1]);
    cfg.pool = int(v[2]);
    cfg.bottleneck = v[3] != 0.f;
    cfg.bottleneck_channels = int(v[4]);
    cfg.probe_t = int(v[5]);
    cfg.hidden.clear();
    for (int i = 0; i < int(v[6]); ++i) cfg.hidden.push_back(int(v[size_t(7 + i)]));
    return cfg;
}

void put_grouping(std::map<std::string, TensorF>& out, const GroupingConfig& g) {
    out["meta.grouping"] = meta_vec({double(g.groups), double(g.interval)});
    out["meta.bounds"] = meta_vec({g.m_min, g.m_max});
}

GroupingConfig get_grouping(const std::map<std::string, TensorF>& in) {
    GroupingConfig g;
    const auto& gi = in.at("meta.grouping").data;
    g.groups = int(gi[0]);
    g.interval = int(gi[1]);
    const auto& b = in.at("meta.bounds").data;
    g.m_min = b[0];
    g.m_max = b[1];
    return g;
}

std::map<std::string, TensorF> filter_prefix(const std::map<std::string, TensorF>& in,
                                             const std::string& prefix) {
    std::map<std::string, TensorF> out;
    for (const auto& [k, v] : in)
        if (k.rfind(prefix, 0) == 0) out.emplace(k, v);
    return out;
}

// ---------------------------------------------------------------------------
// shared loop helpers
// ---------------------------------------------------------------------------

struct BatchSlot {
    std::map<std::string, TensorF> grads;
    double loss_total = 0;
    double loss_eps = 0, loss_pix = 0, loss_das = 0;
    int t = 0;
};

std::map<std::string, TensorF> average_grads(const std::vector<BatchSlot>& slots) {
    std::map<std::string, TensorF> acc;
    for (const auto& slot : slots)
        for (const auto& [name, g] : slot.grads) {
            auto it = acc.find(name);
            if (it == acc.end()) {
                acc.emplace(name, g);
            } else {
                auto& a = it->second;
                for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += g.data[i];
            }
        }
    const float inv = 1.f / float(slots.size());
    for (auto& [name, g] : acc)
        for (auto& v : g.data) v *= inv;
    return acc;
}

json histogram_json(const std::vector<BatchSlot>& slots) {
    std::map<int, int> hist;
    for (const auto& s : slots) ++hist[s.t];
    json j = json::object();
    for (const auto& [t, n] : hist) j[std::to_string(t)] = n;
    return j;
}

void append_log(std::ofstream& log, int step, double total, double le, double lp, double ld,
                const json& hist) {
    json j{{"step", step},        {"loss_total", total}, {"loss_eps", le},
           {"loss_pix", lp},      {"loss_das", ld},      {"t_histogram", hist}};
    log << j.dump() << "\n";
    log.flush();
}

std::vector<PairedSample> load_corpus(const std::string& manifest) {
    auto entries = load_manifest(manifest);
    std::vector<PairedSample> pairs;
    pairs.reserve(entries.size());
    for (const auto& e : entries) pairs.push_back(load_pair(e));
    if (pairs.empty()) throw ConfigError("corpus is empty: " + manifest);
    return pairs;
}

double teacher_val_mse(const std::vector<PairedSample>& val, const LatentCodec& codec,
                       const Schedule& sched, const DenoiserConfig& cfg,
                       const Params<float>& params, uint64_t seed, int t_probe) {
    double total = 0;
    int64_t count = 0;
    for (size_t i = 0; i < val.size(); ++i) {
        Rng rng(derive_seed(seed, 0xABCDEF, i));
        auto z0 = codec.encode<float>(val[i].hr);
        auto ns = forward_diffuse(sched, z0, t_probe, rng);
        Tape<float> tape;
        ParamBinder<float> pb{tape, params, "teacher.", false};
        const int eps = denoiser_forward(tape, cfg, pb, tape.constant(ns.z_t), t_probe, -1);
        const auto& pred = tape.value(eps);
        for (size_t k = 0; k < pred.data.size(); ++k) {
            const double d = double(pred.data[k]) - double(ns.eps.data[k]);
            total += d * d;
        }
        count += pred.numel();
    }
    return total / double(count);
}

}  // namespace

// ---------------------------------------------------------------------------
// teacher
// ---------------------------------------------------------------------------

TrainResult train_teacher(const TrainConfig& cfg) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    auto pairs = load_corpus(cfg.corpus);
    auto val_pairs = cfg.val_corpus.empty()
                         ? std::vector<PairedSample>(pairs.begin(),
                                                     pairs.begin() + std::min<size_t>(32, pairs.size()))
                         : load_corpus(cfg.val_corpus);

    std::vector<Image> hr_images;
    for (const auto& p : pairs) hr_images.push_back(p.hr);
    auto codec = LatentCodec::fit(hr_images, 2);
    const Schedule sched = default_schedule();

    DenoiserConfig tcfg;
    tcfg.latent_channels = codec.latent_channels();
    tcfg.cross_attention = false;

    Rng init_rng(derive_seed(cfg.seed, 0x7EAC4));
    Params<float> params;
    for (auto& [k, v] : init_denoiser(tcfg, init_rng)) params.emplace("teacher." + k, std::move(v));

    AdamState opt;
    const int threads = resolve_threads(cfg.threads);
    std::ofstream log(fs::path(cfg.out_dir) / "teacher_log.jsonl");

    TrainResult result;
    result.stats["val_mse_initial"] =
        teacher_val_mse(val_pairs, codec, sched, tcfg, params, cfg.seed, 500);

    Rng batch_rng(derive_seed(cfg.seed, 0xBA7C4));
    double last_loss = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<size_t> picks(size_t(cfg.batch_size));
        for (auto& p : picks) p = size_t(batch_rng.uniform_int(0, int64_t(pairs.size()) - 1));

        std::vector<BatchSlot> slots(size_t(cfg.batch_size));
        parallel_for(cfg.batch_size, threads, [&](int64_t slot) {
            Rng rng(derive_seed(cfg.seed, uint64_t(step), uint64_t(slot)));
            Tape<float> tape;
            tape.set_check_finite(false);  // loss finiteness is checked per step
            try {
                auto out = build_teacher_loss(tape, pairs[picks[size_t(slot)]].hr, codec, sched,
                                              tcfg, params, rng);
                if (!std::isfinite(out.loss))
                    throw NumericRangeError("non-finite loss");
                slots[size_t(slot)].grads = tape.backward(out.total_id);
                slots[size_t(slot)].loss_total = out.loss;
                slots[size_t(slot)].loss_eps = out.loss;
                slots[size_t(slot)].t = out.t;
            } catch (const NumericRangeError& e) {
                throw NumericRangeError("teacher step " + std::to_string(step) + ", sample index " +
                                        std::to_string(picks[size_t(slot)]) + ": " + e.what());
            }
        });

        auto grads = average_grads(slots);
        adam_step(params, grads, opt, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                  cfg.adam_eps);

        double mean_loss = 0;
        for (const auto& s : slots) mean_loss += s.loss_total;
        mean_loss /= double(slots.size());
        last_loss = mean_loss;
        if (!std::isfinite(mean_loss))
            throw NumericRangeError("teacher: non-finite loss at step " + std::to_string(step));
        append_log(log, step, mean_loss, mean_loss, 0.0, 0.0, histogram_json(slots));

        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.steps) {
            std::map<std::string, TensorF> ck = params;
            put_codec(ck, codec);
            put_denoiser_cfg(ck, "meta.arch", tcfg);
            save_checkpoint(ck, (fs::path(cfg.out_dir) /
                                 ("teacher_" + std::to_string(step + 1) + ".ckpt")).string());
        }
    }

    result.stats["val_mse_final"] =
        teacher_val_mse(val_pairs, codec, sched, tcfg, params, cfg.seed, 500);
    result.final_loss = last_loss;

    std::map<std::string, TensorF> ck = params;
    put_codec(ck, codec);
    put_denoiser_cfg(ck, "meta.arch", tcfg);
    result.checkpoint_path = (fs::path(cfg.out_dir) / "teacher.ckpt").string();
    save_checkpoint(ck, result.checkpoint_path);
    return result;
}

// ---------------------------------------------------------------------------
// student (RCOD)
// ---------------------------------------------------------------------------

namespace {

double student_val_latent_mse(const std::vector<PairedSample>& val, const LatentCodec& codec,
                              const Schedule& sched, const GroupingConfig& grouping,
                              const DenoiserConfig& dcfg, const PromptConfig& pcfg,
                              const Params<float>& params, bool noise_inject, uint64_t seed) {
    double total = 0;
    int64_t count = 0;
    for (size_t i = 0; i < val.size(); ++i) {
        const auto z_l = codec.encode<float>(val[i].lr_up);
        const auto z_h = codec.encode<float>(val[i].hr);
        const int t = assign_timestep(latent_metric(z_l, z_h, MetricKind::cosine), grouping);
        Rng rng(derive_seed(seed, 0x5A11D, i));
        Image restored = restore_image(params, dcfg, pcfg, codec, sched, val[i].lr_up, t,
                                       noise_inject, rng);
        const auto zr = codec.encode<float>(restored);
        // compare in latent space before pixel clipping effects: use the
        // restored latent via encode(decode(.)), which is bit-exact
        for (size_t k = 0; k < zr.data.size(); ++k) {
            const double d = double(zr.data[k]) - double(z_h.data[k]);
            total += d * d;
        }
        count += zr.numel();
    }
    return total / double(count);
}

double student_val_psnr(const std::vector<PairedSample>& val, const LatentCodec& codec,
                        const Schedule& sched, const DenoiserConfig& dcfg,
                        const PromptConfig& pcfg, const Params<float>& params, int t,
                        bool noise_inject, uint64_t seed) {
    double total = 0;
    for (size_t i = 0; i < val.size(); ++i) {
        Rng rng(derive_seed(seed, 0x9A1u + uint64_t(t), i));
        Image restored =
            restore_image(params, dcfg, pcfg, codec, sched, val[i].lr_up, t, noise_inject, rng);
        total += psnr(restored, val[i].hr);
    }
    return total / double(val.size());
}

}  // namespace

TrainResult train_rcod(const TrainConfig& cfg, const std::string& teacher_ckpt) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    auto pairs = load_corpus(cfg.corpus);
    auto val_pairs = cfg.val_corpus.empty()
                         ? std::vector<PairedSample>(pairs.begin(),
                                                     pairs.begin() + std::min<size_t>(16, pairs.size()))
                         : load_corpus(cfg.val_corpus);
    const Schedule sched = default_schedule();

    // teacher (optional) fixes the codec so both nets share one latent space
    LatentCodec codec;
    DenoiserConfig teacher_cfg;
    Params<float> teacher_params;
    const bool with_teacher = !teacher_ckpt.empty();
    if (with_teacher) {
        auto tb = load_teacher_bundle(teacher_ckpt);
        codec = tb.codec;
        teacher_cfg = tb.cfg;
        teacher_params = std::move(tb.params);
    } else {
        if (cfg.lambda_das > 0.0)
            throw ConfigError("train: lambda_das > 0 requires a teacher checkpoint");
        std::vector<Image> hr_images;
        for (const auto& p : pairs) hr_images.push_back(p.hr);
        codec = LatentCodec::fit(hr_images, 2);
    }

    // metric bounds over the training corpus
    std::vector<double> metrics;
    metrics.reserve(pairs.size());
    for (const auto& p : pairs)
        metrics.push_back(latent_metric(codec.encode<float>(p.lr_up), codec.encode<float>(p.hr),
                                        MetricKind::cosine));
    auto [m_lo, m_hi] = fit_bounds(metrics, cfg.exact_bounds);
    GroupingConfig grouping;
    grouping.groups = cfg.groups;
    grouping.interval = cfg.interval;
    grouping.m_min = m_lo;
    grouping.m_max = m_hi;
    grouping.validate();

    DenoiserConfig dcfg;
    dcfg.latent_channels = codec.latent_channels();
    PromptConfig pcfg;
    pcfg.image_channels = pairs[0].lr_up.c;

    Rng init_rng(derive_seed(cfg.seed, 0x57D11));
    Params<float> params;
    for (auto& [k, v] : init_denoiser(dcfg, init_rng)) params.emplace("denoiser." + k, std::move(v));
    for (auto& [k, v] : init_prompt_encoder(pcfg, init_rng))
        params.emplace("prompt." + k, std::move(v));

    RcodLossWeights weights;
    weights.lambda_eps = cfg.lambda_eps;
    weights.lambda_pix = cfg.lambda_pix;
    weights.lambda_das = cfg.lambda_das;

    AdamState opt;
    const int threads = resolve_threads(cfg.threads);
    std::ofstream log(fs::path(cfg.out_dir) / "student_log.jsonl");
    std::ofstream val_log(fs::path(cfg.out_dir) / "student_val.jsonl");

    TrainResult result;
    result.stats["val_latent_mse_initial"] = student_val_latent_mse(
        val_pairs, codec, sched, grouping, dcfg, pcfg, params, cfg.noise_inject, cfg.seed);

    auto save_student = [&](const std::string& name) {
        std::map<std::string, TensorF> ck = params;
        put_codec(ck, codec);
        put_denoiser_cfg(ck, "meta.arch", dcfg);
        put_prompt_cfg(ck, pcfg);
        put_grouping(ck, grouping);
        ck["meta.noise_inject"] = meta_vec({cfg.noise_inject ? 1.0 : 0.0});
        const auto path = (fs::path(cfg.out_dir) / name).string();
        save_checkpoint(ck, path);
        return path;
    };

    Rng batch_rng(derive_seed(cfg.seed, 0xBA7C5));
    double last_loss = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<size_t> picks(size_t(cfg.batch_size));
        for (auto& p : picks) p = size_t(batch_rng.uniform_int(0, int64_t(pairs.size()) - 1));

        std::vector<BatchSlot> slots(size_t(cfg.batch_size));
        parallel_for(cfg.batch_size, threads, [&](int64_t slot) {
            Rng rng(derive_seed(cfg.seed, uint64_t(step) * 131u + uint64_t(slot), 0xD05));
            Tape<float> tape;
            tape.set_check_finite(false);  // loss finiteness is checked per step
            try {
                auto out = build_rcod_loss(tape, pairs[picks[size_t(slot)]], codec, sched, grouping,
                                           dcfg, pcfg, params,
                                           with_teacher ? &teacher_cfg : nullptr,
                                           with_teacher ? &teacher_params : nullptr, weights,
                                           cfg.noise_inject, MetricKind::cosine, rng);
                auto& s = slots[size_t(slot)];
                s.loss_total = double(tape.value(out.total_id).data[0]);
                if (!std::isfinite(s.loss_total))
                    throw NumericRangeError("non-finite loss");
                s.grads = tape.backward(out.total_id);
                s.loss_eps = out.loss_eps;
                s.loss_pix = out.loss_pix;
                s.loss_das = out.loss_das;
                s.t = out.t_assigned;
            } catch (const NumericRangeError& e) {
                throw NumericRangeError("student step " + std::to_string(step) +
                                        ", sample index " +
                                        std::to_string(picks[size_t(slot)]) + ": " + e.what());
            }
        });

        auto grads = average_grads(slots);
        adam_step(params, grads, opt, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                  cfg.adam_eps);

        double total = 0, le = 0, lp = 0, ld = 0;
        for (const auto& s : slots) {
            total += s.loss_total;
            le += s.loss_eps;
            lp += s.loss_pix;
            ld += s.loss_das;
        }
        const double inv = 1.0 / double(slots.size());
        total *= inv;
        le *= inv;
        lp *= inv;
        ld *= inv;
        last_loss = total;
        if (!std::isfinite(total))
            throw NumericRangeError("student: non-finite loss at step " + std::to_string(step));
        append_log(log, step, total, le, lp, ld, histogram_json(slots));

        if (cfg.val_every > 0 && (step + 1) % cfg.val_every == 0) {
            json vj{{"step", step + 1}};
            for (int g = 1; g <= grouping.groups; ++g) {
                const int t = grouping.interval * g;
                vj["psnr_" + std::to_string(t)] =
                    student_val_psnr(val_pairs, codec, sched, dcfg, pcfg, params, t,
                                     cfg.noise_inject, cfg.seed);
            }
            val_log << vj.dump() << "\n";
            val_log.flush();
        }
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.steps)
            save_student("student_" + std::to_string(step + 1) + ".ckpt");
    }

    result.final_loss = last_loss;
    result.stats["val_latent_mse_final"] = student_val_latent_mse(
        val_pairs, codec, sched, grouping, dcfg, pcfg, params, cfg.noise_inject, cfg.seed);
    for (int g = 1; g <= grouping.groups; ++g) {
        const int t = grouping.interval * g;
        result.stats["val_psnr_" + std::to_string(t)] = student_val_psnr(
            val_pairs, codec, sched, dcfg, pcfg, params, t, cfg.noise_inject, cfg.seed);
    }
    result.checkpoint_path = save_student("student.ckpt");
    return result;
}

// ---------------------------------------------------------------------------
// MEM
// ---------------------------------------------------------------------------

TrainResult train_mem(const TrainConfig& cfg, const std::string& student_ckpt,
                      bool bottleneck_features) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    auto student = load_student_bundle(student_ckpt);
    const LatentCodec& codec = student.codec;

    auto pairs = load_corpus(cfg.corpus);
    MemConfig mcfg;
    mcfg.latent_channels = codec.latent_channels();
    mcfg.latent_size = pairs[0].lr_up.h / codec.factor();
    mcfg.bottleneck = bottleneck_features;
    if (bottleneck_features) mcfg.bottleneck_channels = student.dcfg.bottleneck_channels();

    auto features_of = [&](const Image& lr_up, const TensorF& z_l) {
        return mcfg.bottleneck ? mem_bottleneck_features(mcfg, student.dcfg, student.pcfg,
                                                         student.params, codec, lr_up)
                               : mem_features(mcfg, z_l);
    };

    std::vector<TensorF> feats;
    std::vector<double> targets;
    for (const auto& p : pairs) {
        const auto z_l = codec.encode<float>(p.lr_up);
        targets.push_back(latent_metric(z_l, codec.encode<float>(p.hr), MetricKind::cosine));
        feats.push_back(features_of(p.lr_up, z_l));
    }

    // bounds over this corpus; a constant-metric corpus fails here
    auto [m_lo, m_hi] = fit_bounds(targets, cfg.exact_bounds);
    GroupingConfig grouping = student.grouping;
    grouping.m_min = m_lo;
    grouping.m_max = m_hi;

    // holdout: trailing 20% unless a separate validation corpus is given
    std::vector<TensorF> hold_feats;
    std::vector<double> hold_targets;
    size_t train_count = pairs.size();
    if (!cfg.val_corpus.empty()) {
        for (const auto& p : load_corpus(cfg.val_corpus)) {
            auto z_l = codec.encode<float>(p.lr_up);
            hold_targets.push_back(
                latent_metric(z_l, codec.encode<float>(p.hr), MetricKind::cosine));
            hold_feats.push_back(features_of(p.lr_up, z_l));
        }
    } else {
        train_count = pairs.size() - std::max<size_t>(1, pairs.size() / 5);
        hold_feats.assign(feats.begin() + int64_t(train_count), feats.end());
        hold_targets.assign(targets.begin() + int64_t(train_count), targets.end());
    }
    if (train_count < 2) throw ConfigError("train_mem: corpus too small");

    // the regression is conditioned by standardizing features and mapping
    // targets onto [-1, 1]; both transforms are affine and are folded back
    // into the first and last linear layers after training, so the saved
    // module consumes raw features and emits the metric estimate directly
    const int dim = mcfg.feature_dim();
    std::vector<double> f_mu(size_t(dim), 0.0), f_sd(size_t(dim), 0.0);
    for (size_t i = 0; i < train_count; ++i)
        for (int d = 0; d < dim; ++d) f_mu[size_t(d)] += feats[i].data[size_t(d)];
    for (auto& v : f_mu) v /= double(train_count);
    for (size_t i = 0; i < train_count; ++i)
        for (int d = 0; d < dim; ++d) {
            const double c = feats[i].data[size_t(d)] - f_mu[size_t(d)];
            f_sd[size_t(d)] += c * c;
        }
    for (auto& v : f_sd) v = std::max(1e-8, std::sqrt(v / double(train_count)));
    double t_lo = targets[0], t_hi = targets[0];
    for (size_t i = 0; i < train_count; ++i) {
        t_lo = std::min(t_lo, targets[i]);
        t_hi = std::max(t_hi, targets[i]);
    }
    if (!(t_lo < t_hi)) throw DegenerateInputError("train_mem: constant metric on train split");
    const double t_mid = 0.5 * (t_lo + t_hi);
    const double t_half = 0.5 * (t_hi - t_lo);

    std::vector<TensorF> std_feats(train_count);
    for (size_t i = 0; i < train_count; ++i) {
        TensorF row({1, dim});
        for (int d = 0; d < dim; ++d)
            row.data[size_t(d)] =
                float((feats[i].data[size_t(d)] - f_mu[size_t(d)]) / f_sd[size_t(d)]);
        std_feats[i] = std::move(row);
    }

    Rng init_rng(derive_seed(cfg.seed, 0x3E3));
    Params<float> params;
    for (auto& [k, v] : init_mem(mcfg, init_rng)) params.emplace("mem." + k, std::move(v));

    AdamState opt;
    const int threads = resolve_threads(cfg.threads);
    std::ofstream log(std::filesystem::path(cfg.out_dir) / "mem_log.jsonl");

    Rng batch_rng(derive_seed(cfg.seed, 0xBA7C6));
    double last_loss = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<size_t> picks(size_t(cfg.batch_size));
        for (auto& p : picks) p = size_t(batch_rng.uniform_int(0, int64_t(train_count) - 1));
        std::vector<BatchSlot> slots(size_t(cfg.batch_size));
        parallel_for(cfg.batch_size, threads, [&](int64_t slot) {
            Tape<float> tape;
            ParamBinder<float> pb{tape, params, "mem.", true};
            const size_t idx = picks[size_t(slot)];
            // feature jitter regularizes the small MLP against the corpus size
            TensorF row = std_feats[idx];
            Rng jit(derive_seed(cfg.seed, uint64_t(step) * 977 + uint64_t(slot), 0x71E));
            for (auto& v : row.data) v += float(0.2 * jit.normal());
            // regress the pre-clamp value; the public op clamps at inference
            const int pred = mem_mlp_raw(tape, mcfg, pb, tape.constant(std::move(row)));
            const float eta = float((targets[idx] - t_mid) / t_half);
            const int loss = tape.mse(pred, tape.constant(TensorF::scalar(eta)));
            auto& s = slots[size_t(slot)];
            s.grads = tape.backward(loss);
            s.loss_total = double(tape.value(loss).data[0]);
            s.loss_eps = s.loss_total;
        });
        auto grads = average_grads(slots);
        adam_step(params, grads, opt, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                  cfg.adam_eps);
        double mean = 0;
        for (const auto& s : slots) mean += s.loss_total;
        mean /= double(slots.size());
        last_loss = mean;
        if (!std::isfinite(mean))
            throw NumericRangeError("mem: non-finite loss at step " + std::to_string(step));
        append_log(log, step, mean, mean, 0.0, 0.0, json::object());
    }

    // fold the affine transforms into the first and last layers
    {
        auto& w0 = params.at("mem.fc0.w");  // [dim, h0]
        auto& b0 = params.at("mem.fc0.b");
        const int h0 = w0.dim(1);
        for (int d = 0; d < dim; ++d)
            for (int j = 0; j < h0; ++j) w0.at(d, j) = float(w0.at(d, j) / f_sd[size_t(d)]);
        for (int j = 0; j < h0; ++j) {
            double shift = 0;
            for (int d = 0; d < dim; ++d) shift += f_mu[size_t(d)] * w0.at(d, j);
            b0.data[size_t(j)] = float(b0.data[size_t(j)] - shift);
        }
        auto& ow = params.at("mem.out.w");
        auto& ob = params.at("mem.out.b");
        for (auto& v : ow.data) v = float(v * t_half);
        ob.data[0] = float(t_mid + t_half * ob.data[0]);
    }

    // holdout report through the public (folded) prediction path
    std::vector<double> predictions;
    for (const auto& f : hold_feats)
        predictions.push_back(mem_predict_features(mcfg, params, "mem.", f));
    double rho = 0;
    double agreement = 0;
    if (hold_targets.size() >= 3) {
        try {
            rho = spearman(predictions, hold_targets);
        } catch (const DegenerateInputError&) {
            rho = 0;  // constant predictions carry no ranking signal
        }
        int agree = 0;
        for (size_t i = 0; i < hold_targets.size(); ++i)
            if (assign_timestep(predictions[i], grouping) ==
                assign_timestep(hold_targets[i], grouping))
                ++agree;
        agreement = double(agree) / double(hold_targets.size());
    }

    TrainResult result;
    result.final_loss = last_loss;
    result.stats["holdout_spearman"] = rho;
    result.stats["bucket_agreement"] = agreement;
    result.stats["holdout_count"] = double(hold_targets.size());

    std::map<std::string, TensorF> ck = params;
    put_codec(ck, codec);
    put_mem_cfg(ck, mcfg);
    put_grouping(ck, grouping);
    result.checkpoint_path = (fs::path(cfg.out_dir) / "mem.ckpt").string();
    save_checkpoint(ck, result.checkpoint_path);

    json report{{"holdout_spearman", rho},
                {"bucket_agreement", agreement},
                {"holdout_count", hold_targets.size()},
                {"final_loss", last_loss}};
    std::ofstream rep(fs::path(cfg.out_dir) / "mem_report.json");
    rep << report.dump(2) << "\n";
    return result;
}

// ---------------------------------------------------------------------------
// bundles
// ---------------------------------------------------------------------------

TeacherBundle load_teacher_bundle(const std::string& path) {
    auto tensors = load_checkpoint(path);
    TeacherBundle b;
    b.codec = get_codec(tensors);
    b.cfg = get_denoiser_cfg(tensors, "meta.arch");
    b.params = filter_prefix(tensors, "teacher.");
    if (b.params.empty()) throw LoadError(path + ": no teacher parameters in checkpoint");
    return b;
}

StudentBundle load_student_bundle(const std::string& path) {
    auto tensors = load_checkpoint(path);
    StudentBundle b;
    b.codec = get_codec(tensors);
    b.dcfg = get_denoiser_cfg(tensors, "meta.arch");
    b.pcfg = get_prompt_cfg(tensors);
    b.grouping = get_grouping(tensors);
    b.noise_inject = tensors.at("meta.noise_inject").data[0] != 0.f;
    b.params = filter_prefix(tensors, "denoiser.");
    auto prompt = filter_prefix(tensors, "prompt.");
    b.params.insert(prompt.begin(), prompt.end());
    if (b.params.empty()) throw LoadError(path + ": no student parameters in checkpoint");
    return b;
}

MemBundle load_mem_bundle(const std::string& path) {
    auto tensors = load_checkpoint(path);
    MemBundle b;
    b.codec = get_codec(tensors);
    b.cfg = get_mem_cfg(tensors);
    b.grouping = get_grouping(tensors);
    b.params = filter_prefix(tensors, "mem.");
    if (b.params.empty()) throw LoadError(path + ": no MEM parameters in checkpoint");
    return b;
}

}  // namespace rcod
