// Command-line front end: synth-data | train-teacher | train | train-mem |
// infer | eval | report. Exit codes: 0 success, 1 user error, 2 internal
// error. Every command taking --seed is reproducible byte-for-byte with
// --threads 1.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "rcod/checkpoint.hpp"
#include "rcod/degrade.hpp"
#include "rcod/parallel.hpp"
#include "rcod/pipeline.hpp"
#include "rcod/trainer.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TrainCli {
    CLI::App* cmd = nullptr;
    std::string config_path;
    int steps = 0;
    int batch_size = 0;
    double learning_rate = 0, adam_beta1 = 0, adam_beta2 = 0, adam_eps = 0;
    double lambda_eps = 0, lambda_pix = 0, lambda_das = 0;
    int groups = 0, interval = 0;
    bool exact_bounds = false, noise_inject = false;
    uint64_t seed = 0;
    std::string corpus, val_corpus, out_dir;
    int checkpoint_every = 0, val_every = 0, threads = 0;
};

// Flags mirror TrainConfig fields; a --config JSON file provides the base
// and explicitly-passed flags override it (both go through the same strict
// parser).
void add_train_flags(TrainCli& t, const rcod::TrainConfig& defaults) {
    auto* c = t.cmd;
    c->add_option("--config", t.config_path, "JSON config file (flags override)");
    c->add_option("--steps", t.steps, "optimization steps")->default_val(defaults.steps);
    c->add_option("--batch-size", t.batch_size, "samples per step")
        ->default_val(defaults.batch_size);
    c->add_option("--learning-rate", t.learning_rate, "Adam learning rate")
        ->default_val(defaults.learning_rate);
    c->add_option("--adam-beta1", t.adam_beta1, "Adam beta1")->default_val(defaults.adam_beta1);
    c->add_option("--adam-beta2", t.adam_beta2, "Adam beta2")->default_val(defaults.adam_beta2);
    c->add_option("--adam-eps", t.adam_eps, "Adam epsilon")->default_val(defaults.adam_eps);
    c->add_option("--lambda-eps", t.lambda_eps, "latent restoration loss weight")
        ->default_val(defaults.lambda_eps);
    c->add_option("--lambda-pix", t.lambda_pix, "pixel loss weight")
        ->default_val(defaults.lambda_pix);
    c->add_option("--lambda-das", t.lambda_das, "DAS regularizer weight")
        ->default_val(defaults.lambda_das);
    c->add_option("--groups", t.groups, "bucket count n")->default_val(defaults.groups);
    c->add_option("--interval", t.interval, "timestep interval k")->default_val(defaults.interval);
    c->add_flag("--exact-bounds", t.exact_bounds, "use exact min/max metric bounds");
    c->add_flag("--noise-inject", t.noise_inject, "re-noise z_L at level t during training");
    c->add_option("--seed", t.seed, "RNG seed")->default_val(defaults.seed);
    c->add_option("--corpus", t.corpus, "training manifest path");
    c->add_option("--val-corpus", t.val_corpus, "validation manifest path");
    c->add_option("--checkpoint-every", t.checkpoint_every, "checkpoint cadence in steps")
        ->default_val(defaults.checkpoint_every);
    c->add_option("--val-every", t.val_every, "validation cadence in steps")
        ->default_val(defaults.val_every);
    c->add_option("--out-dir", t.out_dir, "output directory")->default_val(defaults.out_dir);
    c->add_option("--threads", t.threads, "worker cap (RCOD_THREADS env overrides)")
        ->default_val(defaults.threads);
}

rcod::TrainConfig resolve_train_config(const TrainCli& t) {
    rcod::TrainConfig cfg;
    if (!t.config_path.empty()) cfg = rcod::train_config_from_file(t.config_path, cfg);
    json j = json::object();
    auto* c = t.cmd;
    if (c->count("--steps")) j["steps"] = t.steps;
    if (c->count("--batch-size")) j["batch_size"] = t.batch_size;
    if (c->count("--learning-rate")) j["learning_rate"] = t.learning_rate;
    if (c->count("--adam-beta1")) j["adam_beta1"] = t.adam_beta1;
    if (c->count("--adam-beta2")) j["adam_beta2"] = t.adam_beta2;
    if (c->count("--adam-eps")) j["adam_eps"] = t.adam_eps;
    if (c->count("--lambda-eps")) j["lambda_eps"] = t.lambda_eps;
    if (c->count("--lambda-pix")) j["lambda_pix"] = t.lambda_pix;
    if (c->count("--lambda-das")) j["lambda_das"] = t.lambda_das;
    if (c->count("--groups")) j["groups"] = t.groups;
    if (c->count("--interval")) j["interval"] = t.interval;
    if (c->count("--exact-bounds")) j["exact_bounds"] = t.exact_bounds;
    if (c->count("--noise-inject")) j["noise_inject"] = t.noise_inject;
    if (c->count("--seed")) j["seed"] = t.seed;
    if (c->count("--corpus")) j["corpus"] = t.corpus;
    if (c->count("--val-corpus")) j["val_corpus"] = t.val_corpus;
    if (c->count("--checkpoint-every")) j["checkpoint_every"] = t.checkpoint_every;
    if (c->count("--val-every")) j["val_every"] = t.val_every;
    if (c->count("--out-dir")) j["out_dir"] = t.out_dir;
    if (c->count("--threads")) j["threads"] = t.threads;
    return rcod::train_config_from_json_text(j.dump(), cfg);
}

void print_stats(const rcod::TrainResult& r) {
    std::printf("checkpoint: %s\n", r.checkpoint_path.c_str());
    std::printf("final_loss: %.6g\n", r.final_loss);
    for (const auto& [k, v] : r.stats) std::printf("%s: %.6g\n", k.c_str(), v);
}

int run_report(const std::vector<std::string>& eval_jsons, const std::string& csv_path) {
    if (eval_jsons.empty()) throw rcod::ConfigError("report: need at least one eval JSON");
    // columns: (label, report); labels are mode names, disambiguated by file
    // stem when two inputs share a mode
    std::vector<std::pair<std::string, rcod::MetricReport>> cols;
    std::map<std::string, int> seen;
    std::vector<std::pair<std::string, rcod::EvalOutcome>> outcomes;
    for (const auto& path : eval_jsons) {
        std::ifstream in(path);
        if (!in) throw rcod::IoError("cannot open eval report: " + path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        outcomes.emplace_back(path, rcod::eval_from_json(text));
        for (auto& [mode, report] : outcomes.back().second.modes) ++seen[mode];
    }
    for (auto& [path, outcome] : outcomes)
        for (auto& [mode, report] : outcome.modes) {
            std::string label = mode;
            if (seen[mode] > 1) label = fs::path(path).stem().string() + ":" + mode;
            cols.emplace_back(label, std::move(report));
        }

    struct RowDef {
        const char* name;
        double (rcod::MetricReport::*fn)() const;
    };
    const RowDef rows[] = {{"psnr", &rcod::MetricReport::psnr_mean},
                           {"ssim", &rcod::MetricReport::ssim_mean},
                           {"sharpness", &rcod::MetricReport::sharpness_mean}};

    std::printf("%-12s", "metric");
    for (const auto& [label, rep] : cols) std::printf(" %14s", label.c_str());
    std::printf("\n");
    for (const auto& row : rows) {
        double best = -1e300;
        for (const auto& [label, rep] : cols) best = std::max(best, (rep.*row.fn)());
        std::printf("%-12s", row.name);
        for (const auto& [label, rep] : cols) {
            const double v = (rep.*row.fn)();
            char cell[32];
            std::snprintf(cell, sizeof(cell), "%.4f%s", v, v == best ? "*" : "");
            std::printf(" %14s", cell);
        }
        std::printf("\n");
    }

    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw rcod::IoError("cannot write CSV: " + csv_path);
        out << "metric";
        for (const auto& [label, rep] : cols) out << "," << label;
        out << "\n";
        char buf[64];
        for (const auto& row : rows) {
            out << row.name;
            for (const auto& [label, rep] : cols) {
                std::snprintf(buf, sizeof(buf), "%.17g", (rep.*row.fn)());
                out << "," << buf;
            }
            out << "\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Realism-controlled one-step diffusion super-resolution"};
    app.require_subcommand(1);
    rcod::TrainConfig defaults;

    auto* synth = app.add_subcommand("synth-data", "generate a paired LR/HR toy corpus");
    rcod::SynthConfig synth_cfg;
    synth->add_option("--out", synth_cfg.out_dir, "output directory")->required();
    synth->add_option("--count", synth_cfg.count, "number of pairs")->default_val(512);
    synth->add_option("--patch", synth_cfg.patch, "HR patch size")->default_val(32);
    synth->add_option("--scale", synth_cfg.scale, "downsampling factor")->default_val(4);
    synth->add_option("--seed", synth_cfg.seed, "RNG seed")->default_val(0);
    synth->add_option("--threads", synth_cfg.threads, "worker cap")->default_val(0);

    TrainCli teacher_cli;
    teacher_cli.cmd = app.add_subcommand("train-teacher", "pretrain the multi-step teacher");
    add_train_flags(teacher_cli, defaults);

    TrainCli train_cli;
    train_cli.cmd = app.add_subcommand("train", "train the RCOD one-step student");
    add_train_flags(train_cli, defaults);
    std::string teacher_ckpt;
    train_cli.cmd->add_option("--teacher-ckpt", teacher_ckpt,
                              "teacher checkpoint (omit with --lambda-das 0)");

    TrainCli mem_cli;
    mem_cli.cmd = app.add_subcommand("train-mem", "train the metric estimation module");
    add_train_flags(mem_cli, defaults);
    std::string mem_student_ckpt;
    mem_cli.cmd->add_option("--ckpt", mem_student_ckpt, "student checkpoint")->required();
    std::string mem_feature_kind = "stats";
    mem_cli.cmd
        ->add_option("--features", mem_feature_kind,
                     "MEM input source: stats (pooled z_L statistics) or bottleneck")
        ->check(CLI::IsMember({"stats", "bottleneck"}))
        ->default_val("stats");

    auto* infer = app.add_subcommand("infer", "restore one LR image (on the HR grid)");
    std::string in_ckpt, in_mem_ckpt, in_input, in_output, in_realism = "fid";
    uint64_t in_seed = 0;
    infer->add_option("--ckpt", in_ckpt, "student checkpoint")->required();
    infer->add_option("--mem-ckpt", in_mem_ckpt, "MEM checkpoint (for --realism adaptive)");
    infer->add_option("--input", in_input, "input image (PGM/PPM)")->required();
    infer->add_option("--output", in_output, "output image path")->required();
    infer->add_option("--realism", in_realism, "fid|neu|real|adaptive|t=<int>")
        ->default_val("fid");
    infer->add_option("--seed", in_seed, "RNG seed")->default_val(0);

    auto* eval = app.add_subcommand("eval", "run inference over a manifest and report metrics");
    std::string ev_ckpt, ev_mem_ckpt, ev_manifest, ev_report;
    std::vector<std::string> ev_modes = {"fid", "neu", "real"};
    uint64_t ev_seed = 0;
    int ev_threads = 0;
    eval->add_option("--ckpt", ev_ckpt, "student checkpoint")->required();
    eval->add_option("--mem-ckpt", ev_mem_ckpt, "MEM checkpoint");
    eval->add_option("--manifest", ev_manifest, "evaluation manifest")->required();
    eval->add_option("--realism", ev_modes, "modes to evaluate (repeatable)");
    eval->add_option("--report-path", ev_report, "output JSON report")->required();
    eval->add_option("--seed", ev_seed, "RNG seed")->default_val(0);
    eval->add_option("--threads", ev_threads, "worker cap")->default_val(0);

    auto* report = app.add_subcommand("report", "render a comparison table from eval reports");
    std::vector<std::string> rp_jsons;
    std::string rp_csv;
    report->add_option("--eval-jsons", rp_jsons, "eval JSON files")->required();
    report->add_option("--csv", rp_csv, "also write CSV here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) {
            synth_cfg.threads = rcod::resolve_threads(synth_cfg.threads);
            auto entries = rcod::synth_corpus(synth_cfg);
            std::printf("wrote %zu pairs under %s\n", entries.size(), synth_cfg.out_dir.c_str());
            return 0;
        }
        if (teacher_cli.cmd->parsed()) {
            print_stats(rcod::train_teacher(resolve_train_config(teacher_cli)));
            return 0;
        }
        if (train_cli.cmd->parsed()) {
            print_stats(rcod::train_rcod(resolve_train_config(train_cli), teacher_ckpt));
            return 0;
        }
        if (mem_cli.cmd->parsed()) {
            print_stats(rcod::train_mem(resolve_train_config(mem_cli), mem_student_ckpt,
                                        mem_feature_kind == "bottleneck"));
            return 0;
        }
        if (infer->parsed()) {
            auto student = rcod::load_student_bundle(in_ckpt);
            std::optional<rcod::MemBundle> mem;
            if (!in_mem_ckpt.empty()) mem = rcod::load_mem_bundle(in_mem_ckpt);
            if (in_realism == "adaptive" && !mem)
                throw rcod::ConfigError("--realism adaptive requires --mem-ckpt");
            auto lr = rcod::load_image(in_input);
            auto out = rcod::infer_image(student, mem ? &*mem : nullptr, lr, in_realism, in_seed);
            rcod::save_image(out.output, in_output);
            json sidecar{{"t_used", out.t_used}, {"runtime_ms", out.runtime_ms}};
            if (out.adaptive) sidecar["m_hat"] = out.m_hat;
            std::ofstream side(in_output + ".json");
            side << sidecar.dump(2) << "\n";
            std::printf("t_used: %d\n", out.t_used);
            return 0;
        }
        if (eval->parsed()) {
            auto student = rcod::load_student_bundle(ev_ckpt);
            std::optional<rcod::MemBundle> mem;
            if (!ev_mem_ckpt.empty()) mem = rcod::load_mem_bundle(ev_mem_ckpt);
            for (const auto& m : ev_modes)
                if (m == "adaptive" && !mem)
                    throw rcod::ConfigError("--realism adaptive requires --mem-ckpt");
            auto manifest = rcod::load_manifest(ev_manifest);
            auto outcome = rcod::evaluate(student, mem ? &*mem : nullptr, manifest, ev_modes,
                                          ev_seed, rcod::resolve_threads(ev_threads));
            std::ofstream out(ev_report);
            if (!out) throw rcod::IoError("cannot write report: " + ev_report);
            out << rcod::eval_to_json(outcome) << "\n";
            for (const auto& [mode, rep] : outcome.modes)
                std::printf("%s: psnr %.3f ssim %.4f sharpness %.5f (n=%d)\n", mode.c_str(),
                            rep.psnr_mean(), rep.ssim_mean(), rep.sharpness_mean(), rep.count());
            return 0;
        }
        if (report->parsed()) return run_report(rp_jsons, rp_csv);
    } catch (const rcod::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const rcod::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const rcod::IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const rcod::LoadError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const rcod::DegenerateInputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const rcod::DimensionError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    }
    return 2;
}
