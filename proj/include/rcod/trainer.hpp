#pragma once

#include <map>
#include <string>

#include "rcod/codec.hpp"
#include "rcod/grouping.hpp"
#include "rcod/models.hpp"
#include "rcod/schedule.hpp"
#include "rcod/tensor.hpp"

namespace rcod {

struct TrainConfig {
    int steps = 4000;
    int batch_size = 4;
    double learning_rate = 2e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double lambda_eps = 1.0;
    double lambda_pix = 1.0;
    double lambda_das = 0.25;
    int groups = 3;
    int interval = 250;
    bool exact_bounds = false;
    bool noise_inject = false;
    uint64_t seed = 0;
    std::string corpus;      // manifest path
    std::string val_corpus;  // optional manifest path
    int checkpoint_every = 2000;
    int val_every = 1000;
    std::string out_dir = ".";
    int threads = 0;  // 0 = hardware

    void validate() const;
};

// Strict JSON parse: unknown keys are rejected naming the offending key.
TrainConfig train_config_from_json_text(const std::string& text, const TrainConfig& base = {});
TrainConfig train_config_from_file(const std::string& path, const TrainConfig& base = {});

struct TrainResult {
    std::string checkpoint_path;
    double final_loss = 0;
    std::map<std::string, double> stats;
};

// Adam with bias correction; parameters updated in name order.
struct AdamState {
    std::map<std::string, TensorF> m, v;
    int64_t step = 0;
};

void adam_step(Params<float>& params, const std::map<std::string, TensorF>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps);

TrainResult train_teacher(const TrainConfig& cfg);
// teacher_ckpt may be empty only when lambda_das == 0 (teacher-free mode).
TrainResult train_rcod(const TrainConfig& cfg, const std::string& teacher_ckpt);
// bottleneck_features switches the MEM input from pooled z_L statistics to
// pooled student bottleneck activations.
TrainResult train_mem(const TrainConfig& cfg, const std::string& student_ckpt,
                      bool bottleneck_features = false);

// ---------------------------------------------------------------------------
// checkpoint bundles
// ---------------------------------------------------------------------------

struct TeacherBundle {
    Params<float> params;  // "teacher.*"
    DenoiserConfig cfg;
    LatentCodec codec;
};

struct StudentBundle {
    Params<float> params;  // "denoiser.*" + "prompt.*"
    DenoiserConfig dcfg;
    PromptConfig pcfg;
    LatentCodec codec;
    GroupingConfig grouping;
    bool noise_inject = false;
};

struct MemBundle {
    Params<float> params;  // "mem.*"
    MemConfig cfg;
    LatentCodec codec;
    GroupingConfig grouping;
};

TeacherBundle load_teacher_bundle(const std::string& path);
StudentBundle load_student_bundle(const std::string& path);
MemBundle load_mem_bundle(const std::string& path);

}  // namespace rcod
