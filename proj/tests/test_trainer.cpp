#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>
#include <zlib.h>

#include "rcod/checkpoint.hpp"
#include "rcod/losses.hpp"
#include "rcod/parallel.hpp"
#include "rcod/pipeline.hpp"
#include "rcod/trainer.hpp"

using namespace rcod;
namespace fs = std::filesystem;
using nlohmann::json;

static fs::path temp_dir(const char* name) {
    auto p = fs::temp_directory_path() / "rcod_trainer_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// One shared toy corpus for the training smokes.
static std::string corpus_manifest() {
    static std::string path = [] {
        auto dir = temp_dir("corpus");
        SynthConfig cfg;
        cfg.count = 48;
        cfg.patch = 32;
        cfg.scale = 4;
        cfg.seed = 99;
        cfg.out_dir = dir.string();
        cfg.threads = 2;
        synth_corpus(cfg);
        return (dir / "manifest.jsonl").string();
    }();
    return path;
}

// ---------------------------------------------------------------------------
// checkpoint
// ---------------------------------------------------------------------------

TEST_CASE("checkpoint round trip is bit-exact") {
    auto dir = temp_dir("ckpt_rt");
    Rng rng(1);
    std::map<std::string, TensorF> tensors;
    tensors["a.w"] = TensorF::randn({3, 4}, rng);
    tensors["b.bias"] = TensorF::randn({7}, rng);
    tensors["deep.conv.w"] = TensorF::randn({2, 3, 3, 3}, rng);
    const auto path = (dir / "x.ckpt").string();
    save_checkpoint(tensors, path);
    auto back = load_checkpoint(path);
    REQUIRE(back.size() == tensors.size());
    for (const auto& [k, v] : tensors) {
        REQUIRE(back.count(k) == 1);
        CHECK(back.at(k).shape == v.shape);
        CHECK(back.at(k).data == v.data);  // bitwise
    }
}

TEST_CASE("flipped payload byte fails the CRC") {
    auto dir = temp_dir("ckpt_crc");
    Rng rng(2);
    std::map<std::string, TensorF> tensors{{"p", TensorF::randn({16}, rng)}};
    const auto path = (dir / "x.ckpt").string();
    save_checkpoint(tensors, path);

    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(32);
    char b;
    f.seekg(32);
    f.read(&b, 1);
    b = char(b ^ 0x40);
    f.seekp(32);
    f.write(&b, 1);
    f.close();

    try {
        (void)load_checkpoint(path);
        FAIL("expected LoadError");
    } catch (const LoadError& e) {
        CHECK(std::string(e.what()).find("CRC") != std::string::npos);
    }
}

TEST_CASE("unknown version is rejected without partial load") {
    auto dir = temp_dir("ckpt_ver");
    Rng rng(3);
    std::map<std::string, TensorF> tensors{{"p", TensorF::randn({4}, rng)}};
    const auto path = (dir / "x.ckpt").string();
    save_checkpoint(tensors, path);

    // bump the version field and re-stamp the CRC so only the version is bad
    std::ifstream in(path, std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    buf[4] = 9;
    uint32_t crc = uint32_t(crc32(0L, Z_NULL, 0));
    crc = uint32_t(
        crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), uInt(buf.size() - 4)));
    std::memcpy(buf.data() + buf.size() - 4, &crc, 4);
    std::ofstream out(path, std::ios::binary);
    out.write(buf.data(), std::streamsize(buf.size()));
    out.close();

    try {
        (void)load_checkpoint(path);
        FAIL("expected LoadError");
    } catch (const LoadError& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
}

TEST_CASE("bad magic is rejected") {
    auto dir = temp_dir("ckpt_magic");
    const auto path = (dir / "x.ckpt").string();
    std::ofstream out(path, std::ios::binary);
    out << "NOPE" << std::string(16, '\0');
    out.close();
    CHECK_THROWS_AS((void)load_checkpoint(path), LoadError);
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

TEST_CASE("train config parses and applies overrides") {
    auto cfg = train_config_from_json_text(
        R"({"steps": 7, "learning_rate": 0.001, "corpus": "m.jsonl", "noise_inject": true})");
    CHECK(cfg.steps == 7);
    CHECK(cfg.learning_rate == doctest::Approx(0.001));
    CHECK(cfg.corpus == "m.jsonl");
    CHECK(cfg.noise_inject);
    CHECK(cfg.batch_size == 4);  // default preserved
}

TEST_CASE("train config rejects unknown keys naming the key") {
    try {
        (void)train_config_from_json_text(R"({"stepz": 7})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("stepz") != std::string::npos);
    }
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.corpus = "x";
    cfg.steps = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.steps = 10;
    cfg.lambda_das = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.lambda_das = 0;
    cfg.corpus = "";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

TEST_CASE("adam first step matches the hand formula") {
    Params<float> params{{"p", TensorF({1}, {1.f})}};
    std::map<std::string, TensorF> grads{{"p", TensorF({1}, {0.5f})}};
    AdamState state;
    adam_step(params, grads, state, 0.1, 0.9, 0.999, 1e-8);
    // bias-corrected first step: m_hat = g, v_hat = g^2
    const double want = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
    CHECK(params.at("p").data[0] == doctest::Approx(want).epsilon(1e-6));
    CHECK(state.step == 1);
}

TEST_CASE("adam converges on a quadratic") {
    Params<float> params{{"p", TensorF({1}, {3.f})}};
    AdamState state;
    for (int i = 0; i < 500; ++i) {
        std::map<std::string, TensorF> grads{{"p", TensorF({1}, {params.at("p").data[0]})}};
        adam_step(params, grads, state, 0.05, 0.9, 0.999, 1e-8);
    }
    CHECK(std::abs(params.at("p").data[0]) < 0.05f);
}

// ---------------------------------------------------------------------------
// loss graph properties
// ---------------------------------------------------------------------------

TEST_CASE("oracle noise makes the one-step restoration exact in the loss graph") {
    auto codec = LatentCodec::from_scales({4, 4, 4, 4}, 2);
    const Schedule sched = default_schedule();
    Rng rng(7);
    auto z_h = TensorF::randn({4, 8, 8}, rng);
    const int t = 500;
    auto ns = forward_diffuse(sched, z_h, t, rng);

    // replicate the loss tail with the oracle epsilon injected
    Tape<float> tape;
    const int z_in = tape.constant(ns.z_t);
    const int eps = tape.constant(ns.eps);
    const float alpha = float(sched.alpha_cum[t]);
    const float sigma = float(sched.sigma[t]);
    const int zh_hat = tape.scale(tape.sub(z_in, tape.scale(eps, sigma)), 1.f / alpha);
    const int loss = tape.mse(zh_hat, tape.constant(z_h));
    CHECK(tape.value(loss).data[0] < 1e-5f);
}

TEST_CASE("bucket contract: metrics at the maximum all map to the fidelity timestep") {
    GroupingConfig grouping;
    grouping.m_min = 0.9;
    grouping.m_max = 1.0;
    // identical lr/hr gives cosine exactly 1 = m_max; the clamp keeps t = k
    for (int i = 0; i < 5; ++i) {
        Rng rng(100 + uint64_t(i));
        auto tex = synth_texture(32, rng);
        auto codec = LatentCodec::identity(1, 2);
        const double m = latent_metric(codec.encode<float>(tex), codec.encode<float>(tex),
                                       MetricKind::cosine);
        CHECK(assign_timestep(m, grouping) == 250);
    }
}

TEST_CASE("assigned timesteps match an offline brute-force pass over the corpus") {
    auto entries = load_manifest(corpus_manifest());
    std::vector<PairedSample> pairs;
    for (const auto& e : entries) pairs.push_back(load_pair(e));
    std::vector<Image> hrs;
    for (const auto& p : pairs) hrs.push_back(p.hr);
    auto codec = LatentCodec::fit(hrs, 2);

    std::vector<double> metrics;
    for (const auto& p : pairs)
        metrics.push_back(latent_metric(codec.encode<float>(p.lr_up), codec.encode<float>(p.hr),
                                        MetricKind::cosine));
    auto [lo, hi] = fit_bounds(metrics);

    GroupingConfig grouping;
    grouping.m_min = lo;
    grouping.m_max = hi;

    // offline brute force of the bucket map, coded independently
    auto brute = [&](double m) {
        double u = (m - lo) / (hi - lo);
        u = std::max(0.0, std::min(1.0 - 1e-9, u));
        int fl = 0;
        while (double(fl + 1) <= 3.0 * u) ++fl;
        return 250 * (3 - fl);
    };

    DenoiserConfig dcfg;
    PromptConfig pcfg;
    Rng init_rng(5);
    Params<float> trainable;
    for (auto& [k, v] : init_denoiser(dcfg, init_rng))
        trainable.emplace("denoiser." + k, std::move(v));
    for (auto& [k, v] : init_prompt_encoder(pcfg, init_rng))
        trainable.emplace("prompt." + k, std::move(v));
    const Schedule sched = default_schedule();
    RcodLossWeights weights;
    weights.lambda_das = 0;

    for (size_t i = 0; i < pairs.size(); ++i) {
        Rng rng(derive_seed(1, i));
        Tape<float> tape;
        auto out = build_rcod_loss(tape, pairs[i], codec, sched, grouping, dcfg, pcfg, trainable,
                                   nullptr, static_cast<const Params<float>*>(nullptr), weights,
                                   false, MetricKind::cosine, rng);
        CHECK(out.t_assigned == brute(metrics[i]));
    }
}

TEST_CASE("student gradients exclude the teacher and reach the prompt encoder") {
    auto entries = load_manifest(corpus_manifest());
    auto pair = load_pair(entries[0]);
    std::vector<Image> hrs{pair.hr};
    auto codec = LatentCodec::fit(hrs, 2);
    const Schedule sched = default_schedule();
    GroupingConfig grouping;
    grouping.m_min = 0.5;
    grouping.m_max = 1.0;

    DenoiserConfig dcfg;
    PromptConfig pcfg;
    DenoiserConfig tcfg;
    tcfg.cross_attention = false;
    Rng rng(11);
    Params<float> trainable;
    // random head/film so every branch carries gradient
    for (auto& [k, v] : init_denoiser(dcfg, rng))
        trainable.emplace("denoiser." + k, TensorF::randn(v.shape, rng, 0.05f));
    for (auto& [k, v] : init_prompt_encoder(pcfg, rng))
        trainable.emplace("prompt." + k, TensorF::randn(v.shape, rng, 0.05f));
    Params<float> teacher;
    for (auto& [k, v] : init_denoiser(tcfg, rng))
        teacher.emplace("teacher." + k, TensorF::randn(v.shape, rng, 0.05f));

    RcodLossWeights weights;
    Rng loss_rng(13);
    Tape<float> tape;
    auto out = build_rcod_loss(tape, pair, codec, sched, grouping, dcfg, pcfg, trainable, &tcfg,
                               &teacher, weights, false, MetricKind::cosine, loss_rng);
    CHECK(out.loss_das > 0.0);
    auto grads = tape.backward(out.total_id);
    REQUIRE(!grads.empty());
    double prompt_norm = 0;
    for (const auto& [name, g] : grads) {
        CHECK(name.rfind("teacher.", 0) != 0);
        const bool known =
            name.rfind("denoiser.", 0) == 0 || name.rfind("prompt.", 0) == 0;
        CHECK(known);
        if (name.rfind("prompt.", 0) == 0)
            for (float v : g.data) prompt_norm += double(v) * v;
    }
    CHECK(prompt_norm > 0.0);
    CHECK(grads.size() == trainable.size());
}

// ---------------------------------------------------------------------------
// training smokes
// ---------------------------------------------------------------------------

TEST_CASE("teacher smoke run trains, checkpoints, and is deterministic") {
    auto dir = temp_dir("teacher_smoke");
    TrainConfig cfg;
    cfg.steps = 25;
    cfg.batch_size = 2;
    cfg.corpus = corpus_manifest();
    cfg.out_dir = dir.string();
    cfg.seed = 5;
    cfg.threads = 1;
    cfg.val_every = 0;
    cfg.checkpoint_every = 0;
    auto r1 = train_teacher(cfg);
    CHECK(std::isfinite(r1.final_loss));
    auto bundle = load_teacher_bundle(r1.checkpoint_path);
    CHECK(!bundle.params.empty());
    CHECK(bundle.codec.latent_channels() == 4);

    auto dir2 = temp_dir("teacher_smoke2");
    cfg.out_dir = dir2.string();
    auto r2 = train_teacher(cfg);
    CHECK(r1.final_loss == r2.final_loss);  // bit-identical trajectory

    auto dir3 = temp_dir("teacher_smoke3");
    cfg.out_dir = dir3.string();
    cfg.threads = 2;  // worker count must not change results
    auto r3 = train_teacher(cfg);
    CHECK(r1.final_loss == r3.final_loss);
}

TEST_CASE("ancestral sampling from the trained teacher stays finite and in range") {
    auto dir = temp_dir("teacher_ancestral");
    TrainConfig cfg;
    cfg.steps = 30;
    cfg.batch_size = 2;
    cfg.corpus = corpus_manifest();
    cfg.out_dir = dir.string();
    cfg.seed = 12;
    cfg.threads = 2;
    cfg.val_every = 0;
    cfg.checkpoint_every = 0;
    auto bundle = load_teacher_bundle(train_teacher(cfg).checkpoint_path);

    const Schedule sched = default_schedule();
    Rng rng(99);
    auto z = TensorF::randn({bundle.codec.latent_channels(), 8, 8}, rng);
    for (int t = sched.steps; t >= 1; --t) {
        Tape<float> tape;
        ParamBinder<float> pb{tape, bundle.params, "teacher.", false};
        const int eps = denoiser_forward(tape, bundle.cfg, pb, tape.constant(z), t, -1);
        z = reverse_step(sched, z, tape.value(eps), t, rng);
    }
    REQUIRE(z.all_finite());
    auto img = clip01(bundle.codec.decode(z));
    for (float v : img.data) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }
}

TEST_CASE("RCOD_THREADS environment variable overrides the request") {
    setenv("RCOD_THREADS", "3", 1);
    CHECK(resolve_threads(8) == 3);
    unsetenv("RCOD_THREADS");
    CHECK(resolve_threads(2) == 2);
    CHECK(resolve_threads(0) >= 1);
}

TEST_CASE("student smoke run (teacher-free) trains and reloads") {
    auto dir = temp_dir("student_smoke");
    TrainConfig cfg;
    cfg.steps = 20;
    cfg.batch_size = 2;
    cfg.lambda_das = 0;  // teacher-free mode
    cfg.corpus = corpus_manifest();
    cfg.out_dir = dir.string();
    cfg.seed = 6;
    cfg.threads = 2;
    cfg.val_every = 10;
    cfg.checkpoint_every = 0;
    auto r = train_rcod(cfg, "");
    CHECK(std::isfinite(r.final_loss));
    auto bundle = load_student_bundle(r.checkpoint_path);
    CHECK(!bundle.params.empty());
    CHECK(bundle.grouping.m_min < bundle.grouping.m_max);
    CHECK_FALSE(bundle.noise_inject);
    // periodic validation wrote PSNR lines for every bucket timestep
    std::ifstream vlog(fs::path(dir.string()) / "student_val.jsonl");
    REQUIRE(vlog.good());
    std::string vline;
    int vlines = 0;
    while (std::getline(vlog, vline))
        if (!vline.empty()) {
            auto vj = json::parse(vline);
            CHECK(vj.contains("psnr_250"));
            CHECK(vj.contains("psnr_500"));
            CHECK(vj.contains("psnr_750"));
            ++vlines;
        }
    CHECK(vlines == 2);  // steps 20, val_every 10

    // missing teacher with a DAS weight is a config error
    TrainConfig bad = cfg;
    bad.lambda_das = 0.25;
    CHECK_THROWS_AS(train_rcod(bad, ""), ConfigError);
}

TEST_CASE("student run with teacher regularizer logs a sound decomposition") {
    auto tdir = temp_dir("full_teacher");
    TrainConfig tcfg;
    tcfg.steps = 15;
    tcfg.batch_size = 2;
    tcfg.corpus = corpus_manifest();
    tcfg.out_dir = tdir.string();
    tcfg.seed = 7;
    tcfg.threads = 2;
    tcfg.val_every = 0;
    tcfg.checkpoint_every = 0;
    auto teacher = train_teacher(tcfg);

    auto sdir = temp_dir("full_student");
    TrainConfig scfg = tcfg;
    scfg.steps = 12;
    scfg.checkpoint_every = 6;
    scfg.out_dir = sdir.string();
    scfg.noise_inject = true;  // exercise the forward-process reading too
    auto student = train_rcod(scfg, teacher.checkpoint_path);
    CHECK(std::isfinite(student.final_loss));
    auto bundle = load_student_bundle(student.checkpoint_path);
    CHECK(bundle.noise_inject);
    // cadence checkpoint exists and loads
    CHECK(!load_student_bundle((fs::path(sdir.string()) / "student_6.ckpt").string())
               .params.empty());

    std::ifstream log(fs::path(sdir.string()) / "student_log.jsonl");
    REQUIRE(log.good());
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line);
        ++lines;
        const double total = j.at("loss_total").get<double>();
        const double combo = 1.0 * j.at("loss_eps").get<double>() +
                             1.0 * j.at("loss_pix").get<double>() +
                             0.25 * j.at("loss_das").get<double>();
        CHECK(std::abs(total - combo) < 1e-6 * std::max(1.0, std::abs(total)));
        CHECK(j.at("loss_das").get<double>() > 0.0);
        CHECK(j.contains("t_histogram"));
        CHECK(j.at("step").is_number_integer());
    }
    CHECK(lines == scfg.steps);
}

TEST_CASE("bucket coverage over one epoch of the toy corpus") {
    auto entries = load_manifest(corpus_manifest());
    std::vector<PairedSample> pairs;
    for (const auto& e : entries) pairs.push_back(load_pair(e));
    std::vector<Image> hrs;
    for (const auto& p : pairs) hrs.push_back(p.hr);
    auto codec = LatentCodec::fit(hrs, 2);
    std::vector<double> metrics;
    for (const auto& p : pairs)
        metrics.push_back(latent_metric(codec.encode<float>(p.lr_up), codec.encode<float>(p.hr),
                                        MetricKind::cosine));
    auto [lo, hi] = fit_bounds(metrics);
    GroupingConfig grouping;
    grouping.m_min = lo;
    grouping.m_max = hi;
    std::map<int, int> hist;
    for (double m : metrics) ++hist[assign_timestep(m, grouping)];
    for (int t : {250, 500, 750})
        CHECK(double(hist[t]) >= 0.05 * double(pairs.size()));
}

// ---------------------------------------------------------------------------
// MEM training
// ---------------------------------------------------------------------------

TEST_CASE("mem smoke run reports and stays in range") {
    auto sdir = temp_dir("mem_student");
    TrainConfig scfg;
    scfg.steps = 10;
    scfg.batch_size = 2;
    scfg.lambda_das = 0;
    scfg.corpus = corpus_manifest();
    scfg.out_dir = sdir.string();
    scfg.seed = 8;
    scfg.threads = 2;
    scfg.val_every = 0;
    scfg.checkpoint_every = 0;
    auto student = train_rcod(scfg, "");

    auto mdir = temp_dir("mem_out");
    TrainConfig mcfg = scfg;
    mcfg.steps = 80;
    mcfg.batch_size = 8;
    mcfg.learning_rate = 1e-3;
    mcfg.out_dir = mdir.string();
    auto mem = train_mem(mcfg, student.checkpoint_path);
    CHECK(std::isfinite(mem.final_loss));
    CHECK(mem.stats.count("holdout_spearman") == 1);
    CHECK(fs::exists(fs::path(mdir.string()) / "mem_report.json"));

    auto bundle = load_mem_bundle(mem.checkpoint_path);
    Rng rng(9);
    for (int i = 0; i < 5; ++i) {
        auto z = TensorF::randn({4, 16, 16}, rng, 2.f);
        const double v = mem_predict(bundle.cfg, bundle.params, "mem.", z);
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("mem trains on student bottleneck features behind the flag") {
    auto sdir = temp_dir("mem_bottleneck_student");
    TrainConfig scfg;
    scfg.steps = 8;
    scfg.batch_size = 2;
    scfg.lambda_das = 0;
    scfg.corpus = corpus_manifest();
    scfg.out_dir = sdir.string();
    scfg.seed = 21;
    scfg.threads = 2;
    scfg.val_every = 0;
    scfg.checkpoint_every = 0;
    auto student = train_rcod(scfg, "");

    auto mdir = temp_dir("mem_bottleneck_out");
    TrainConfig mcfg = scfg;
    mcfg.steps = 40;
    mcfg.batch_size = 8;
    mcfg.learning_rate = 1e-3;
    mcfg.out_dir = mdir.string();
    auto mem = train_mem(mcfg, student.checkpoint_path, true);

    auto bundle = load_mem_bundle(mem.checkpoint_path);
    CHECK(bundle.cfg.bottleneck);
    CHECK(bundle.cfg.bottleneck_channels == 64);

    // adaptive inference resolves through the bottleneck feature path
    auto sb = load_student_bundle(student.checkpoint_path);
    auto pair = load_pair(load_manifest(corpus_manifest())[0]);
    auto inf = infer_image(sb, &bundle, pair.lr_up, "adaptive", 3);
    CHECK(inf.adaptive);
    CHECK(inf.t_used >= 250);
    CHECK(inf.t_used <= 750);
    CHECK(inf.m_hat >= -1.0);
    CHECK(inf.m_hat <= 1.0);
}

TEST_CASE("adaptive inference maps the midpoint estimate to the middle bucket") {
    // a zero-initialized MEM predicts exactly 0; with bounds (-1, 1) the
    // normalized metric is 0.5, which lands on t = 500
    auto sdir = temp_dir("adaptive_mid_student");
    TrainConfig scfg;
    scfg.steps = 6;
    scfg.batch_size = 2;
    scfg.lambda_das = 0;
    scfg.corpus = corpus_manifest();
    scfg.out_dir = sdir.string();
    scfg.seed = 31;
    scfg.threads = 2;
    scfg.val_every = 0;
    scfg.checkpoint_every = 0;
    auto student = load_student_bundle(train_rcod(scfg, "").checkpoint_path);

    MemBundle mem;
    mem.codec = student.codec;
    mem.grouping = student.grouping;
    mem.grouping.m_min = -1.0;
    mem.grouping.m_max = 1.0;
    mem.cfg.latent_channels = student.codec.latent_channels();
    mem.cfg.latent_size = 16;
    int in_dim = mem.cfg.feature_dim();
    for (size_t i = 0; i < mem.cfg.hidden.size(); ++i) {
        mem.params["mem.fc" + std::to_string(i) + ".w"] =
            TensorF::zeros({in_dim, mem.cfg.hidden[i]});
        mem.params["mem.fc" + std::to_string(i) + ".b"] = TensorF::zeros({mem.cfg.hidden[i]});
        in_dim = mem.cfg.hidden[i];
    }
    mem.params["mem.out.w"] = TensorF::zeros({in_dim, 1});
    mem.params["mem.out.b"] = TensorF::zeros({1});

    auto pair = load_pair(load_manifest(corpus_manifest())[0]);
    auto inf = infer_image(student, &mem, pair.lr_up, "adaptive", 0);
    CHECK(inf.adaptive);
    CHECK(inf.m_hat == 0.0);
    CHECK(inf.t_used == 500);
}

TEST_CASE("mem training on a constant-metric corpus fails with a clear message") {
    // every entry references the same image pair, so the metric value is
    // bitwise identical across the corpus
    auto dir = temp_dir("mem_degenerate");
    Rng rng(10);
    auto tex = synth_texture(32, rng);
    save_image(tex, (dir / "same.pgm").string());
    std::ofstream mf(dir / "manifest.jsonl");
    for (int i = 0; i < 8; ++i) {
        json j{{"index", i},
               {"hr_path", "same.pgm"},
               {"lr_path", "same.pgm"},
               {"blur_sigma", 0.2},
               {"noise_sigma", 0.0},
               {"scale", 4},
               {"quantize", false},
               {"seed", 0}};
        mf << j.dump() << "\n";
    }
    mf.close();

    auto sdir = temp_dir("mem_degenerate_student");
    TrainConfig scfg;
    scfg.steps = 5;
    scfg.batch_size = 2;
    scfg.lambda_das = 0;
    scfg.corpus = corpus_manifest();
    scfg.out_dir = sdir.string();
    scfg.threads = 1;
    scfg.val_every = 0;
    scfg.checkpoint_every = 0;
    auto student = train_rcod(scfg, "");

    TrainConfig mcfg = scfg;
    mcfg.corpus = (dir / "manifest.jsonl").string();
    try {
        (void)train_mem(mcfg, student.checkpoint_path);
        FAIL("expected DegenerateInputError");
    } catch (const DegenerateInputError& e) {
        CHECK(std::string(e.what()).find("identical") != std::string::npos);
    }
}
