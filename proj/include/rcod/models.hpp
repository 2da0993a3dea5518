#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "rcod/autograd.hpp"
#include "rcod/image.hpp"
#include "rcod/rng.hpp"
#include "rcod/tensor.hpp"

namespace rcod {

template <class F>
using Params = std::map<std::string, Tensor<F>>;

template <class G, class F>
Params<G> cast_params(const Params<F>& in) {
    Params<G> out;
    for (const auto& [k, v] : in) out.emplace(k, v.template cast<G>());
    return out;
}

template <class F>
Tensor<F> image_to_tensor(const Image& img) {
    Tensor<F> t({img.c, img.h, img.w});
    for (int c = 0; c < img.c; ++c)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) t.at(c, y, x) = F(img.at(y, x, c));
    return t;
}

// Binds a named parameter store onto a tape, either as trainable params or
// frozen constants. Tape gradient keys are prefix + name.
template <class F>
struct ParamBinder {
    Tape<F>& tape;
    const Params<F>& store;
    std::string prefix;
    bool trainable = true;

    ParamBinder(Tape<F>& tape_, const Params<F>& store_, std::string prefix_, bool trainable_)
        : tape(tape_), store(store_), prefix(std::move(prefix_)), trainable(trainable_) {}

    int operator()(const std::string& name) {
        auto cached = ids_.find(name);
        if (cached != ids_.end()) return cached->second;
        auto it = store.find(prefix + name);
        if (it == store.end()) throw ContractError("missing parameter: " + prefix + name);
        const int id =
            trainable ? tape.param(prefix + name, it->second) : tape.constant(it->second);
        ids_.emplace(name, id);
        return id;
    }

private:
    std::map<std::string, int> ids_;
};

// ---------------------------------------------------------------------------
// timestep embedding
// ---------------------------------------------------------------------------

// Raw sinusoidal embedding: wavelengths geometric between 1 and 1e4,
// [sin(t/l_i); cos(t/l_i)]. The learned projection lives in the denoiser.
inline std::vector<double> timestep_sinusoid(int t, int dim) {
    if (t < 1) throw ContractError("timestep_sinusoid: t must be >= 1");
    if (dim < 4 || dim % 2 != 0) throw ContractError("timestep_sinusoid: dim must be even, >= 4");
    const int half = dim / 2;
    std::vector<double> out(static_cast<size_t>(dim));
    for (int i = 0; i < half; ++i) {
        const double wavelength = std::pow(10000.0, double(i) / double(half - 1));
        out[size_t(i)] = std::sin(double(t) / wavelength);
        out[size_t(half + i)] = std::cos(double(t) / wavelength);
    }
    return out;
}

// ---------------------------------------------------------------------------
// configs
// ---------------------------------------------------------------------------

struct DenoiserConfig {
    int latent_channels = 4;
    int base_channels = 16;  // channel plan: base << level, two downsamples
    int levels = 2;
    int sinusoid_dim = 32;
    int t_embed_dim = 64;
    int tokens = 8;      // cross-attention key/value count
    int token_dim = 64;  // must equal bottleneck channels
    bool cross_attention = true;
    int group_channels = 4;

    int channels_at(int level) const { return base_channels << level; }
    int bottleneck_channels() const { return base_channels << levels; }
};

struct PromptConfig {
    int image_channels = 1;
    std::vector<int> channels = {8, 16, 32};  // stride-2 convs
    int tokens = 8;
    int token_dim = 64;
};

struct MemConfig {
    int latent_channels = 4;
    int latent_size = 16;
    std::vector<int> hidden = {128, 64};
    int pool = 8;
    // feature source: pooled z_L statistics (default) or pooled student
    // bottleneck activations probed at a fixed timestep
    bool bottleneck = false;
    int bottleneck_channels = 0;
    int probe_t = 500;

    int feature_dim() const {
        if (bottleneck) return bottleneck_channels * (2 + 4);  // mean, std, 2x2 map
        return latent_channels * (2 + pool * pool);
    }
};

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

namespace detail {

inline TensorF conv_init(int out_c, int in_c, int k, Rng& rng) {
    const float std = std::sqrt(2.f / float(in_c * k * k));
    return TensorF::randn({out_c, in_c, k, k}, rng, std);
}

inline TensorF linear_init(int in_dim, int out_dim, Rng& rng) {
    const float std = std::sqrt(1.f / float(in_dim));
    return TensorF::randn({in_dim, out_dim}, rng, std);
}

}  // namespace detail

// Parameter names are relative; callers store them under a net prefix
// ("denoiser.", "teacher.", "prompt.", "mem.").
inline Params<float> init_denoiser(const DenoiserConfig& cfg, Rng& rng) {
    Params<float> p;
    p["t_proj1.w"] = detail::linear_init(cfg.sinusoid_dim, cfg.t_embed_dim, rng);
    p["t_proj1.b"] = TensorF::zeros({cfg.t_embed_dim});
    p["t_proj2.w"] = detail::linear_init(cfg.t_embed_dim, cfg.t_embed_dim, rng);
    p["t_proj2.b"] = TensorF::zeros({cfg.t_embed_dim});

    auto film = [&](const std::string& name, int ch) {
        // zero-init: conditioning starts as identity
        p[name + "_s.w"] = TensorF::zeros({cfg.t_embed_dim, ch});
        p[name + "_s.b"] = TensorF::zeros({ch});
        p[name + "_t.w"] = TensorF::zeros({cfg.t_embed_dim, ch});
        p[name + "_t.b"] = TensorF::zeros({ch});
    };
    auto block = [&](const std::string& name, int ch) {
        p[name + ".conv.w"] = detail::conv_init(ch, ch, 3, rng);
        p[name + ".conv.b"] = TensorF::zeros({ch});
        p[name + ".gn.g"] = TensorF::full({ch}, 1.f);
        p[name + ".gn.b"] = TensorF::zeros({ch});
        film(name + ".film", ch);
    };

    p["stem.w"] = detail::conv_init(cfg.channels_at(0), cfg.latent_channels, 3, rng);
    p["stem.b"] = TensorF::zeros({cfg.channels_at(0)});
    for (int i = 0; i < cfg.levels; ++i) {
        block("enc" + std::to_string(i), cfg.channels_at(i));
        p["down" + std::to_string(i) + ".w"] =
            detail::conv_init(cfg.channels_at(i + 1), cfg.channels_at(i), 3, rng);
        p["down" + std::to_string(i) + ".b"] = TensorF::zeros({cfg.channels_at(i + 1)});
    }
    block("mid1", cfg.bottleneck_channels());
    block("mid2", cfg.bottleneck_channels());
    if (cfg.cross_attention) {
        const int d = cfg.bottleneck_channels();
        p["attn.gn.g"] = TensorF::full({d}, 1.f);
        p["attn.gn.b"] = TensorF::zeros({d});
        p["attn.wq"] = detail::linear_init(d, d, rng);
        p["attn.wk"] = detail::linear_init(cfg.token_dim, d, rng);
        p["attn.wv"] = detail::linear_init(cfg.token_dim, d, rng);
        p["attn.wo"] = TensorF::zeros({d, d});  // residual branch silent at init
    }
    for (int i = cfg.levels - 1; i >= 0; --i) {
        p["up" + std::to_string(i) + ".w"] =
            detail::conv_init(cfg.channels_at(i), cfg.channels_at(i + 1), 3, rng);
        p["up" + std::to_string(i) + ".b"] = TensorF::zeros({cfg.channels_at(i)});
        block("dec" + std::to_string(i), cfg.channels_at(i));
    }
    p["head.w"] = TensorF::zeros({cfg.latent_channels, cfg.channels_at(0), 3, 3});
    p["head.b"] = TensorF::zeros({cfg.latent_channels});
    return p;
}

inline Params<float> init_prompt_encoder(const PromptConfig& cfg, Rng& rng) {
    Params<float> p;
    int in_c = cfg.image_channels;
    for (size_t i = 0; i < cfg.channels.size(); ++i) {
        p["conv" + std::to_string(i) + ".w"] = detail::conv_init(cfg.channels[i], in_c, 3, rng);
        p["conv" + std::to_string(i) + ".b"] = TensorF::zeros({cfg.channels[i]});
        in_c = cfg.channels[i];
    }
    p["align.w"] = detail::linear_init(cfg.channels.back(), cfg.token_dim, rng);
    p["align.b"] = TensorF::zeros({cfg.token_dim});
    return p;
}

inline Params<float> init_mem(const MemConfig& cfg, Rng& rng) {
    Params<float> p;
    int in_dim = cfg.feature_dim();
    for (size_t i = 0; i < cfg.hidden.size(); ++i) {
        p["fc" + std::to_string(i) + ".w"] = detail::linear_init(in_dim, cfg.hidden[i], rng);
        p["fc" + std::to_string(i) + ".b"] = TensorF::zeros({cfg.hidden[i]});
        in_dim = cfg.hidden[i];
    }
    p["out.w"] = TensorF::zeros({in_dim, 1});
    p["out.b"] = TensorF::zeros({1});
    return p;
}

// ---------------------------------------------------------------------------
// forward graphs
// ---------------------------------------------------------------------------

namespace detail {

template <class F>
int linear(Tape<F>& tape, int x, int w, int b) {
    return tape.add_rowvec(tape.matmul(x, w), b);
}

// Projected timestep embedding as a [1, t_embed_dim] matrix.
template <class F>
int timestep_embedding(Tape<F>& tape, const DenoiserConfig& cfg, ParamBinder<F>& pb, int t) {
    const auto raw = timestep_sinusoid(t, cfg.sinusoid_dim);
    Tensor<F> rawt({1, cfg.sinusoid_dim});
    for (int i = 0; i < cfg.sinusoid_dim; ++i) rawt.data[size_t(i)] = F(raw[size_t(i)]);
    int e = tape.constant(std::move(rawt));
    e = tape.silu(linear(tape, e, pb("t_proj1.w"), pb("t_proj1.b")));
    return linear(tape, e, pb("t_proj2.w"), pb("t_proj2.b"));
}

// conv -> group norm -> FiLM(t) -> silu
template <class F>
int cond_block(Tape<F>& tape, const DenoiserConfig& cfg, ParamBinder<F>& pb,
               const std::string& name, int x, int temb, int ch) {
    int h = tape.conv2d(x, pb(name + ".conv.w"), pb(name + ".conv.b"), 1, 1);
    h = tape.group_norm(h, pb(name + ".gn.g"), pb(name + ".gn.b"), cfg.group_channels, F(1e-5));
    int s = tape.reshape(linear(tape, temb, pb(name + ".film_s.w"), pb(name + ".film_s.b")), {ch});
    int t_ = tape.reshape(linear(tape, temb, pb(name + ".film_t.w"), pb(name + ".film_t.b")), {ch});
    h = tape.channel_affine(h, tape.add_scalar(s, F(1)), t_);
    return tape.silu(h);
}

template <class F>
int cross_attention(Tape<F>& tape, const DenoiserConfig& cfg, ParamBinder<F>& pb, int h,
                    int tokens) {
    const int ch = tape.value(h).dim(0);
    const int hh = tape.value(h).dim(1), ww = tape.value(h).dim(2);
    int hn = tape.group_norm(h, pb("attn.gn.g"), pb("attn.gn.b"), cfg.group_channels, F(1e-5));
    int x = tape.transpose(tape.reshape(hn, {ch, hh * ww}));  // [HW, ch]
    int q = tape.matmul(x, pb("attn.wq"));
    int k = tape.matmul(tokens, pb("attn.wk"));
    int v = tape.matmul(tokens, pb("attn.wv"));
    int logits = tape.scale(tape.matmul(q, tape.transpose(k)), F(1) / F(std::sqrt(double(ch))));
    int attn = tape.softmax_rows(logits);
    int out = tape.matmul(tape.matmul(attn, v), pb("attn.wo"));
    int spatial = tape.reshape(tape.transpose(out), {ch, hh, ww});
    return tape.add(h, spatial);
}

}  // namespace detail

// Noise predictor. z_in: [C,H,W] latent; prompt_tokens: [K, token_dim] tape
// id or -1 for the unconditioned (teacher) variant. Timestep enters every
// block via FiLM; the prompt enters once via bottleneck cross-attention.
// bottleneck_out, when given, receives the id of the mid-block activations.
template <class F>
int denoiser_forward(Tape<F>& tape, const DenoiserConfig& cfg, ParamBinder<F>& pb, int z_in, int t,
                     int prompt_tokens, int* bottleneck_out = nullptr) {
    const auto& zshape = tape.value(z_in).shape;
    if (zshape.size() != 3 || zshape[0] != cfg.latent_channels)
        throw DimensionError("denoiser_forward: latent shape mismatch");
    int temb = detail::timestep_embedding(tape, cfg, pb, t);

    int h = tape.conv2d(z_in, pb("stem.w"), pb("stem.b"), 1, 1);
    std::vector<int> skips;
    for (int i = 0; i < cfg.levels; ++i) {
        h = detail::cond_block(tape, cfg, pb, "enc" + std::to_string(i), h, temb,
                               cfg.channels_at(i));
        skips.push_back(h);
        h = tape.conv2d(h, pb("down" + std::to_string(i) + ".w"),
                        pb("down" + std::to_string(i) + ".b"), 2, 1);
    }
    h = detail::cond_block(tape, cfg, pb, "mid1", h, temb, cfg.bottleneck_channels());
    if (bottleneck_out) *bottleneck_out = h;
    if (cfg.cross_attention && prompt_tokens >= 0)
        h = detail::cross_attention(tape, cfg, pb, h, prompt_tokens);
    h = detail::cond_block(tape, cfg, pb, "mid2", h, temb, cfg.bottleneck_channels());
    for (int i = cfg.levels - 1; i >= 0; --i) {
        h = tape.conv2d(tape.upsample_nearest2(h), pb("up" + std::to_string(i) + ".w"),
                        pb("up" + std::to_string(i) + ".b"), 1, 1);
        h = tape.add(h, skips[size_t(i)]);
        h = detail::cond_block(tape, cfg, pb, "dec" + std::to_string(i), h, temb,
                               cfg.channels_at(i));
    }
    return tape.conv2d(h, pb("head.w"), pb("head.b"), 1, 1);
}

// Visual prompt encoder: stride-2 conv stack on the LR image, spatial
// pooling to K cells, shared linear alignment to token_dim. Returns
// [K, token_dim].
template <class F>
int prompt_forward(Tape<F>& tape, const PromptConfig& cfg, ParamBinder<F>& pb, int lr_image) {
    int h = lr_image;
    for (size_t i = 0; i < cfg.channels.size(); ++i) {
        h = tape.conv2d(h, pb("conv" + std::to_string(i) + ".w"),
                        pb("conv" + std::to_string(i) + ".b"), 2, 1);
        h = tape.silu(h);
    }
    // K = gh * gw pooling grid, as square as the token count allows
    int gh = 1;
    for (int d = 1; d * d <= cfg.tokens; ++d)
        if (cfg.tokens % d == 0) gh = d;
    const int gw = cfg.tokens / gh;
    const auto& hs = tape.value(h).shape;
    if (hs[1] % gh != 0 || hs[2] % gw != 0)
        throw DimensionError("prompt_forward: token grid does not divide the feature map");
    int pooled = tape.avg_pool(h, gh, gw);                                // [C, gh, gw]
    int cells = tape.transpose(tape.reshape(pooled, {hs[0], gh * gw}));   // [K, C]
    return detail::linear(tape, cells, pb("align.w"), pb("align.b"));    // [K, D]
}

// MEM input features: per-channel mean, per-channel std, and the 8x8
// average-pooled map, concatenated.
template <class F>
Tensor<F> mem_features(const MemConfig& cfg, const Tensor<F>& z_l) {
    if (z_l.ndim() != 3 || z_l.dim(0) != cfg.latent_channels)
        throw DimensionError("mem_features: latent shape mismatch");
    const int C = z_l.dim(0), H = z_l.dim(1), W = z_l.dim(2);
    if (H % cfg.pool != 0 || W % cfg.pool != 0)
        throw DimensionError("mem_features: pooled grid must divide the latent dims");
    Tensor<F> feat({cfg.feature_dim()});
    const int64_t hw = int64_t(H) * W;
    for (int c = 0; c < C; ++c) {
        const F* row = &z_l.at(c, 0, 0);
        F mean = 0;
        for (int64_t i = 0; i < hw; ++i) mean += row[i];
        mean /= F(hw);
        F var = 0;
        for (int64_t i = 0; i < hw; ++i) var += (row[i] - mean) * (row[i] - mean);
        var /= F(hw);
        feat.data[size_t(c)] = mean;
        feat.data[size_t(C + c)] = std::sqrt(var + F(1e-8));
    }
    const int bh = H / cfg.pool, bw = W / cfg.pool;
    const F inv = F(1) / F(bh * bw);
    size_t k = size_t(2 * C);
    for (int c = 0; c < C; ++c)
        for (int py = 0; py < cfg.pool; ++py)
            for (int px = 0; px < cfg.pool; ++px) {
                F acc = 0;
                for (int dy = 0; dy < bh; ++dy)
                    for (int dx = 0; dx < bw; ++dx) acc += z_l.at(c, py * bh + dy, px * bw + dx);
                feat.data[k++] = acc * inv;
            }
    return feat;
}

// MLP over a feature row [1, dim] without the range clamp. The trainer
// regresses this value: clamping during optimization would zero the gradient
// whenever a prediction strays outside [-1, 1] and freeze it there.
template <class F>
int mem_mlp_raw(Tape<F>& tape, const MemConfig& cfg, ParamBinder<F>& pb, int feat_row) {
    int x = feat_row;
    for (size_t i = 0; i < cfg.hidden.size(); ++i)
        x = tape.silu(detail::linear(tape, x, pb("fc" + std::to_string(i) + ".w"),
                                     pb("fc" + std::to_string(i) + ".b")));
    int out = detail::linear(tape, x, pb("out.w"), pb("out.b"));
    return tape.reshape(out, {1});
}

// Metric estimation head: pooled z_L statistics -> MLP -> clamp to [-1, 1].
template <class F>
int mem_forward(Tape<F>& tape, const MemConfig& cfg, ParamBinder<F>& pb, int z_l) {
    const int feat =
        tape.constant(Tensor<F>(std::vector<int>{1, cfg.feature_dim()},
                                mem_features(cfg, tape.value(z_l)).data));
    return tape.clamp(mem_mlp_raw(tape, cfg, pb, feat), F(-1), F(1));
}

// Alternative MEM input (behind the trainer's feature flag): pooled student
// bottleneck activations probed at a fixed timestep. Mean, std, and a 2x2
// average map per bottleneck channel.
template <class F>
Tensor<F> mem_bottleneck_features(const MemConfig& mcfg, const DenoiserConfig& dcfg,
                                  const PromptConfig& pcfg, const Params<F>& student,
                                  const LatentCodec& codec, const Image& lr_up) {
    Tape<F> tape;
    ParamBinder<F> denoiser_pb{tape, student, "denoiser.", false};
    ParamBinder<F> prompt_pb{tape, student, "prompt.", false};
    const int tokens =
        prompt_forward(tape, pcfg, prompt_pb, tape.constant(image_to_tensor<F>(lr_up)));
    int mid = -1;
    (void)denoiser_forward(tape, dcfg, denoiser_pb, tape.constant(codec.encode<F>(lr_up)),
                           mcfg.probe_t, tokens, &mid);
    const Tensor<F>& h = tape.value(mid);
    const int C = h.dim(0), H = h.dim(1), W = h.dim(2);
    if (C != mcfg.bottleneck_channels)
        throw DimensionError("mem_bottleneck_features: channel mismatch");
    Tensor<F> feat({mcfg.feature_dim()});
    const int64_t hw = int64_t(H) * W;
    for (int c = 0; c < C; ++c) {
        const F* row = &h.at(c, 0, 0);
        F mean = 0;
        for (int64_t i = 0; i < hw; ++i) mean += row[i];
        mean /= F(hw);
        F var = 0;
        for (int64_t i = 0; i < hw; ++i) var += (row[i] - mean) * (row[i] - mean);
        feat.data[size_t(c)] = mean;
        feat.data[size_t(C + c)] = std::sqrt(var / F(hw) + F(1e-8));
    }
    const int bh = H / 2, bw = W / 2;
    size_t k = size_t(2 * C);
    for (int c = 0; c < C; ++c)
        for (int py = 0; py < 2; ++py)
            for (int px = 0; px < 2; ++px) {
                F acc = 0;
                for (int dy = 0; dy < bh; ++dy)
                    for (int dx = 0; dx < bw; ++dx) acc += h.at(c, py * bh + dy, px * bw + dx);
                feat.data[k++] = acc / F(bh * bw);
            }
    return feat;
}

// Eager MLP evaluation over a prebuilt feature vector.
template <class F>
double mem_predict_features(const MemConfig& cfg, const Params<F>& params,
                            const std::string& prefix, const Tensor<F>& features) {
    if (features.numel() != cfg.feature_dim())
        throw DimensionError("mem_predict_features: feature dim mismatch");
    Tape<F> tape;
    ParamBinder<F> pb{tape, params, prefix, false};
    const int row =
        tape.constant(Tensor<F>(std::vector<int>{1, cfg.feature_dim()}, features.data));
    const int out = tape.clamp(mem_mlp_raw(tape, cfg, pb, row), F(-1), F(1));
    return double(tape.value(out).data[0]);
}

// Eager MEM evaluation from z_L statistics (the default feature source).
template <class F>
double mem_predict(const MemConfig& cfg, const Params<F>& params, const std::string& prefix,
                   const Tensor<F>& z_l) {
    if (cfg.bottleneck)
        throw ContractError("mem_predict: bottleneck mode requires mem_predict_features");
    Tape<F> tape;
    ParamBinder<F> pb{tape, params, prefix, false};
    const int out = mem_forward(tape, cfg, pb, tape.constant(z_l));
    return double(tape.value(out).data[0]);
}

}  // namespace rcod
