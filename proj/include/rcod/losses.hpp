#pragma once

#include "rcod/autograd.hpp"
#include "rcod/codec.hpp"
#include "rcod/degrade.hpp"
#include "rcod/grouping.hpp"
#include "rcod/models.hpp"
#include "rcod/schedule.hpp"

namespace rcod {

template <class F>
struct RcodLossOutput {
    int total_id = -1;
    double loss_eps = 0;  // latent restoration term, unweighted
    double loss_pix = 0;  // pixel term, unweighted
    double loss_das = 0;  // distillation regularizer, unweighted
    int t_assigned = 0;
};

struct RcodLossWeights {
    double lambda_eps = 1.0;
    double lambda_pix = 1.0;
    double lambda_das = 0.25;
};

// Builds the per-sample training graph:
//   z_L, z_H        from the codec
//   t               from the latent metric and the bucket map
//   z_in            z_L directly (default) or re-noised at level t
//   eps_hat         student prediction with prompt tokens and timestep t
//   zH_hat          one-step restoration (z_in - sigma_t eps_hat)/alpha_t
//   loss            lambda_eps * mse(zH_hat, z_H)
//                 + lambda_pix * mse(decode(zH_hat), hr)
//                 + lambda_das * mse(teacher(renoise(zH_hat, t_r)), eps')
// The DAS term re-noises the restored latent at t_r ~ U[max(20,t-k),
// min(980,t+k)] with fresh noise; the teacher is bound as constants so
// gradients reach the student only. Loss terms are means over elements.
template <class F>
RcodLossOutput<F> build_rcod_loss(Tape<F>& tape, const PairedSample& pair,
                                  const LatentCodec& codec, const Schedule& sched,
                                  const GroupingConfig& grouping, const DenoiserConfig& dcfg,
                                  const PromptConfig& pcfg, const Params<F>& trainable,
                                  const DenoiserConfig* teacher_cfg, const Params<F>* teacher,
                                  const RcodLossWeights& weights, bool noise_inject,
                                  MetricKind metric_kind, Rng& rng) {
    RcodLossOutput<F> out;

    const Tensor<F> z_l = codec.encode<F>(pair.lr_up);
    const Tensor<F> z_h = codec.encode<F>(pair.hr);
    const double metric = latent_metric(z_l, z_h, metric_kind);
    const int t = assign_timestep(metric, grouping);
    out.t_assigned = t;

    Tensor<F> z_in_value = noise_inject ? forward_diffuse(sched, z_l, t, rng).z_t : z_l;
    const int z_in = tape.constant(std::move(z_in_value));

    ParamBinder<F> student_pb{tape, trainable, "denoiser.", true};
    ParamBinder<F> prompt_pb{tape, trainable, "prompt.", true};
    const int lr_id = tape.constant(image_to_tensor<F>(pair.lr_up));
    const int tokens = prompt_forward(tape, pcfg, prompt_pb, lr_id);
    const int eps_hat = denoiser_forward(tape, dcfg, student_pb, z_in, t, tokens);

    const F alpha = F(sched.alpha_cum[size_t(t)]);
    const F sigma = F(sched.sigma[size_t(t)]);
    const int zh_hat =
        tape.scale(tape.sub(z_in, tape.scale(eps_hat, sigma)), F(1) / alpha);

    const int eps_term = tape.mse(zh_hat, tape.constant(z_h));
    out.loss_eps = double(tape.value(eps_term).data[0]);

    // pixel loss on the latent grid: decoding is a per-channel descale plus a
    // permutation, and the mean-square error is permutation invariant
    const int lc = codec.latent_channels();
    Tensor<F> inv_scales({lc});
    for (int c = 0; c < lc; ++c) inv_scales.data[size_t(c)] = F(1.0 / codec.scales()[size_t(c)]);
    const int decoded =
        tape.channel_affine(zh_hat, tape.constant(std::move(inv_scales)),
                            tape.constant(Tensor<F>::zeros({lc})));
    const Tensor<F> hr_pix =
        LatentCodec::identity(pair.hr.c, codec.factor()).encode<F>(pair.hr);
    const int pix_term = tape.mse(decoded, tape.constant(hr_pix));
    out.loss_pix = double(tape.value(pix_term).data[0]);

    int total = tape.add(tape.scale(eps_term, F(weights.lambda_eps)),
                         tape.scale(pix_term, F(weights.lambda_pix)));

    if (teacher && teacher_cfg && weights.lambda_das > 0.0) {
        const int t_r = das_sample(t, grouping, rng);
        const Tensor<F> eps_prime = Tensor<F>::randn(tape.value(zh_hat).shape, rng);
        const F a_r = F(sched.alpha_cum[size_t(t_r)]);
        const F s_r = F(sched.sigma[size_t(t_r)]);
        Tensor<F> noise_part = eps_prime;
        for (auto& v : noise_part.data) v *= s_r;
        const int renoised =
            tape.add(tape.scale(zh_hat, a_r), tape.constant(std::move(noise_part)));
        ParamBinder<F> teacher_pb{tape, *teacher, "teacher.", false};
        const int teacher_eps = denoiser_forward(tape, *teacher_cfg, teacher_pb, renoised, t_r, -1);
        const int das_term = tape.mse(teacher_eps, tape.constant(eps_prime));
        out.loss_das = double(tape.value(das_term).data[0]);
        total = tape.add(total, tape.scale(das_term, F(weights.lambda_das)));
    }

    out.total_id = total;
    return out;
}

// Teacher pretraining graph: epsilon-matching at a uniformly random timestep
// on the clean HR latent.
template <class F>
struct TeacherLossOutput {
    int total_id = -1;
    double loss = 0;
    int t = 0;
};

template <class F>
TeacherLossOutput<F> build_teacher_loss(Tape<F>& tape, const Image& hr, const LatentCodec& codec,
                                        const Schedule& sched, const DenoiserConfig& cfg,
                                        const Params<F>& trainable, Rng& rng) {
    const int t = int(rng.uniform_int(1, sched.steps));
    const Tensor<F> z0 = codec.encode<F>(hr);
    auto ns = forward_diffuse(sched, z0, t, rng);
    ParamBinder<F> pb{tape, trainable, "teacher.", true};
    const int eps_hat = denoiser_forward(tape, cfg, pb, tape.constant(ns.z_t), t, -1);
    const int loss = tape.mse(eps_hat, tape.constant(ns.eps));
    TeacherLossOutput<F> out;
    out.total_id = loss;
    out.loss = double(tape.value(loss).data[0]);
    out.t = t;
    return out;
}

}  // namespace rcod
