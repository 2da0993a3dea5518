#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rcod/errors.hpp"
#include "rcod/rng.hpp"
#include "rcod/tensor.hpp"

namespace rcod {

// Diffusion variance schedule. Tables are 1-indexed by timestep; index 0
// holds the conventions alpha_cum[0] = 1, sigma[0] = 0 used by the reverse
// step's posterior variance. Note alpha_cum is the cumulative product of
// sqrt(1 - beta_s), so alpha_cum[t]^2 + sigma[t]^2 = 1.
struct Schedule {
    int steps = 0;
    std::vector<double> beta;
    std::vector<double> alpha_cum;
    std::vector<double> sigma;

    void check_t(int t) const {
        if (t < 1 || t > steps)
            throw ContractError("timestep " + std::to_string(t) + " outside [1, " +
                                std::to_string(steps) + "]");
    }
};

Schedule build_schedule(int steps, double beta_start, double beta_end);

inline Schedule default_schedule() { return build_schedule(1000, 1e-4, 0.02); }

template <class F>
struct NoisySample {
    Tensor<F> z_t;
    int t = 0;
    Tensor<F> eps;
};

// Single Markov step q(z_t | z_{t-1}).
template <class F>
Tensor<F> forward_step(const Schedule& s, const Tensor<F>& z_prev, int t, Rng& rng) {
    s.check_t(t);
    const F a = F(std::sqrt(1.0 - s.beta[size_t(t)]));
    const F b = F(std::sqrt(s.beta[size_t(t)]));
    Tensor<F> out = z_prev;
    for (auto& v : out.data) v = a * v + b * F(rng.normal());
    return out;
}

// Closed-form marginal z_t = alpha_cum[t] * z0 + sigma[t] * eps.
template <class F>
NoisySample<F> forward_diffuse(const Schedule& s, const Tensor<F>& z0, int t, Rng& rng) {
    s.check_t(t);
    const F a = F(s.alpha_cum[size_t(t)]);
    const F sg = F(s.sigma[size_t(t)]);
    NoisySample<F> ns;
    ns.t = t;
    ns.eps = Tensor<F>::randn(z0.shape, rng);
    ns.z_t = z0;
    for (size_t i = 0; i < ns.z_t.data.size(); ++i)
        ns.z_t.data[i] = a * z0.data[i] + sg * ns.eps.data[i];
    return ns;
}

// DDPM ancestral step; adds posterior noise except at the final step t=1.
// Used only by the multi-step teacher.
template <class F>
Tensor<F> reverse_step(const Schedule& s, const Tensor<F>& z_t, const Tensor<F>& eps_pred, int t,
                       Rng& rng) {
    s.check_t(t);
    if (!z_t.same_shape(eps_pred)) throw DimensionError("reverse_step: shape mismatch");
    const double beta = s.beta[size_t(t)];
    const F mean_scale = F(1.0 / std::sqrt(1.0 - beta));
    const F eps_coef = F(beta / s.sigma[size_t(t)]);
    const double s_prev = s.sigma[size_t(t) - 1];
    const double s_cur = s.sigma[size_t(t)];
    const double beta_tilde = t > 1 ? (s_prev * s_prev) / (s_cur * s_cur) * beta : 0.0;
    const F noise_scale = F(std::sqrt(beta_tilde));
    Tensor<F> out = z_t;
    for (size_t i = 0; i < out.data.size(); ++i) {
        F v = mean_scale * (z_t.data[i] - eps_coef * eps_pred.data[i]);
        if (t > 1) v += noise_scale * F(rng.normal());
        out.data[i] = v;
    }
    return out;
}

// One-step latent restoration: (z_in - sigma[t] * eps_pred) / alpha_cum[t].
// Inverts forward_diffuse when eps_pred is the true noise.
template <class F>
Tensor<F> one_step_restore(const Schedule& s, const Tensor<F>& z_in, const Tensor<F>& eps_pred,
                           int t) {
    s.check_t(t);
    if (!z_in.same_shape(eps_pred)) throw DimensionError("one_step_restore: shape mismatch");
    const double a = s.alpha_cum[size_t(t)];
    if (a <= 1e-6)
        throw NumericRangeError("one_step_restore: vanishing signal coefficient at t=" +
                                std::to_string(t));
    const F af = F(a);
    const F sg = F(s.sigma[size_t(t)]);
    Tensor<F> out = z_in;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = (z_in.data[i] - sg * eps_pred.data[i]) / af;
    return out;
}

}  // namespace rcod
