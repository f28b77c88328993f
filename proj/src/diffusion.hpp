#pragma once

#include <cstdint>
#include <vector>

#include "config.hpp"
#include "tensor.hpp"

namespace motlab {

/// Per-timestep noising tables for t = 1..T. alpha_bar is the running
/// product of alpha, strictly decreasing; alpha_bar_at(0) == 1 by
/// convention (the clean end).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> sigma;

    double alpha_at(int t) const { return alpha[static_cast<std::size_t>(t - 1)]; }
    double alpha_bar_at(int t) const {
        return t == 0 ? 1.0 : alpha_bar[static_cast<std::size_t>(t - 1)];
    }
    double sigma_at(int t) const { return sigma[static_cast<std::size_t>(t - 1)]; }
};

/// abar(t) = f(t)/f(0) with f(t) = cos^2(((t/T + s)/(1+s)) * pi/2);
/// alpha_t = abar_t/abar_{t-1} floored at 0.001 (the cap on the ratio is
/// never active since f decreases strictly); alpha_bar is rebuilt as the
/// running product so the tables stay exactly consistent. sigma per
/// sigma_mode: ddpm_beta gives sqrt((1-abar_{t-1})/(1-abar_t) * (1-alpha_t)),
/// zero gives 0.
NoiseSchedule build_cosine_schedule(int T, double s, SigmaMode sigma_mode);
NoiseSchedule build_schedule(const DiffusionConfig& dc);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. Noise is caller-supplied
/// for determinism.
Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

/// x_{t-1} = (x_t - (1-alpha_t)/sqrt(1-abar_t) eps_pred) / sqrt(alpha_t)
///           + sigma_t z, with sigma forced to 0 at t=1.
Tensor reverse_step(const Tensor& x_t, int t, const Tensor& eps_pred, const Tensor& z,
                    const NoiseSchedule& sched);

/// Same update over a coarse jump t_hi -> t_lo (t_lo < t_hi): the effective
/// alpha is abar(t_hi)/abar(t_lo) and sigma is re-derived for the jump, so a
/// subsampled chain stays a valid DDPM sampler. reverse_step(t) is the
/// t_lo = t-1 case. sigma_mode zero keeps the jump deterministic.
Tensor reverse_step_between(const Tensor& x_t, int t_hi, int t_lo, const Tensor& eps_pred,
                            const Tensor& z, const NoiseSchedule& sched, SigmaMode sigma_mode);

/// Mean squared error over all coordinates.
double ddpm_loss(const Tensor& eps_pred, const Tensor& eps_true);

/// eps_uncond + w * (eps_cond - eps_uncond).
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double w);

/// L = lm_nll + lambda * ddpm_mse. Either term is 0 when its side has no
/// positions.
double combined_loss(double lm_nll_mean, double ddpm_mse_mean, double lambda);

/// The inference-time subsampled chain: `steps` timesteps descending from T,
/// uniform stride, always ending at 1.
std::vector<int> inference_timesteps(int T, int steps);

}  // namespace motlab
