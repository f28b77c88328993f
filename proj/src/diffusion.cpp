#include "diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace motlab {

NoiseSchedule build_cosine_schedule(int T, double s, SigmaMode sigma_mode) {
    check(T >= 1, "schedule: T must be >= 1");
    check(s > 0, "schedule: s must be positive");
    NoiseSchedule sc;
    sc.T = T;
    auto f = [&](double t) {
        const double x = ((t / static_cast<double>(T) + s) / (1.0 + s)) * std::numbers::pi / 2.0;
        const double c = std::cos(x);
        return c * c;
    };
    const double f0 = f(0.0);
    double prev_raw = 1.0;
    double running = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double raw = f(static_cast<double>(t)) / f0;
        const double a = std::max(raw / prev_raw, 0.001);
        prev_raw = raw;
        running *= a;
        sc.alpha.push_back(a);
        sc.alpha_bar.push_back(running);
    }
    for (int t = 1; t <= T; ++t) {
        if (sigma_mode == SigmaMode::zero) {
            sc.sigma.push_back(0.0);
            continue;
        }
        const double ab_prev = sc.alpha_bar_at(t - 1);
        const double ab = sc.alpha_bar_at(t);
        sc.sigma.push_back(std::sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - sc.alpha_at(t))));
    }
    return sc;
}

NoiseSchedule build_schedule(const DiffusionConfig& dc) {
    return build_cosine_schedule(dc.T, dc.s_offset, dc.sigma_mode);
}

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    check(t >= 1 && t <= sched.T, "forward_noise: t out of range");
    check(x0.shape() == eps.shape(), "forward_noise: eps shape mismatch");
    const double ab = sched.alpha_bar_at(t);
    return axpy(scale(x0, std::sqrt(ab)), std::sqrt(1.0 - ab), eps);
}

Tensor reverse_step_between(const Tensor& x_t, int t_hi, int t_lo, const Tensor& eps_pred,
                            const Tensor& z, const NoiseSchedule& sched, SigmaMode sigma_mode) {
    check(t_hi >= 1 && t_hi <= sched.T, "reverse_step: t out of range");
    check(t_lo >= 0 && t_lo < t_hi, "reverse_step: t_lo must be in [0, t_hi)");
    check(x_t.shape() == eps_pred.shape(), "reverse_step: eps shape mismatch");
    const double ab_hi = sched.alpha_bar_at(t_hi);
    const double ab_lo = sched.alpha_bar_at(t_lo);
    const double a = ab_hi / ab_lo;
    Tensor x = axpy(x_t, -(1.0 - a) / std::sqrt(1.0 - ab_hi), eps_pred);
    scale_inplace(x, 1.0 / std::sqrt(a));
    double sig = 0.0;
    if (sigma_mode == SigmaMode::ddpm_beta && t_lo >= 1)
        sig = std::sqrt((1.0 - ab_lo) / (1.0 - ab_hi) * (1.0 - a));
    if (sig != 0.0) {
        check(x.shape() == z.shape(), "reverse_step: z shape mismatch");
        x = axpy(x, sig, z);
    }
    return x;
}

Tensor reverse_step(const Tensor& x_t, int t, const Tensor& eps_pred, const Tensor& z,
                    const NoiseSchedule& sched) {
    check(t >= 1 && t <= sched.T, "reverse_step: t out of range");
    check(x_t.shape() == eps_pred.shape(), "reverse_step: eps shape mismatch");
    const double a = sched.alpha_at(t);
    const double ab = sched.alpha_bar_at(t);
    Tensor x = axpy(x_t, -(1.0 - a) / std::sqrt(1.0 - ab), eps_pred);
    scale_inplace(x, 1.0 / std::sqrt(a));
    const double sig = t == 1 ? 0.0 : sched.sigma_at(t);
    if (sig != 0.0) {
        check(x.shape() == z.shape(), "reverse_step: z shape mismatch");
        x = axpy(x, sig, z);
    }
    return x;
}

double ddpm_loss(const Tensor& eps_pred, const Tensor& eps_true) {
    check(eps_pred.shape() == eps_true.shape(), "ddpm_loss: shape mismatch");
    double s = 0;
    for (std::int64_t i = 0; i < eps_pred.numel(); ++i) {
        const double d = eps_pred.at(i) - eps_true.at(i);
        s += d * d;
    }
    return s / static_cast<double>(eps_pred.numel());
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double w) {
    check(w >= 0, "cfg_combine: w must be >= 0");
    return axpy(eps_uncond, w, sub(eps_cond, eps_uncond));
}

double combined_loss(double lm_nll_mean, double ddpm_mse_mean, double lambda) {
    check(lambda >= 0, "combined_loss: lambda must be >= 0");
    return lm_nll_mean + lambda * ddpm_mse_mean;
}

std::vector<int> inference_timesteps(int T, int steps) {
    check(T >= 1 && steps >= 1, "inference_timesteps: bad arguments");
    steps = std::min(steps, T);
    std::vector<int> ts;
    int prev = -1;
    for (int i = 0; i < steps; ++i) {
        // uniform stride from T down to 1 inclusive
        int t = static_cast<int>(std::llround(
            static_cast<double>(T) - static_cast<double>(i) * (T - 1) / std::max(steps - 1, 1)));
        t = std::clamp(t, 1, T);
        if (t != prev) ts.push_back(t);
        prev = t;
    }
    if (ts.back() != 1) ts.push_back(1);
    return ts;
}

}  // namespace motlab
