#include "train.hpp"

#include <cmath>
#include <numbers>

namespace motlab {

double lr_at(const TrainHparams& hp, std::int64_t step) {
    if (hp.warmup_steps > 0 && step < hp.warmup_steps)
        return hp.lr * static_cast<double>(step + 1) / static_cast<double>(hp.warmup_steps);
    const std::int64_t span = std::max<std::int64_t>(hp.steps - hp.warmup_steps, 1);
    const double frac =
        std::min(1.0, static_cast<double>(step - hp.warmup_steps) / static_cast<double>(span));
    return hp.lr_floor + 0.5 * (hp.lr - hp.lr_floor) * (1.0 + std::cos(std::numbers::pi * frac));
}

double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm) {
    double sq = 0;
    for (const auto& [k, g] : grads) sq += g.sq_norm();
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& [k, g] : grads) scale_inplace(g, s);
    }
    return norm;
}

void adamw_update(ParamStore& params, OptimizerState& opt,
                  const std::map<std::string, Tensor>& grads, double lr, const TrainHparams& hp) {
    ++opt.step;
    const double b1 = hp.adam_beta1, b2 = hp.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(opt.step));
    params.for_each([&](const std::string& name, Tensor& theta) {
        auto mit = opt.m.find(name);
        if (mit == opt.m.end()) {
            mit = opt.m.emplace(name, Tensor::zeros(theta.shape(), theta.dtype())).first;
            opt.v.emplace(name, Tensor::zeros(theta.shape(), theta.dtype()));
        }
        Tensor& m = mit->second;
        Tensor& v = opt.v.at(name);
        const auto git = grads.find(name);
        const Tensor* g = git != grads.end() ? &git->second : nullptr;
        for (std::int64_t i = 0; i < theta.numel(); ++i) {
            const double gi = g ? g->at(i) : 0.0;
            const double mi = b1 * m.at(i) + (1 - b1) * gi;
            const double vi = b2 * v.at(i) + (1 - b2) * gi * gi;
            m.set(i, mi);
            v.set(i, vi);
            const double update = (mi / bc1) / (std::sqrt(vi / bc2) + hp.adam_eps);
            theta.set(i, theta.at(i) - lr * (update + hp.weight_decay * theta.at(i)));
        }
    });
}

StepStats train_step(ModelState& state, OptimizerState& opt, const Batch& batch,
                     const TrainHparams& hp, std::uint64_t noise_seed) {
    nn::Graph g(true);
    ParamGraph pg(g, state.params);
    DiffusionBatch diff;
    const DiffusionBatch* dptr = nullptr;
    if (state.is_transfusion()) {
        diff = draw_diffusion_batch(state, batch, noise_seed, hp.caption_drop_prob);
        dptr = &diff;
    }
    LossGraph lg = build_loss(g, pg, state, batch, dptr);

    StepStats stats;
    stats.loss_total = g.value(lg.total).at(0);
    if (!std::isfinite(stats.loss_total)) {
        double worst = 0;
        std::string worst_name;
        state.params.for_each([&](const std::string& n, const Tensor& t) {
            const double s = t.sq_norm();
            if (s > worst) {
                worst = s;
                worst_name = n;
            }
        });
        throw NumericError("train_step: non-finite loss at optimizer step " +
                           std::to_string(opt.step) + " (largest parameter: " + worst_name +
                           ", sq norm " + std::to_string(worst) + ")");
    }
    for (const auto& [m, var] : lg.modality_loss) stats.by_modality[m] = g.value(var).at(0);
    stats.counts = lg.modality_count;

    g.backward(lg.total);
    auto grads = pg.grads();
    stats.grad_norm = clip_global_norm(grads, hp.grad_clip);
    stats.lr = lr_at(hp, opt.step);
    adamw_update(state.params, opt, grads, stats.lr, hp);
    return stats;
}

}  // namespace motlab
