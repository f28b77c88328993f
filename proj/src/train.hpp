#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "model.hpp"

namespace motlab {

struct TrainHparams {
    std::int64_t steps = 3000;
    int batch_size = 16;
    double lr = 3e-4;
    std::int64_t warmup_steps = 100;
    double lr_floor = 1.5e-5;
    double weight_decay = 0.1;
    double grad_clip = 1.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.95;
    double adam_eps = 1e-8;
    double caption_drop_prob = 0.1;  // transfusion CFG training
    int log_every = 10;
    int valid_every = 200;
    int valid_batch = 32;
    std::int64_t ckpt_every = 0;  // 0 = final snapshot only

    bool operator==(const TrainHparams&) const = default;
};

struct OptimizerState {
    std::int64_t step = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
};

/// Linear warmup then cosine decay to lr_floor over the remaining steps.
double lr_at(const TrainHparams& hp, std::int64_t step);

/// Scales all gradients so the global norm is at most max_norm; returns the
/// pre-clip norm.
double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm);

/// One AdamW update (decoupled weight decay, bias-corrected moments).
/// Parameters without a gradient entry update with g = 0, so untouched
/// towers only move by weight decay.
void adamw_update(ParamStore& params, OptimizerState& opt, const std::map<std::string, Tensor>& grads,
                  double lr, const TrainHparams& hp);

struct StepStats {
    double loss_total = 0;
    std::map<int, double> by_modality;
    std::map<int, std::int64_t> counts;
    double lr = 0;
    double grad_norm = 0;  // pre-clip
};

/// Forward, backward, clip, AdamW. noise_seed drives diffusion draws and
/// caption dropping. Throws NumericError on a non-finite loss, naming the
/// step and the largest parameter.
StepStats train_step(ModelState& state, OptimizerState& opt, const Batch& batch,
                     const TrainHparams& hp, std::uint64_t noise_seed);

}  // namespace motlab
