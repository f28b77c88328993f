#include "runner.hpp"

#include <fstream>
#include <memory>

namespace motlab {

std::uint64_t step_noise_seed(std::uint64_t model_seed, std::int64_t step) {
    return model_seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(step + 1));
}

std::uint64_t valid_noise_seed(std::uint64_t corpus_seed) {
    return corpus_seed ^ 0x6576616c6e6f6973ull;
}

Batch validation_batch(const TrainConfig& cfg) {
    return gen_batch(cfg.data, cfg.model, cfg.train.valid_batch, cfg.model.seq_len, 0,
                     kValidationStream);
}

namespace {

CurvePoint to_point(std::int64_t step, const StepStats& s, const ModelConfig& cfg) {
    CurvePoint p;
    p.step = step;
    p.loss_total = s.loss_total;
    for (const auto& [m, v] : s.by_modality) p.by_modality[cfg.modality(m).name] = v;
    p.lr = s.lr;
    p.grad_norm = s.grad_norm;
    return p;
}

CurvePoint to_point(std::int64_t step, const LossBreakdown& b, const ModelConfig& cfg) {
    CurvePoint p;
    p.step = step;
    p.loss_total = b.total;
    for (const auto& [m, v] : b.by_modality) p.by_modality[cfg.modality(m).name] = v;
    return p;
}

}  // namespace

RunResult run_training(const TrainConfig& cfg, const RunOptions& opts) {
    require_valid(cfg.model);
    const TrainHparams& hp = cfg.train;

    std::unique_ptr<RunLock> lock;
    std::unique_ptr<JsonlWriter> metrics;
    if (!opts.out_dir.empty()) {
        lock = std::make_unique<RunLock>(opts.out_dir);
        std::ofstream cf(opts.out_dir / "config.json");
        cf << to_json(cfg).dump(2) << "\n";
        metrics = std::make_unique<JsonlWriter>(opts.out_dir / "metrics.jsonl");
    }

    RunResult res;
    res.state = make_model(cfg.model);
    OptimizerState opt;
    const Batch valid = validation_batch(cfg);

    for (std::int64_t s = 0; s < hp.steps; ++s) {
        const Batch batch =
            gen_batch(cfg.data, cfg.model, hp.batch_size, cfg.model.seq_len,
                      static_cast<std::uint64_t>(s) * static_cast<std::uint64_t>(hp.batch_size));
        const StepStats stats =
            train_step(res.state, opt, batch, hp, step_noise_seed(cfg.model.seed, s));
        const std::int64_t step = s + 1;
        if (opts.on_step) opts.on_step(step, stats);
        if (step % hp.log_every == 0 || step == hp.steps) {
            CurvePoint p = to_point(step, stats, cfg.model);
            if (metrics) metrics->append(metrics_json(Split::train, p, cfg.model));
            res.curve.append(Split::train, std::move(p));
        }
        if (step % hp.valid_every == 0 || step == hp.steps) {
            const LossBreakdown vb =
                eval_loss(res.state, valid, valid_noise_seed(cfg.data.corpus_seed));
            CurvePoint p = to_point(step, vb, cfg.model);
            if (metrics) metrics->append(metrics_json(Split::valid, p, cfg.model));
            res.curve.append(Split::valid, std::move(p));
        }
        if (!opts.out_dir.empty() && hp.ckpt_every > 0 && step % hp.ckpt_every == 0 &&
            step != hp.steps)
            save_checkpoint(opts.out_dir / ("ckpt-" + std::to_string(step)), cfg,
                            res.state.params, step);
    }
    if (!opts.out_dir.empty())
        save_checkpoint(opts.out_dir / "ckpt-final", cfg, res.state.params, hp.steps);
    return res;
}

}  // namespace motlab
