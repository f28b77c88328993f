#pragma once

#include <filesystem>
#include <functional>

#include "serialize.hpp"

namespace motlab {

struct RunOptions {
    std::filesystem::path out_dir;  // empty: keep everything in memory
    std::function<void(std::int64_t step, const StepStats&)> on_step;  // optional
};

struct RunResult {
    LossCurve curve;
    ModelState state;
};

/// Per-step noise stream (diffusion t/eps draws and caption dropping).
std::uint64_t step_noise_seed(std::uint64_t model_seed, std::int64_t step);
/// Fixed stream for the held-out batch so `eval` replays validation losses
/// exactly.
std::uint64_t valid_noise_seed(std::uint64_t corpus_seed);

/// The held-out batch used for periodic validation (and by `eval`).
Batch validation_batch(const TrainConfig& cfg);

/// Runs the full training loop: fresh model from cfg.model.seed, streaming
/// batches from the corpus seed, train/valid metrics appended to
/// metrics.jsonl, checkpoints every ckpt_every steps plus ckpt-final.
/// The run directory is locked for the duration.
RunResult run_training(const TrainConfig& cfg, const RunOptions& opts = {});

}  // namespace motlab
