#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "diffusion.hpp"
#include "layers.hpp"
#include "sequence.hpp"

namespace motlab {

/// A model is its config, its parameters, and (transfusion only) the noise
/// schedule.
struct ModelState {
    ModelConfig cfg;
    ParamStore params;
    NoiseSchedule sched;

    bool is_transfusion() const { return cfg.objective_mode == ObjectiveMode::transfusion; }
};

ModelState make_model(const ModelConfig& cfg);
ModelState make_model(const ModelConfig& cfg, std::uint64_t init_seed);

/// Per-batch diffusion inputs: one timestep and noise draw per image span,
/// the noised latents fed to the model, and the per-sequence caption-drop
/// flag for classifier-free guidance training.
struct DiffusionBatch {
    std::vector<std::vector<int>> t;            // [seq][span]
    std::vector<std::vector<Tensor>> eps;       // [seq][span], len x latent_dim
    std::vector<std::vector<Tensor>> noised;    // [seq][span], x_t
    std::vector<std::uint8_t> drop_caption;     // [seq]
};

/// Training draws: t ~ U{1..T} per image, eps ~ N(0, I), caption dropped
/// with drop_prob. Deterministic in (state.cfg, batch shape, seed).
DiffusionBatch draw_diffusion_batch(const ModelState& state, const Batch& batch,
                                    std::uint64_t seed, double drop_prob);

struct ForwardResult {
    nn::Var hidden;                       // (B*n) x D after the last layer
    std::vector<int> row_modality;        // stacked modality per row
    std::int64_t batch = 0;
    std::int64_t n = 0;
    std::vector<RoutingRecord> routing;
    std::vector<Tensor> layer_hidden;     // filled when capture_layers
};

/// Embeds the batch (modality embedding tables for discrete tokens, the
/// shared linear patch projector plus sinusoidal-time projection for
/// latents, learned absolute position embeddings for everything) and runs
/// the layer stack.
ForwardResult model_forward(nn::Graph& g, ParamGraph& pg, const ModelState& state,
                            const Batch& batch, const DiffusionBatch* diff,
                            bool capture_layers = false);

struct LossGraph {
    nn::Var total;                             // scalar Var
    std::map<int, nn::Var> modality_loss;      // id -> scalar Var (LM mean or DDPM mean)
    std::map<int, std::int64_t> modality_count;  // LM target positions / image count
    std::vector<RoutingRecord> routing;
};

/// Builds the objective on the tape: chameleon is next-token cross-entropy
/// over all loss-masked positions; transfusion is mean text NLL plus
/// lambda times the per-image-mean epsilon MSE.
LossGraph build_loss(nn::Graph& g, ParamGraph& pg, const ModelState& state, const Batch& batch,
                     const DiffusionBatch* diff);

struct LossBreakdown {
    double total = 0;
    std::map<int, double> by_modality;
    std::map<int, std::int64_t> counts;
};

/// Forward-only loss evaluation; noise_seed drives the diffusion draws in
/// transfusion mode (caption drop disabled).
LossBreakdown eval_loss(const ModelState& state, const Batch& batch, std::uint64_t noise_seed);

/// Logits over the named modality's vocab at one position of the final
/// hidden state; used by generation.
Tensor logits_at(const ModelState& state, const MixedSequence& seq, std::int64_t pos,
                 int head_modality, const DiffusionBatch* diff = nullptr);

/// Epsilon predictions for one image span (rows start..end).
Tensor eps_pred_for_span(const ModelState& state, const MixedSequence& seq, int span_index,
                         const DiffusionBatch* diff);

}  // namespace motlab
