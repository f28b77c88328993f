#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sequence.hpp"

namespace motlab {

/// Synthetic corpus description. Sequences are packed from repeated block
/// groups; each group draws a class c, emits a caption whose first token is
/// c followed by an order-1 Markov walk, and emits one block per non-text
/// modality whose content is conditioned on c. Block lengths follow
/// token_ratio (image blocks are image_patches long). Remainder positions
/// are right-padding with the loss mask off.
struct SynthSpec {
    double caption_first_prob = 0.8;
    std::map<std::string, double> token_ratio;  // empty -> 1:1 everywhere
    std::int64_t image_patches = 16;
    int latent_classes = 8;
    double latent_noise_std = 0.1;
    double mu_scale = 2.0;
    int class_support = 16;  // ids per class for discrete image/speech blocks
    std::uint64_t corpus_seed = 0;

    bool operator==(const SynthSpec&) const = default;
};

/// Stream tag separating the held-out split from training data.
constexpr std::uint64_t kValidationStream = 0x76616c6964ull;

struct MarkovRow {
    std::vector<std::int64_t> successors;
    std::vector<double> probs;
};

/// The text source's transition row for a plain-text state (BOI/EOI are
/// never Markov states). Fixed by (corpus_seed, modality).
MarkovRow markov_row(const SynthSpec& spec, const ModelConfig& cfg, int modality,
                     std::int64_t state);

/// Per-class id support for a discrete non-text modality, fixed by seed.
std::vector<std::int64_t> class_support_ids(const SynthSpec& spec, const ModelConfig& cfg,
                                            int modality, int cls);

/// Latent class means: a deterministic spherical code scaled by mu_scale.
std::vector<std::vector<double>> class_means(const SynthSpec& spec, std::int64_t latent_dim);
double min_mu_distance(const SynthSpec& spec, std::int64_t latent_dim);
/// Nearest class mean to the average of a span's patch vectors.
int nearest_class(const SynthSpec& spec, const std::vector<std::vector<double>>& patches);

/// All positions discrete; interleaved caption + class-conditioned id
/// blocks; loss mask on everywhere except padding.
Batch gen_chameleon_batch(const SynthSpec& spec, const ModelConfig& cfg, int batch,
                          std::int64_t seq_len, std::uint64_t first_index,
                          std::uint64_t stream_tag = 0);

/// Caption tokens + BOI/patches/EOI spans; caption-first with probability
/// caption_first_prob; patches are mu_c + N(0, latent_noise_std^2).
Batch gen_transfusion_batch(const SynthSpec& spec, const ModelConfig& cfg, int batch,
                            std::int64_t seq_len, std::uint64_t first_index,
                            std::uint64_t stream_tag = 0);

/// Dispatches on cfg.objective_mode.
Batch gen_batch(const SynthSpec& spec, const ModelConfig& cfg, int batch, std::int64_t seq_len,
                std::uint64_t first_index, std::uint64_t stream_tag = 0);

}  // namespace motlab
