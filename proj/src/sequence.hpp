#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "config.hpp"

namespace motlab {

/// Contiguous continuous-modality block: patches occupy [start, end),
/// bracketed by the BOI token at boi_pos and the EOI token at eoi_pos.
struct ImageSpan {
    std::int64_t start = 0;
    std::int64_t end = 0;
    std::int64_t boi_pos = -1;
    std::int64_t eoi_pos = -1;
    std::int64_t len() const { return end - start; }
    bool operator==(const ImageSpan&) const = default;
};

/// Interleaved multi-modal token stream. Position i carries either a global
/// discrete token id or a latent vector, selected by the kind of
/// modality_of[i].
struct MixedSequence {
    std::int64_t length = 0;
    std::vector<int> modality_of;
    std::vector<std::int64_t> discrete_ids;        // -1 at latent positions
    std::vector<std::vector<double>> latents;      // empty at discrete positions
    std::vector<ImageSpan> image_spans;
    std::vector<std::uint8_t> loss_mask;

    static MixedSequence empty(std::int64_t n, std::int64_t latent_dim);
    void put_discrete(std::int64_t pos, int modality, std::int64_t global_id, bool in_loss = true);
    void put_latent(std::int64_t pos, int modality, std::vector<double> latent,
                    bool in_loss = true);
    bool is_discrete(std::int64_t pos) const { return discrete_ids[static_cast<std::size_t>(pos)] >= 0; }
    /// Index of the span containing pos, or -1.
    int span_of(std::int64_t pos) const;
    bool operator==(const MixedSequence&) const = default;
};

/// All invariant violations (populated-slot XOR, span bracketing and
/// disjointness, id ranges); empty means well-formed.
std::vector<std::string> validate_sequence(const MixedSequence& seq, const ModelConfig& cfg);
void require_valid_sequence(const MixedSequence& seq, const ModelConfig& cfg);

using Batch = std::vector<MixedSequence>;

}  // namespace motlab
