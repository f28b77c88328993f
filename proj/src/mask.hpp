#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "graph.hpp"
#include "sequence.hpp"

namespace motlab {

/// allowed[i][j]: may query position i attend to key position j.
struct AttnMask {
    std::int64_t n = 0;
    std::vector<std::uint8_t> allowed;  // n*n row-major

    bool at(std::int64_t i, std::int64_t j) const {
        return allowed[static_cast<std::size_t>(i * n + j)] != 0;
    }
    /// 0 where allowed, -1e30 where blocked.
    Tensor additive(Dtype dt = Dtype::f64) const;
};

/// causal: j <= i. hybrid: causal plus full bidirectionality inside each
/// image span. The diagonal is always allowed. Overlapping spans are an
/// error.
AttnMask build_mask(AttentionMode mode, const MixedSequence& seq);

/// Additive masks for a whole batch, ready for the fused attention op.
std::shared_ptr<nn::BatchAdditiveMasks> build_batch_masks(AttentionMode mode, const Batch& batch,
                                                          Dtype dt);

}  // namespace motlab
