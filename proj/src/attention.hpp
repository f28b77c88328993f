#pragma once

#include "graph.hpp"
#include "mask.hpp"

namespace motlab {

/// Multi-head scaled dot-product attention over one sequence:
/// softmax(Q K^T / sqrt(d_k)) V per head, additive -1e30 masking, heads
/// concatenated. Softmax rows normalize across every attendable token
/// regardless of modality.
nn::Var global_attention(nn::Graph& g, nn::Var q, nn::Var k, nn::Var v, const AttnMask& mask,
                         int n_heads);

/// Raw-tensor convenience (no tape).
Tensor global_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttnMask& mask,
                        int n_heads);

}  // namespace motlab
