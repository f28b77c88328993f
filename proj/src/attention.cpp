#include "attention.hpp"

namespace motlab {

nn::Var global_attention(nn::Graph& g, nn::Var q, nn::Var k, nn::Var v, const AttnMask& mask,
                         int n_heads) {
    auto masks = std::make_shared<nn::BatchAdditiveMasks>();
    masks->seq_len = mask.n;
    masks->masks.push_back(mask.additive(g.value(q).dtype()));
    return g.attention(q, k, v, std::move(masks), n_heads);
}

Tensor global_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttnMask& mask,
                        int n_heads) {
    nn::Graph g(false);
    return g.value(global_attention(g, g.constant(q), g.constant(k), g.constant(v), mask, n_heads));
}

}  // namespace motlab
