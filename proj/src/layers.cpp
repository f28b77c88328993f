#include "layers.hpp"

#include <algorithm>
#include <numeric>

namespace motlab {

using nn::Graph;
using nn::Var;

Var ParamGraph::operator()(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    Var v = g_.leaf(store_->at(name), true);
    vars_.emplace(name, v);
    return v;
}

std::map<std::string, Tensor> ParamGraph::grads() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, var] : vars_) out.emplace(name, g_.grad(var));
    return out;
}

Var swiglu_ffn(Graph& g, Var h, Var w1, Var w3, Var w2) {
    MacScope ms(MacCategory::ffn);
    Var gate = g.silu(g.matmul(h, w1));
    Var lin = g.matmul(h, w3);
    return g.matmul(g.mul(gate, lin), w2);
}

Tensor swiglu_ffn(const Tensor& h, const Tensor& w1, const Tensor& w3, const Tensor& w2) {
    Graph g(false);
    return g.value(swiglu_ffn(g, g.constant(h), g.constant(w1), g.constant(w3), g.constant(w2)));
}

std::vector<std::vector<std::int64_t>> group_rows_by_tower(const std::vector<int>& modality_of,
                                                           const TowerMap& map) {
    std::vector<std::vector<std::int64_t>> groups(static_cast<std::size_t>(map.n_towers()));
    for (std::size_t i = 0; i < modality_of.size(); ++i)
        groups[static_cast<std::size_t>(map.tower(modality_of[i]))].push_back(
            static_cast<std::int64_t>(i));
    return groups;
}

std::pair<Var, RoutingRecord> moe_ec_mixture(Graph& g, Var h, Var router,
                                             const std::vector<ExpertVars>& experts,
                                             double capacity_factor) {
    const std::int64_t n = g.value(h).rows();
    const auto n_experts = static_cast<std::int64_t>(experts.size());
    check(n_experts >= 2, "moe_ec: need at least 2 experts");
    check(n >= n_experts, "moe_ec: fewer tokens than experts");
    const std::int64_t k =
        static_cast<std::int64_t>(capacity_factor * static_cast<double>(n) / static_cast<double>(n_experts));
    if (k < 1)
        throw ConfigError("moe_ec: capacity floor(c*n/E) = 0 (n=" + std::to_string(n) +
                          ", E=" + std::to_string(n_experts) + ")");

    Var scores;
    {
        MacScope ms(MacCategory::router);
        scores = g.softmax_masked(g.matmul(h, router));
    }
    const Tensor& s = g.value(scores);

    RoutingRecord rec;
    rec.k = k;
    rec.experts_of_token.assign(static_cast<std::size_t>(n), {});
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    Var out;
    for (std::int64_t e = 0; e < n_experts; ++e) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
            const double sa = s.at(a * n_experts + e), sb = s.at(b * n_experts + e);
            if (sa != sb) return sa > sb;
            return a < b;
        });
        order.resize(static_cast<std::size_t>(k));
        auto& gates = rec.gates.emplace_back();
        for (std::int64_t i : order) {
            gates.push_back(s.at(i * n_experts + e));
            rec.experts_of_token[static_cast<std::size_t>(i)].push_back(static_cast<int>(e));
        }
        rec.chosen.push_back(order);
        order.resize(static_cast<std::size_t>(n));

        Var rows = g.gather_rows(h, rec.chosen.back());
        Var y = swiglu_ffn(g, rows, experts[static_cast<std::size_t>(e)][0],
                           experts[static_cast<std::size_t>(e)][1],
                           experts[static_cast<std::size_t>(e)][2]);
        Var gate_col = g.gather_rows(g.slice_cols(scores, e, e + 1), rec.chosen.back());
        Var weighted = g.mul_colvec(y, gate_col);
        Var placed = g.scatter_rows(weighted, rec.chosen.back(), n);
        out = out.valid() ? g.add(out, placed) : placed;
    }
    return {out, std::move(rec)};
}

std::pair<Var, RoutingRecord> moe_ec_ffn(Graph& g, Var h, Var router,
                                         const std::vector<ExpertVars>& experts,
                                         double capacity_factor) {
    auto [mix, rec] = moe_ec_mixture(g, h, router, experts, capacity_factor);
    return {g.add(h, mix), std::move(rec)};
}

namespace {

struct LayerCtx {
    Graph& g;
    ParamGraph& pg;
    const ModelConfig& cfg;
    std::int64_t layer;
    const std::vector<std::vector<std::int64_t>>& groups;
    std::int64_t n_rows;
};

// Applies fn(tower, rows) per tower group and reassembles rows in input
// order; single-tensor roles skip the grouping entirely.
template <class Fn>
Var towered(LayerCtx& ctx, Var x, bool untied, Fn&& fn) {
    const int towers = static_cast<int>(ctx.groups.size());
    if (!untied || towers == 1) return fn(0, x);
    Var acc;
    for (int t = 0; t < towers; ++t) {
        const auto& idx = ctx.groups[static_cast<std::size_t>(t)];
        if (idx.empty()) continue;
        Var rows = ctx.g.gather_rows(x, idx);
        Var y = fn(t, rows);
        Var placed = ctx.g.scatter_rows(y, idx, ctx.n_rows);
        acc = acc.valid() ? ctx.g.add(acc, placed) : placed;
    }
    return acc;
}

Var towered_proj(LayerCtx& ctx, Var x, const char* role, bool untied, MacCategory cat) {
    MacScope ms(cat);
    return towered(ctx, x, untied, [&](int t, Var rows) {
        return ctx.g.matmul(rows, ctx.pg(names::tower_param(ctx.layer, t, role)));
    });
}

Var towered_norm(LayerCtx& ctx, Var x, const char* role, bool untied) {
    return towered(ctx, x, untied, [&](int t, Var rows) {
        Var gain = ctx.pg(names::tower_param(ctx.layer, t, role));
        return ctx.cfg.norm_kind == NormKind::rmsnorm ? ctx.g.rmsnorm(rows, gain)
                                                      : ctx.g.layernorm(rows, gain);
    });
}

Var towered_ffn(LayerCtx& ctx, Var h, bool untied, std::vector<RoutingRecord>* routing_out) {
    return towered(ctx, h, untied, [&](int t, Var rows) {
        if (ctx.cfg.tower_uses_moe(t)) {
            std::vector<ExpertVars> experts;
            for (int e = 0; e < ctx.cfg.moe_experts; ++e)
                experts.push_back({ctx.pg(names::expert_param(ctx.layer, e, "ffn_w1")),
                                   ctx.pg(names::expert_param(ctx.layer, e, "ffn_w3")),
                                   ctx.pg(names::expert_param(ctx.layer, e, "ffn_w2"))});
            auto [mix, rec] = moe_ec_mixture(ctx.g, rows, ctx.pg(names::router(ctx.layer)),
                                             experts, ctx.cfg.moe_capacity_factor);
            if (routing_out) routing_out->push_back(std::move(rec));
            return mix;
        }
        return swiglu_ffn(ctx.g, rows, ctx.pg(names::tower_param(ctx.layer, t, "ffn_w1")),
                          ctx.pg(names::tower_param(ctx.layer, t, "ffn_w3")),
                          ctx.pg(names::tower_param(ctx.layer, t, "ffn_w2")));
    });
}

}  // namespace

Var mot_layer_forward(Graph& g, ParamGraph& pg, Var x, const std::vector<int>& modality_of,
                      const ModelConfig& cfg, std::int64_t layer,
                      std::shared_ptr<const nn::BatchAdditiveMasks> masks,
                      std::vector<RoutingRecord>* routing_out) {
    check(static_cast<std::int64_t>(modality_of.size()) == g.value(x).rows(),
          "mot_layer_forward: modality_of length != rows");
    const auto groups = group_rows_by_tower(modality_of, cfg.tower_map);
    LayerCtx ctx{g, pg, cfg, layer, groups, g.value(x).rows()};
    const LayerVariant var = layer_variant_for(cfg.sparsity);

    if (cfg.norm_order == NormOrder::post) {
        // a = GlobalAttn(x); h = x + Norm_attn(a); out = h + Norm_ffn(FFN(h))
        Var q = towered_proj(ctx, x, "wq", var.untie_qkv, MacCategory::attn_proj);
        Var k = towered_proj(ctx, x, "wk", var.untie_qkv, MacCategory::attn_proj);
        Var v = towered_proj(ctx, x, "wv", var.untie_qkv, MacCategory::attn_proj);
        Var ctxv = g.attention(q, k, v, std::move(masks), static_cast<int>(cfg.n_heads));
        Var o = towered_proj(ctx, ctxv, "wo", var.untie_o, MacCategory::attn_proj);
        Var h = g.add(x, towered_norm(ctx, o, "ln_attn", var.untie_ln));
        Var f = towered_ffn(ctx, h, var.untie_ffn, routing_out);
        return g.add(h, towered_norm(ctx, f, "ln_ffn", var.untie_ln));
    }

    // pre-norm: h = x + W_O Attn(Norm(x)); out = h + FFN(Norm(h))
    Var xn = towered_norm(ctx, x, "ln_attn", var.untie_ln);
    Var q = towered_proj(ctx, xn, "wq", var.untie_qkv, MacCategory::attn_proj);
    Var k = towered_proj(ctx, xn, "wk", var.untie_qkv, MacCategory::attn_proj);
    Var v = towered_proj(ctx, xn, "wv", var.untie_qkv, MacCategory::attn_proj);
    Var ctxv = g.attention(q, k, v, std::move(masks), static_cast<int>(cfg.n_heads));
    Var h = g.add(x, towered_proj(ctx, ctxv, "wo", var.untie_o, MacCategory::attn_proj));
    Var hn = towered_norm(ctx, h, "ln_ffn", var.untie_ln);
    return g.add(h, towered_ffn(ctx, hn, var.untie_ffn, routing_out));
}

}  // namespace motlab
