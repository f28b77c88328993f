#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "graph.hpp"
#include "mask.hpp"
#include "params.hpp"

namespace motlab {

/// Lazily turns named ParamStore tensors into tape leaves (one leaf per
/// name, shared across uses) and collects their gradients after backward.
class ParamGraph {
public:
    ParamGraph(nn::Graph& g, const ParamStore& store) : g_(g), store_(&store) {}

    nn::Var operator()(const std::string& name);
    bool touched(const std::string& name) const { return vars_.count(name) != 0; }
    std::map<std::string, Tensor> grads() const;
    nn::Graph& graph() { return g_; }
    const ParamStore& store() const { return *store_; }

private:
    nn::Graph& g_;
    const ParamStore* store_;
    std::map<std::string, nn::Var> vars_;
};

/// Expert-choice routing outcome: every expert selects exactly k tokens,
/// descending score with ties broken by the lower token index.
struct RoutingRecord {
    std::int64_t k = 0;
    std::vector<std::vector<std::int64_t>> chosen;   // per expert
    std::vector<std::vector<double>> gates;          // per expert, aligned with chosen
    std::vector<std::vector<int>> experts_of_token;  // per token
};

/// w2 (silu(h w1) .* (h w3)) per token.
nn::Var swiglu_ffn(nn::Graph& g, nn::Var h, nn::Var w1, nn::Var w3, nn::Var w2);
Tensor swiglu_ffn(const Tensor& h, const Tensor& w1, const Tensor& w3, const Tensor& w2);

/// Expert weights in slot order {w1, w3, w2}.
using ExpertVars = std::array<nn::Var, 3>;

/// Expert-choice mixture without the residual: row i gets
/// sum over experts that chose i of S[i,e] * expert_e(h_i), zeros when no
/// expert chose it. S = softmax over experts of h * router; each expert
/// takes its top-k = floor(c*n/E) tokens by score column.
std::pair<nn::Var, RoutingRecord> moe_ec_mixture(nn::Graph& g, nn::Var h, nn::Var router,
                                                 const std::vector<ExpertVars>& experts,
                                                 double capacity_factor);

/// The module-level op: h + mixture (unselected tokens pass through as h).
std::pair<nn::Var, RoutingRecord> moe_ec_ffn(nn::Graph& g, nn::Var h, nn::Var router,
                                             const std::vector<ExpertVars>& experts,
                                             double capacity_factor);

/// One transformer layer over a stacked batch of rows. Grouping by
/// tower_map(modality_of[row]) selects which parameter set each row flows
/// through for every untied role; tied roles use the single tower-0 tensors.
/// Global attention always mixes every row. Output rows keep input order.
///
/// Residual order follows cfg.norm_order: post is
/// "h = x + Norm_attn(branch)", pre is the standard pre-norm stack.
nn::Var mot_layer_forward(nn::Graph& g, ParamGraph& pg, nn::Var x,
                          const std::vector<int>& modality_of, const ModelConfig& cfg,
                          std::int64_t layer,
                          std::shared_ptr<const nn::BatchAdditiveMasks> masks,
                          std::vector<RoutingRecord>* routing_out = nullptr);

/// Row indices per tower, ascending within each group.
std::vector<std::vector<std::int64_t>> group_rows_by_tower(const std::vector<int>& modality_of,
                                                           const TowerMap& map);

}  // namespace motlab
