#include "params.hpp"

#include "rng.hpp"

namespace motlab {

Tensor& ParamStore::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("no parameter named '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("no parameter named '" + name + "'");
    return it->second;
}

void ParamStore::put(const std::string& name, Tensor t) {
    check(entries_.find(name) == entries_.end(), "duplicate parameter name '" + name + "'");
    entries_.emplace(name, std::move(t));
}

std::int64_t ParamStore::total_params() const {
    std::int64_t n = 0;
    for (const auto& [k, t] : entries_) n += t.numel();
    return n;
}

std::map<std::string, std::int64_t> ParamStore::by_group() const {
    std::map<std::string, std::int64_t> g;
    for (const auto& [k, t] : entries_) g[k.substr(0, k.find('.'))] += t.numel();
    return g;
}

void ParamStore::for_each(const std::function<void(const std::string&, const Tensor&)>& f) const {
    for (const auto& [k, t] : entries_) f(k, t);
}

void ParamStore::for_each(const std::function<void(const std::string&, Tensor&)>& f) {
    for (auto& [k, t] : entries_) f(k, t);
}

namespace names {
std::string tower_param(std::int64_t layer, int tower, const std::string& role) {
    return "layer." + std::to_string(layer) + ".tower." + std::to_string(tower) + "." + role;
}
std::string expert_param(std::int64_t layer, int expert, const std::string& role) {
    return "layer." + std::to_string(layer) + ".expert." + std::to_string(expert) + "." + role;
}
std::string router(std::int64_t layer) { return "layer." + std::to_string(layer) + ".router"; }
std::string embed(const std::string& modality) { return "embed." + modality; }
std::string head(const std::string& modality) { return "head." + modality; }
}  // namespace names

namespace {

Tensor init_projection(const std::string& name, Shape shape, std::uint64_t seed, Dtype dt) {
    Tensor t = Tensor::zeros(std::move(shape), dt);
    Philox rng(seed, fnv1a64(name.data(), name.size()));
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.truncated_normal(0.02));
    return t;
}

}  // namespace

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    require_valid(cfg);
    ParamStore store;
    const std::int64_t d = cfg.d_model;
    const std::int64_t h = cfg.hidden();
    const int towers = cfg.n_towers();
    const LayerVariant var = layer_variant_for(cfg.sparsity);
    const Dtype dt = cfg.dtype;

    auto proj = [&](const std::string& name, Shape shape) {
        store.put(name, init_projection(name, std::move(shape), seed, dt));
    };
    auto gain = [&](const std::string& name) { store.put(name, Tensor::full({d}, 1.0, dt)); };

    for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
        const int k_qkv = var.untie_qkv ? towers : 1;
        const int k_o = var.untie_o ? towers : 1;
        const int k_ln = var.untie_ln ? towers : 1;
        const int k_ffn = var.untie_ffn ? towers : 1;
        for (int k = 0; k < k_qkv; ++k) {
            proj(names::tower_param(l, k, "wq"), {d, d});
            proj(names::tower_param(l, k, "wk"), {d, d});
            proj(names::tower_param(l, k, "wv"), {d, d});
        }
        for (int k = 0; k < k_o; ++k) proj(names::tower_param(l, k, "wo"), {d, d});
        for (int k = 0; k < k_ln; ++k) {
            gain(names::tower_param(l, k, "ln_attn"));
            gain(names::tower_param(l, k, "ln_ffn"));
        }
        bool layer_has_moe = false;
        for (int k = 0; k < k_ffn; ++k) {
            if (cfg.tower_uses_moe(k)) {
                layer_has_moe = true;
                continue;  // this tower's FFN slot is the expert bank
            }
            proj(names::tower_param(l, k, "ffn_w1"), {d, h});
            proj(names::tower_param(l, k, "ffn_w3"), {d, h});
            proj(names::tower_param(l, k, "ffn_w2"), {h, d});
        }
        if (layer_has_moe) {
            for (int e = 0; e < cfg.moe_experts; ++e) {
                proj(names::expert_param(l, e, "ffn_w1"), {d, h});
                proj(names::expert_param(l, e, "ffn_w3"), {d, h});
                proj(names::expert_param(l, e, "ffn_w2"), {h, d});
            }
            proj(names::router(l), {d, cfg.moe_experts});
        }
    }

    for (const auto& m : cfg.modalities) {
        if (m.kind != ModalityKind::discrete) continue;
        proj(names::embed(m.name), {m.vocab_size, d});
        proj(names::head(m.name), {d, m.vocab_size});
    }
    proj(names::pos_embed(), {cfg.seq_len, d});
    if (cfg.objective_mode == ObjectiveMode::transfusion) {
        proj(names::patch_proj_in(), {cfg.latent_dim, d});
        proj(names::patch_proj_out(), {d, cfg.latent_dim});
        proj(names::time_embed(), {d, d});
        proj(names::null_embed(), {1, d});
    }
    return store;
}

}  // namespace motlab
