#include "config.hpp"

#include <algorithm>
#include <set>

namespace motlab {

int TowerMap::n_towers() const {
    int k = 0;
    for (int t : tower_of) k = std::max(k, t + 1);
    return k;
}

int TowerMap::tower(int modality_id) const {
    if (modality_id < 0 || modality_id >= static_cast<int>(tower_of.size()))
        throw ConfigError("tower map: modality id " + std::to_string(modality_id) +
                          " outside map of size " + std::to_string(tower_of.size()));
    return tower_of[static_cast<std::size_t>(modality_id)];
}

TowerMap TowerMap::single(int n_modalities) {
    return TowerMap{std::vector<int>(static_cast<std::size_t>(n_modalities), 0)};
}

TowerMap TowerMap::identity(int n_modalities) {
    TowerMap m;
    m.tower_of.resize(static_cast<std::size_t>(n_modalities));
    for (int i = 0; i < n_modalities; ++i) m.tower_of[static_cast<std::size_t>(i)] = i;
    return m;
}

TowerMap build_tower_map(TowerMode mode, const std::vector<Modality>& modalities) {
    check(!modalities.empty(), "build_tower_map: no modalities");
    const int m = static_cast<int>(modalities.size());
    switch (mode) {
        case TowerMode::dense: return TowerMap::single(m);
        case TowerMode::full_mot: return TowerMap::identity(m);
        default: break;
    }
    const char* iso = mode == TowerMode::loo_image  ? "image"
                      : mode == TowerMode::loo_text ? "text"
                                                    : "speech";
    check(m == 3, std::string("build_tower_map: loo_") + iso + " requires exactly 3 modalities, got " +
                      std::to_string(m));
    TowerMap out;
    out.tower_of.assign(static_cast<std::size_t>(m), 1);
    bool found = false;
    for (const auto& mod : modalities) {
        if (mod.name == iso) {
            out.tower_of[static_cast<std::size_t>(mod.id)] = 0;
            found = true;
        }
    }
    if (!found)
        throw ConfigError(std::string("build_tower_map: no modality named '") + iso +
                          "' for leave-one-out isolation");
    return out;
}

const Modality* ModelConfig::find_modality(const std::string& name) const {
    for (const auto& m : modalities)
        if (m.name == name) return &m;
    return nullptr;
}

const Modality& ModelConfig::modality(int id) const {
    check(id >= 0 && id < n_modalities(), "modality id out of range: " + std::to_string(id));
    return modalities[static_cast<std::size_t>(id)];
}

std::int64_t ModelConfig::vocab_offset(int modality_id) const {
    std::int64_t off = 0;
    for (int i = 0; i < modality_id; ++i)
        if (modalities[static_cast<std::size_t>(i)].kind == ModalityKind::discrete)
            off += modalities[static_cast<std::size_t>(i)].vocab_size;
    return off;
}

std::int64_t ModelConfig::total_vocab() const {
    std::int64_t v = 0;
    for (const auto& m : modalities)
        if (m.kind == ModalityKind::discrete) v += m.vocab_size;
    return v;
}

int ModelConfig::modality_of_global_id(std::int64_t id) const {
    for (const auto& m : modalities) {
        if (m.kind != ModalityKind::discrete) continue;
        const std::int64_t off = vocab_offset(m.id);
        if (id >= off && id < off + m.vocab_size) return m.id;
    }
    throw ConfigError("global token id " + std::to_string(id) + " outside every vocabulary");
}

int ModelConfig::text_modality_id() const {
    const Modality* m = find_modality("text");
    check(m != nullptr, "config has no 'text' modality");
    return m->id;
}

std::int64_t ModelConfig::boi_id() const {
    const Modality& t = modality(text_modality_id());
    return vocab_offset(t.id) + t.vocab_size - 2;
}

std::int64_t ModelConfig::eoi_id() const {
    const Modality& t = modality(text_modality_id());
    return vocab_offset(t.id) + t.vocab_size - 1;
}

std::optional<int> ModelConfig::continuous_modality_id() const {
    for (const auto& m : modalities)
        if (m.kind == ModalityKind::continuous) return m.id;
    return std::nullopt;
}

bool ModelConfig::tower_uses_moe(int tower) const {
    if (sparsity == Sparsity::moe) return true;  // single tower
    if (sparsity == Sparsity::hybrid_mot_text_moe) {
        const Modality* t = find_modality("text");
        return t != nullptr && tower_map.tower(t->id) == tower;
    }
    return false;
}

LayerVariant layer_variant_for(Sparsity s) {
    switch (s) {
        case Sparsity::dense:
        case Sparsity::moe: return {};
        case Sparsity::mot_ffn_only: return {.untie_ffn = true};
        case Sparsity::mot_ffn_qkv: return {.untie_ffn = true, .untie_qkv = true};
        case Sparsity::mot_full:
        case Sparsity::hybrid_mot_text_moe:
            return {.untie_ffn = true, .untie_qkv = true, .untie_o = true, .untie_ln = true};
    }
    return {};
}

namespace {
template <class E>
struct NamePair {
    E value;
    const char* name;
};

constexpr NamePair<Sparsity> kSparsity[] = {
    {Sparsity::dense, "dense"},
    {Sparsity::mot_full, "mot_full"},
    {Sparsity::mot_ffn_only, "mot_ffn_only"},
    {Sparsity::mot_ffn_qkv, "mot_ffn_qkv"},
    {Sparsity::moe, "moe"},
    {Sparsity::hybrid_mot_text_moe, "hybrid_mot_text_moe"},
};
constexpr NamePair<ObjectiveMode> kObjective[] = {
    {ObjectiveMode::chameleon, "chameleon"},
    {ObjectiveMode::transfusion, "transfusion"},
};
constexpr NamePair<AttentionMode> kAttention[] = {
    {AttentionMode::causal, "causal"},
    {AttentionMode::hybrid, "hybrid"},
};
constexpr NamePair<NormKind> kNormKind[] = {
    {NormKind::rmsnorm, "rmsnorm"},
    {NormKind::layernorm, "layernorm"},
};
constexpr NamePair<NormOrder> kNormOrder[] = {
    {NormOrder::post, "post"},
    {NormOrder::pre, "pre"},
};
constexpr NamePair<SigmaMode> kSigmaMode[] = {
    {SigmaMode::ddpm_beta, "ddpm_beta"},
    {SigmaMode::zero, "zero"},
};
constexpr NamePair<TowerMode> kTowerMode[] = {
    {TowerMode::dense, "dense"},       {TowerMode::full_mot, "full_mot"},
    {TowerMode::loo_image, "loo_image"}, {TowerMode::loo_text, "loo_text"},
    {TowerMode::loo_speech, "loo_speech"},
};

template <class E, std::size_t N>
const char* to_name(const NamePair<E> (&table)[N], E v) {
    for (const auto& p : table)
        if (p.value == v) return p.name;
    return "?";
}

template <class E, std::size_t N>
E from_name(const NamePair<E> (&table)[N], const std::string& s, const char* what) {
    for (const auto& p : table)
        if (s == p.name) return p.value;
    throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}
}  // namespace

const char* sparsity_name(Sparsity s) { return to_name(kSparsity, s); }
Sparsity sparsity_from_name(const std::string& s) { return from_name(kSparsity, s, "sparsity"); }
const char* objective_name(ObjectiveMode m) { return to_name(kObjective, m); }
ObjectiveMode objective_from_name(const std::string& s) {
    return from_name(kObjective, s, "objective_mode");
}
const char* attention_mode_name(AttentionMode m) { return to_name(kAttention, m); }
AttentionMode attention_mode_from_name(const std::string& s) {
    return from_name(kAttention, s, "attention_mode");
}
const char* norm_kind_name(NormKind k) { return to_name(kNormKind, k); }
NormKind norm_kind_from_name(const std::string& s) { return from_name(kNormKind, s, "norm_kind"); }
const char* norm_order_name(NormOrder o) { return to_name(kNormOrder, o); }
NormOrder norm_order_from_name(const std::string& s) {
    return from_name(kNormOrder, s, "norm_order");
}
const char* sigma_mode_name(SigmaMode m) { return to_name(kSigmaMode, m); }
SigmaMode sigma_mode_from_name(const std::string& s) {
    return from_name(kSigmaMode, s, "sigma_mode");
}
const char* tower_mode_name(TowerMode m) { return to_name(kTowerMode, m); }
TowerMode tower_mode_from_name(const std::string& s) {
    return from_name(kTowerMode, s, "tower_mode");
}

std::vector<std::string> validate_config(const ModelConfig& cfg) {
    std::vector<std::string> v;
    auto bad = [&](const std::string& msg) { v.push_back(msg); };

    if (cfg.d_model <= 0) bad("d_model must be positive");
    if (cfg.n_layers <= 0) bad("n_layers must be positive");
    if (cfg.n_heads <= 0 || (cfg.d_model > 0 && cfg.d_model % cfg.n_heads != 0))
        bad("n_heads must divide d_model");
    if (cfg.seq_len <= 0) bad("seq_len must be positive");
    if (cfg.modalities.empty()) bad("at least one modality required");

    std::set<std::string> names;
    int n_continuous = 0;
    for (std::size_t i = 0; i < cfg.modalities.size(); ++i) {
        const Modality& m = cfg.modalities[i];
        if (m.id != static_cast<int>(i))
            bad("modality ids must be dense 0..M-1 in declaration order");
        if (!names.insert(m.name).second) bad("duplicate modality name '" + m.name + "'");
        if (m.kind == ModalityKind::discrete) {
            if (m.vocab_size < 4)
                bad("modality '" + m.name + "': discrete vocab_size must be >= 4");
        } else {
            ++n_continuous;
            if (cfg.latent_dim <= 0) bad("latent_dim must be positive for continuous modalities");
        }
    }

    if (cfg.tower_map.tower_of.size() != cfg.modalities.size()) {
        bad("tower map must assign every modality exactly once");
    } else {
        const int k = cfg.tower_map.n_towers();
        std::vector<int> counts(static_cast<std::size_t>(std::max(k, 1)), 0);
        bool in_range = true;
        for (int t : cfg.tower_map.tower_of) {
            if (t < 0 || t >= k) {
                in_range = false;
                break;
            }
            counts[static_cast<std::size_t>(t)]++;
        }
        if (!in_range)
            bad("tower ids must be dense 0..K-1");
        else
            for (int t = 0; t < k; ++t)
                if (counts[static_cast<std::size_t>(t)] == 0)
                    bad("tower " + std::to_string(t) + " is empty");
        if (k > static_cast<int>(cfg.modalities.size())) bad("K must be <= number of modalities");
        if ((cfg.sparsity == Sparsity::dense || cfg.sparsity == Sparsity::moe) && k != 1)
            bad(std::string(sparsity_name(cfg.sparsity)) + " requires K=1");
    }

    if (cfg.uses_moe()) {
        if (cfg.moe_experts < 2) bad("moe_experts must be >= 2");
        if (cfg.moe_capacity_factor <= 0) bad("moe_capacity_factor must be positive");
    }
    if (cfg.sparsity == Sparsity::hybrid_mot_text_moe && cfg.find_modality("text") == nullptr)
        bad("hybrid_mot_text_moe requires a 'text' modality");

    if (cfg.objective_mode == ObjectiveMode::transfusion) {
        if (n_continuous != 1) bad("transfusion requires exactly one continuous modality");
        if (cfg.attention_mode != AttentionMode::hybrid)
            bad("transfusion requires hybrid attention");
        if (cfg.find_modality("text") == nullptr)
            bad("transfusion requires a 'text' modality for BOI/EOI");
        if (cfg.diffusion.T < 1) bad("diffusion.T must be >= 1");
        if (cfg.diffusion.lambda_coeff < 0) bad("diffusion.lambda must be >= 0");
        if (cfg.diffusion.cfg_scale < 0) bad("diffusion.cfg_scale must be >= 0");
        if (cfg.diffusion.inference_steps < 1) bad("diffusion.inference_steps must be >= 1");
        if (cfg.diffusion.s_offset <= 0) bad("diffusion.s_offset must be positive");
    } else {
        if (n_continuous != 0) bad("chameleon requires all modalities discrete");
        if (cfg.attention_mode != AttentionMode::causal) bad("chameleon requires causal attention");
    }
    return v;
}

void require_valid(const ModelConfig& cfg) {
    const auto v = validate_config(cfg);
    if (v.empty()) return;
    std::string msg = "invalid config:";
    for (const auto& s : v) msg += "\n  - " + s;
    throw ConfigError(msg);
}

ModelConfig with_sparsity(const ModelConfig& base, Sparsity s) {
    ModelConfig cfg = base;
    cfg.sparsity = s;
    const bool single = (s == Sparsity::dense || s == Sparsity::moe);
    cfg.tower_map = single ? TowerMap::single(cfg.n_modalities())
                           : TowerMap::identity(cfg.n_modalities());
    return cfg;
}

}  // namespace motlab
