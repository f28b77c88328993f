#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace motlab {

enum class ModalityKind { discrete, continuous };

struct Modality {
    int id = 0;
    std::string name;
    ModalityKind kind = ModalityKind::discrete;
    std::int64_t vocab_size = 0;  // discrete only
};

/// Modality id -> tower id, dense 0..K-1, every tower non-empty.
struct TowerMap {
    std::vector<int> tower_of;

    int n_towers() const;
    int tower(int modality_id) const;
    static TowerMap single(int n_modalities);
    static TowerMap identity(int n_modalities);
    bool operator==(const TowerMap&) const = default;
};

enum class TowerMode { dense, full_mot, loo_image, loo_text, loo_speech };

/// dense: everything in tower 0. full_mot: one tower per modality.
/// loo_X: X isolated in tower 0, the other two share tower 1 (requires
/// exactly three modalities).
TowerMap build_tower_map(TowerMode mode, const std::vector<Modality>& modalities);

enum class Sparsity { dense, mot_full, mot_ffn_only, mot_ffn_qkv, moe, hybrid_mot_text_moe };
enum class ObjectiveMode { chameleon, transfusion };
enum class AttentionMode { causal, hybrid };
enum class NormKind { rmsnorm, layernorm };
/// post: Eq-style "h = x + Norm(branch)". pre: standard pre-norm
/// "h = x + branch(Norm(x))".
enum class NormOrder { post, pre };
enum class SigmaMode { ddpm_beta, zero };

struct DiffusionConfig {
    int T = 1000;
    double s_offset = 0.008;
    SigmaMode sigma_mode = SigmaMode::ddpm_beta;
    double lambda_coeff = 5.0;
    double cfg_scale = 0.0;
    int inference_steps = 250;
    bool operator==(const DiffusionConfig&) const = default;
};

struct ModelConfig {
    std::int64_t d_model = 64;
    std::int64_t n_layers = 2;
    std::int64_t n_heads = 4;
    std::int64_t ffn_hidden = 0;  // 0 -> defaults to d_model
    std::vector<Modality> modalities;
    std::int64_t latent_dim = 4;
    std::int64_t seq_len = 128;
    Sparsity sparsity = Sparsity::dense;
    TowerMap tower_map;
    int moe_experts = 4;
    double moe_capacity_factor = 1.0;
    ObjectiveMode objective_mode = ObjectiveMode::chameleon;
    AttentionMode attention_mode = AttentionMode::causal;
    NormKind norm_kind = NormKind::rmsnorm;
    NormOrder norm_order = NormOrder::post;
    Dtype dtype = Dtype::f64;
    DiffusionConfig diffusion;
    std::uint64_t seed = 0;

    std::int64_t hidden() const { return ffn_hidden > 0 ? ffn_hidden : d_model; }
    int n_modalities() const { return static_cast<int>(modalities.size()); }
    int n_towers() const { return tower_map.n_towers(); }
    const Modality* find_modality(const std::string& name) const;
    const Modality& modality(int id) const;
    /// Global token-id space: modality m owns [offset, offset + vocab).
    std::int64_t vocab_offset(int modality_id) const;
    std::int64_t total_vocab() const;
    int modality_of_global_id(std::int64_t id) const;
    /// BOI/EOI are the two topmost ids of the text vocab.
    std::int64_t boi_id() const;
    std::int64_t eoi_id() const;
    int text_modality_id() const;
    std::optional<int> continuous_modality_id() const;
    bool uses_moe() const {
        return sparsity == Sparsity::moe || sparsity == Sparsity::hybrid_mot_text_moe;
    }
    /// True when the FFN slot of this tower is the expert-choice MoE.
    bool tower_uses_moe(int tower) const;

    bool operator==(const ModelConfig&) const = default;
};

/// Which per-layer roles carry one tensor per tower (vs a single shared
/// tower-0 tensor).
struct LayerVariant {
    bool untie_ffn = false;
    bool untie_qkv = false;
    bool untie_o = false;
    bool untie_ln = false;
    bool operator==(const LayerVariant&) const = default;
};

LayerVariant layer_variant_for(Sparsity s);

const char* sparsity_name(Sparsity s);
Sparsity sparsity_from_name(const std::string& s);
const char* objective_name(ObjectiveMode m);
ObjectiveMode objective_from_name(const std::string& s);
const char* attention_mode_name(AttentionMode m);
AttentionMode attention_mode_from_name(const std::string& s);
const char* norm_kind_name(NormKind k);
NormKind norm_kind_from_name(const std::string& s);
const char* norm_order_name(NormOrder o);
NormOrder norm_order_from_name(const std::string& s);
const char* sigma_mode_name(SigmaMode m);
SigmaMode sigma_mode_from_name(const std::string& s);
const char* tower_mode_name(TowerMode m);
TowerMode tower_mode_from_name(const std::string& s);

/// Returns every invariant violation as a message; empty means valid.
/// Never throws on invalid configs.
std::vector<std::string> validate_config(const ModelConfig& cfg);
/// validate_config + throw ConfigError listing the violations.
void require_valid(const ModelConfig& cfg);

/// Applies a sparsity variant to a base config, rebuilding the tower map
/// (dense/moe -> single tower, mot/hybrid -> one tower per modality).
ModelConfig with_sparsity(const ModelConfig& base, Sparsity s);

}  // namespace motlab
