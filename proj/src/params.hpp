#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "config.hpp"
#include "tensor.hpp"

namespace motlab {

/// Named, shaped parameter tensors. Name grammar:
///   layer.<l>.tower.<k>.{wq|wk|wv|wo|ffn_w1|ffn_w2|ffn_w3|ln_attn|ln_ffn}
///   layer.<l>.expert.<e>.{ffn_w1|ffn_w2|ffn_w3}   layer.<l>.router
///   embed.<modality>   head.<modality>
///   patch_proj.in   patch_proj.out   time_embed   null_embed   pos_embed
/// Tied roles keep a single tower-0 tensor.
class ParamStore {
public:
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    void put(const std::string& name, Tensor t);
    std::size_t size() const { return entries_.size(); }

    std::int64_t total_params() const;
    /// Summed element counts keyed by leading name component ("layer",
    /// "embed", "head", ...).
    std::map<std::string, std::int64_t> by_group() const;

    /// Deterministic (name-ordered) iteration.
    void for_each(const std::function<void(const std::string&, const Tensor&)>& f) const;
    void for_each(const std::function<void(const std::string&, Tensor&)>& f);

    bool operator==(const ParamStore&) const = default;

private:
    std::map<std::string, Tensor> entries_;
};

namespace names {
std::string tower_param(std::int64_t layer, int tower, const std::string& role);
std::string expert_param(std::int64_t layer, int expert, const std::string& role);
std::string router(std::int64_t layer);
std::string embed(const std::string& modality);
std::string head(const std::string& modality);
inline const char* patch_proj_in() { return "patch_proj.in"; }
inline const char* patch_proj_out() { return "patch_proj.out"; }
inline const char* time_embed() { return "time_embed"; }
inline const char* null_embed() { return "null_embed"; }
inline const char* pos_embed() { return "pos_embed"; }
}  // namespace names

/// Allocates every tensor the config calls for and fills it deterministically:
/// truncated normal (std 0.02) for projections/embeddings, ones for norm
/// gains. Each tensor draws from its own counter stream keyed by name, so the
/// result is independent of enumeration order and bit-identical for a fixed
/// (cfg, seed).
ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace motlab
