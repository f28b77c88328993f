#pragma once

#include <filesystem>
#include <map>

#include "runner.hpp"

namespace motlab {

enum class Recipe { chameleon_2mod, chameleon_3mod, transfusion_2mod };
const char* recipe_name(Recipe r);
Recipe recipe_from_name(const std::string& s);

/// Desk-scale defaults: D=64, 2 layers, 4 heads, H=D, seq_len 128, batch 16,
/// 3000 steps, vocab 256 per discrete modality.
TrainConfig default_recipe_config(Recipe r);

/// mot_full with the text tower's FFN replaced by the 4-expert
/// expert-choice bank; the image tower is untouched. Idempotent.
ModelConfig hybrid_variant(const ModelConfig& base);

struct MatrixSpec {
    Recipe recipe = Recipe::chameleon_2mod;
    std::vector<Sparsity> variants;
    TrainConfig base;
    std::int64_t steps = 0;  // 0 keeps base.train.steps
    std::vector<std::uint64_t> seeds;
};

json to_json(const MatrixSpec& spec);
MatrixSpec matrix_spec_from_json(const json& j);
MatrixSpec load_matrix_spec(const std::filesystem::path& path);

using RunKey = std::pair<std::string, std::uint64_t>;  // variant name, seed

struct MatrixResult {
    std::map<RunKey, LossCurve> curves;
    std::map<std::string, std::int64_t> macs_by_variant;  // router excluded
    std::map<std::string, std::int64_t> router_macs_by_variant;
};

/// Verifies exact forward-MAC parity against the dense baseline (router
/// MACs reported separately) before any training starts, then trains every
/// (variant, seed) pair on the identical data stream. Runs execute on
/// `parallel_jobs` threads; each writes <out>/<variant>-seed<k>/ when
/// out_dir is set.
MatrixResult run_matrix(const MatrixSpec& spec, const std::filesystem::path& out_dir,
                        int parallel_jobs = 2);

/// The per-variant model config a matrix run trains (tower map rebuilt,
/// hybrid expanded, seed applied).
TrainConfig variant_config(const TrainConfig& base, Sparsity variant, std::uint64_t seed);

}  // namespace motlab
