#include "accounting.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "model.hpp"
#include "synthdata.hpp"

namespace motlab {

CostReport count_params(const ModelConfig& cfg) {
    require_valid(cfg);
    CostReport r;
    r.label = sparsity_name(cfg.sparsity);
    const std::int64_t d = cfg.d_model;
    const std::int64_t h = cfg.hidden();
    const std::int64_t e = cfg.moe_experts;
    const int k = cfg.n_towers();
    const LayerVariant var = layer_variant_for(cfg.sparsity);

    const std::int64_t k_qkv = var.untie_qkv ? k : 1;
    const std::int64_t k_o = var.untie_o ? k : 1;
    const std::int64_t k_ln = var.untie_ln ? k : 1;
    const std::int64_t k_ffn = var.untie_ffn ? k : 1;
    std::int64_t moe_slots = 0;
    for (int t = 0; t < static_cast<int>(k_ffn); ++t)
        if (cfg.tower_uses_moe(t)) ++moe_slots;
    const std::int64_t swiglu_slots = k_ffn - moe_slots;

    const std::int64_t per_layer = k_qkv * 3 * d * d + k_o * d * d + k_ln * 2 * d +
                                   swiglu_slots * 3 * d * h +
                                   moe_slots * (e * 3 * d * h + d * e);
    const std::int64_t dense_layer = 4 * d * d + 3 * d * h + 2 * d;
    const std::int64_t moe_added_layer = moe_slots * ((e - 1) * 3 * d * h + d * e);
    r.params_by_group["layer"] = per_layer * cfg.n_layers;
    r.moe_added = moe_added_layer * cfg.n_layers;
    r.mot_added = (per_layer - dense_layer - moe_added_layer) * cfg.n_layers;

    std::int64_t embed = 0, head = 0;
    for (const auto& m : cfg.modalities) {
        if (m.kind != ModalityKind::discrete) continue;
        embed += m.vocab_size * d;
        head += d * m.vocab_size;
    }
    r.params_by_group["embed"] = embed;
    r.params_by_group["head"] = head;
    r.params_by_group["pos_embed"] = cfg.seq_len * d;
    if (cfg.objective_mode == ObjectiveMode::transfusion) {
        r.params_by_group["patch_proj"] = cfg.latent_dim * d + d * cfg.latent_dim;
        r.params_by_group["time_embed"] = d * d;
        r.params_by_group["null_embed"] = d;
    }
    for (const auto& [g, nvals] : r.params_by_group) r.params_total += nvals;
    return r;
}

Batch make_probe_batch(const ModelConfig& cfg, std::int64_t n) {
    SynthSpec spec;
    spec.corpus_seed = 0x70726f6265ull;  // fixed: the probe is part of the measurement
    spec.caption_first_prob = 1.0;
    spec.image_patches = std::min<std::int64_t>(16, std::max<std::int64_t>(2, n / 4));
    if (cfg.objective_mode == ObjectiveMode::chameleon) {
        ModelConfig probe_cfg = cfg;
        probe_cfg.seq_len = std::max(cfg.seq_len, n);
        return gen_chameleon_batch(spec, probe_cfg, 1, n, 0);
    }
    ModelConfig probe_cfg = cfg;
    probe_cfg.seq_len = std::max(cfg.seq_len, n);
    return gen_transfusion_batch(spec, probe_cfg, 1, n, 0);
}

namespace {

std::map<std::string, std::int64_t> run_probe(const ModelConfig& cfg, std::int64_t n,
                                              std::int64_t* total) {
    require_valid(cfg);
    ModelConfig probe_cfg = cfg;
    probe_cfg.seq_len = std::max(cfg.seq_len, n);
    ModelState state = make_model(probe_cfg, probe_cfg.seed);
    Batch batch = make_probe_batch(probe_cfg, n);

    DiffusionBatch diff;
    const DiffusionBatch* dptr = nullptr;
    if (state.is_transfusion()) {
        diff = draw_diffusion_batch(state, batch, 0x6d616373ull, 0.0);
        dptr = &diff;
    }
    macs::reset();
    nn::Graph g(false);
    ParamGraph pg(g, state.params);
    (void)build_loss(g, pg, state, batch, dptr);
    std::map<std::string, std::int64_t> by;
    for (int c = 0; c < kNumMacCategories; ++c) {
        const auto cat = static_cast<MacCategory>(c);
        if (macs::by(cat) != 0) by[mac_category_name(cat)] = macs::by(cat);
    }
    *total = macs::total();
    macs::reset();
    return by;
}

}  // namespace

std::int64_t count_macs(const ModelConfig& cfg, std::int64_t n) {
    std::int64_t total = 0;
    run_probe(cfg, n, &total);
    return total;
}

CostReport cost_report(const ModelConfig& cfg, std::int64_t n) {
    CostReport r = count_params(cfg);
    r.macs_by_category = run_probe(cfg, n, &r.macs_forward_total);
    r.probe_tokens = n;
    r.macs_forward_per_token =
        static_cast<std::int64_t>(std::llround(static_cast<double>(r.macs_forward_total) /
                                               static_cast<double>(n)));
    r.ppf = static_cast<double>(r.params_total) / static_cast<double>(r.macs_forward_per_token);
    return r;
}

std::vector<CostReport> ppf_compare(const std::vector<ModelConfig>& cfgs, std::int64_t n) {
    check(cfgs.size() >= 2, "ppf_compare: need at least 2 configs");
    std::vector<CostReport> out;
    for (const auto& c : cfgs) out.push_back(cost_report(c, n));
    return out;
}

std::string ppf_table(const std::vector<CostReport>& reports) {
    std::ostringstream os;
    os << std::left << std::setw(22) << "variant" << std::right << std::setw(14) << "params"
       << std::setw(14) << "macs/token" << std::setw(10) << "ppf" << std::setw(12) << "mot_added"
       << std::setw(12) << "moe_added" << "\n";
    for (const auto& r : reports) {
        os << std::left << std::setw(22) << r.label << std::right << std::setw(14)
           << r.params_total << std::setw(14) << r.macs_forward_per_token << std::setw(10)
           << std::fixed << std::setprecision(3) << r.ppf << std::setw(12) << r.mot_added
           << std::setw(12) << r.moe_added << "\n";
    }
    return os.str();
}

}  // namespace motlab
