#include "experiments.hpp"

#include <fstream>
#include <mutex>
#include <thread>

namespace motlab {

const char* recipe_name(Recipe r) {
    switch (r) {
        case Recipe::chameleon_2mod: return "chameleon_2mod";
        case Recipe::chameleon_3mod: return "chameleon_3mod";
        case Recipe::transfusion_2mod: return "transfusion_2mod";
    }
    return "?";
}

Recipe recipe_from_name(const std::string& s) {
    if (s == "chameleon_2mod") return Recipe::chameleon_2mod;
    if (s == "chameleon_3mod") return Recipe::chameleon_3mod;
    if (s == "transfusion_2mod") return Recipe::transfusion_2mod;
    throw ConfigError("unknown recipe '" + s + "'");
}

TrainConfig default_recipe_config(Recipe r) {
    TrainConfig cfg;
    ModelConfig& m = cfg.model;
    m.d_model = 64;
    m.n_layers = 2;
    m.n_heads = 4;
    m.ffn_hidden = 64;
    m.seq_len = 128;
    m.sparsity = Sparsity::dense;
    m.seed = 1;
    switch (r) {
        case Recipe::chameleon_2mod:
            m.modalities = {{0, "text", ModalityKind::discrete, 256},
                            {1, "image", ModalityKind::discrete, 256}};
            m.objective_mode = ObjectiveMode::chameleon;
            m.attention_mode = AttentionMode::causal;
            break;
        case Recipe::chameleon_3mod:
            m.modalities = {{0, "text", ModalityKind::discrete, 256},
                            {1, "image", ModalityKind::discrete, 256},
                            {2, "speech", ModalityKind::discrete, 256}};
            m.objective_mode = ObjectiveMode::chameleon;
            m.attention_mode = AttentionMode::causal;
            break;
        case Recipe::transfusion_2mod:
            m.modalities = {{0, "text", ModalityKind::discrete, 256},
                            {1, "image", ModalityKind::continuous, 0}};
            m.latent_dim = 4;
            m.objective_mode = ObjectiveMode::transfusion;
            m.attention_mode = AttentionMode::hybrid;
            m.diffusion.T = 100;
            m.diffusion.inference_steps = 50;
            m.diffusion.lambda_coeff = 5.0;
            break;
    }
    m.tower_map = TowerMap::single(m.n_modalities());
    cfg.data.image_patches = 16;
    cfg.data.latent_classes = 8;
    cfg.data.latent_noise_std = 0.1;
    cfg.data.corpus_seed = 7;
    cfg.train.steps = 3000;
    cfg.train.batch_size = 16;
    cfg.train.warmup_steps = 100;  // the 4000-step default shrunk to desk scale
    return cfg;
}

ModelConfig hybrid_variant(const ModelConfig& base) {
    if (base.sparsity == Sparsity::hybrid_mot_text_moe) return base;
    check(base.sparsity == Sparsity::mot_full, "hybrid_variant: base must be mot_full");
    check(base.find_modality("text") != nullptr, "hybrid_variant: no text modality");
    ModelConfig cfg = base;
    cfg.sparsity = Sparsity::hybrid_mot_text_moe;
    cfg.moe_experts = 4;
    return cfg;
}

json to_json(const MatrixSpec& spec) {
    json variants = json::array();
    for (auto v : spec.variants) variants.push_back(sparsity_name(v));
    json seeds = json::array();
    for (auto s : spec.seeds) seeds.push_back(s);
    return {{"schema_version", kConfigSchemaVersion},
            {"recipe", recipe_name(spec.recipe)},
            {"variants", variants},
            {"steps", spec.steps},
            {"seeds", seeds},
            {"base", to_json(spec.base)}};
}

MatrixSpec matrix_spec_from_json(const json& j) {
    for (const auto& [k, v] : j.items())
        if (k != "schema_version" && k != "recipe" && k != "variants" && k != "steps" &&
            k != "seeds" && k != "base")
            throw ConfigError("recipe: unknown field '" + k + "'");
    MatrixSpec spec;
    spec.recipe = recipe_from_name(j.at("recipe").get<std::string>());
    spec.base = j.contains("base") ? train_config_from_json(j.at("base"))
                                   : default_recipe_config(spec.recipe);
    if (j.contains("variants"))
        for (const auto& v : j.at("variants"))
            spec.variants.push_back(sparsity_from_name(v.get<std::string>()));
    if (spec.variants.empty()) spec.variants = {Sparsity::dense, Sparsity::mot_full};
    spec.steps = j.value("steps", std::int64_t{0});
    if (j.contains("seeds"))
        for (const auto& s : j.at("seeds")) spec.seeds.push_back(s.get<std::uint64_t>());
    if (spec.seeds.empty()) spec.seeds = {1, 2, 3};
    return spec;
}

MatrixSpec load_matrix_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open recipe file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("recipe " + path.string() + ": " + e.what());
    }
    return matrix_spec_from_json(j);
}

TrainConfig variant_config(const TrainConfig& base, Sparsity variant, std::uint64_t seed) {
    TrainConfig cfg = base;
    cfg.model = variant == Sparsity::hybrid_mot_text_moe
                    ? hybrid_variant(with_sparsity(base.model, Sparsity::mot_full))
                    : with_sparsity(base.model, variant);
    cfg.model.seed = seed;
    // variants share the data stream for a fixed seed; distinct seeds are
    // independent trials
    cfg.data.corpus_seed = base.data.corpus_seed ^ (seed * 0x100000001b3ull);
    return cfg;
}

MatrixResult run_matrix(const MatrixSpec& spec, const std::filesystem::path& out_dir,
                        int parallel_jobs) {
    check(!spec.variants.empty() && !spec.seeds.empty(), "run_matrix: nothing to run");
    TrainConfig base = spec.base;
    if (spec.steps > 0) base.train.steps = spec.steps;

    // FLOP-parity gate: every variant must match the dense baseline's
    // forward MACs exactly, router MACs aside.
    MatrixResult res;
    const std::int64_t probe_n = base.model.seq_len;
    std::int64_t dense_core = -1;
    std::string parity_report;
    for (Sparsity v : spec.variants) {
        const TrainConfig vc = variant_config(base, v, spec.seeds.front());
        const CostReport cr = cost_report(vc.model, probe_n);
        std::int64_t router = 0;
        if (auto it = cr.macs_by_category.find("router"); it != cr.macs_by_category.end())
            router = it->second;
        const std::int64_t core = cr.macs_forward_total - router;
        res.macs_by_variant[sparsity_name(v)] = core;
        res.router_macs_by_variant[sparsity_name(v)] = router;
        parity_report += std::string("  ") + sparsity_name(v) + ": core=" + std::to_string(core) +
                         " router=" + std::to_string(router) + "\n";
        if (dense_core < 0) dense_core = core;
    }
    for (const auto& [name, core] : res.macs_by_variant)
        if (core != dense_core)
            throw ConfigError("run_matrix: FLOP parity failed; per-variant forward MACs:\n" +
                              parity_report);

    std::vector<std::pair<Sparsity, std::uint64_t>> jobs;
    for (Sparsity v : spec.variants)
        for (std::uint64_t s : spec.seeds) jobs.emplace_back(v, s);

    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            std::size_t j;
            {
                std::lock_guard<std::mutex> lk(mu);
                if (next >= jobs.size() || first_error) return;
                j = next++;
            }
            const auto [variant, seed] = jobs[j];
            try {
                const TrainConfig vc = variant_config(base, variant, seed);
                RunOptions opts;
                if (!out_dir.empty())
                    opts.out_dir = out_dir / (std::string(sparsity_name(variant)) + "-seed" +
                                              std::to_string(seed));
                RunResult run = run_training(vc, opts);
                std::lock_guard<std::mutex> lk(mu);
                res.curves[{sparsity_name(variant), seed}] = std::move(run.curve);
            } catch (...) {
                std::lock_guard<std::mutex> lk(mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    const int n_threads = std::max(1, std::min<int>(parallel_jobs, static_cast<int>(jobs.size())));
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return res;
}

}  // namespace motlab
