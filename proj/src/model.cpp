#include "model.hpp"

#include <cmath>

#include "rng.hpp"

namespace motlab {

using nn::Graph;
using nn::Var;

ModelState make_model(const ModelConfig& cfg) { return make_model(cfg, cfg.seed); }

ModelState make_model(const ModelConfig& cfg, std::uint64_t init_seed) {
    require_valid(cfg);
    ModelState st;
    st.cfg = cfg;
    st.params = init_params(cfg, init_seed);
    if (cfg.objective_mode == ObjectiveMode::transfusion) st.sched = build_schedule(cfg.diffusion);
    return st;
}

DiffusionBatch draw_diffusion_batch(const ModelState& state, const Batch& batch,
                                    std::uint64_t seed, double drop_prob) {
    DiffusionBatch d;
    const auto& cfg = state.cfg;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const MixedSequence& seq = batch[b];
        Philox rng(seed, 0x7261776eull ^ static_cast<std::uint64_t>(b));
        auto& ts = d.t.emplace_back();
        auto& eps = d.eps.emplace_back();
        auto& noised = d.noised.emplace_back();
        for (const auto& sp : seq.image_spans) {
            const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.diffusion.T))) + 1;
            ts.push_back(t);
            Tensor x0 = Tensor::zeros({sp.len(), cfg.latent_dim}, cfg.dtype);
            for (std::int64_t i = 0; i < sp.len(); ++i)
                for (std::int64_t j = 0; j < cfg.latent_dim; ++j)
                    x0.set(i * cfg.latent_dim + j,
                           seq.latents[static_cast<std::size_t>(sp.start + i)][static_cast<std::size_t>(j)]);
            Tensor e = Tensor::zeros(x0.shape(), cfg.dtype);
            for (std::int64_t i = 0; i < e.numel(); ++i) e.set(i, rng.normal());
            noised.push_back(forward_noise(x0, t, e, state.sched));
            eps.push_back(std::move(e));
        }
        d.drop_caption.push_back(drop_prob > 0 && rng.uniform() < drop_prob ? 1 : 0);
    }
    return d;
}

namespace {

/// Sinusoidal timestep features, one row per (row of an image span).
Tensor time_sinusoid(const std::vector<int>& ts, std::int64_t d, Dtype dt) {
    Tensor out = Tensor::zeros({static_cast<std::int64_t>(ts.size()), d}, dt);
    for (std::size_t r = 0; r < ts.size(); ++r) {
        for (std::int64_t j = 0; j < d; j += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(d));
            const double x = static_cast<double>(ts[r]) * freq;
            out.set(static_cast<std::int64_t>(r) * d + j, std::sin(x));
            if (j + 1 < d) out.set(static_cast<std::int64_t>(r) * d + j + 1, std::cos(x));
        }
    }
    return out;
}

struct EmbedPlan {
    std::vector<int> row_modality;
    std::int64_t n_rows = 0;
};

Var embed_batch(Graph& g, ParamGraph& pg, const ModelState& state, const Batch& batch,
                const DiffusionBatch* diff, EmbedPlan& plan) {
    const auto& cfg = state.cfg;
    const std::int64_t n = batch.front().length;
    const std::int64_t rows = static_cast<std::int64_t>(batch.size()) * n;
    const std::int64_t d = cfg.d_model;
    check(n <= cfg.seq_len, "sequence longer than configured seq_len");
    plan.n_rows = rows;
    plan.row_modality.resize(static_cast<std::size_t>(rows));

    // Per discrete modality: rows and local ids (caption rows of dropped
    // sequences are diverted to the learned null embedding; BOI/EOI stay).
    std::map<int, std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>> discrete;
    std::vector<std::int64_t> null_rows;
    // Continuous: rows, latent values, span timesteps (0 = clean).
    std::vector<std::int64_t> latent_rows;
    std::vector<std::vector<double>> latent_vals;
    std::vector<int> latent_ts;
    std::vector<std::int64_t> positions(static_cast<std::size_t>(rows));

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const MixedSequence& seq = batch[b];
        check(seq.length == n, "batch sequences must share seq_len");
        const bool drop = diff && !diff->drop_caption.empty() && diff->drop_caption[b];
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t r = static_cast<std::int64_t>(b) * n + i;
            positions[static_cast<std::size_t>(r)] = i;
            const int m = seq.modality_of[static_cast<std::size_t>(i)];
            plan.row_modality[static_cast<std::size_t>(r)] = m;
            if (seq.is_discrete(i)) {
                const std::int64_t id = seq.discrete_ids[static_cast<std::size_t>(i)];
                const std::int64_t local = id - cfg.vocab_offset(m);
                const Modality& mod = cfg.modality(m);
                if (local < 0 || local >= mod.vocab_size)
                    throw ConfigError("position " + std::to_string(i) + ": id " +
                                      std::to_string(id) + " outside vocab of '" + mod.name + "'");
                const bool structural =
                    state.is_transfusion() && (id == cfg.boi_id() || id == cfg.eoi_id());
                if (drop && m == cfg.text_modality_id() && !structural) {
                    null_rows.push_back(r);
                } else {
                    discrete[m].first.push_back(r);
                    discrete[m].second.push_back(local);
                }
            } else {
                const int span = seq.span_of(i);
                check(span >= 0, "latent position outside every image span");
                latent_rows.push_back(r);
                if (diff && !diff->noised.empty()) {
                    const Tensor& xt = diff->noised[b][static_cast<std::size_t>(span)];
                    const std::int64_t off = i - seq.image_spans[static_cast<std::size_t>(span)].start;
                    std::vector<double> v(static_cast<std::size_t>(cfg.latent_dim));
                    for (std::int64_t j = 0; j < cfg.latent_dim; ++j)
                        v[static_cast<std::size_t>(j)] = xt.at(off * cfg.latent_dim + j);
                    latent_vals.push_back(std::move(v));
                    latent_ts.push_back(diff->t[b][static_cast<std::size_t>(span)]);
                } else {
                    latent_vals.push_back(seq.latents[static_cast<std::size_t>(i)]);
                    latent_ts.push_back(0);
                }
            }
        }
    }

    MacScope ms(MacCategory::embed_io);
    Var x;
    auto merge = [&](Var part) { x = x.valid() ? g.add(x, part) : part; };
    for (auto& [m, rows_ids] : discrete) {
        Var table = pg(names::embed(cfg.modality(m).name));
        merge(g.scatter_rows(g.gather_rows(table, rows_ids.second), rows_ids.first, rows));
    }
    if (!null_rows.empty()) {
        Var null_tab = pg(names::null_embed());
        std::vector<std::int64_t> zeros_idx(null_rows.size(), 0);
        merge(g.scatter_rows(g.gather_rows(null_tab, zeros_idx), null_rows, rows));
    }
    if (!latent_rows.empty()) {
        Tensor lat = Tensor::zeros({static_cast<std::int64_t>(latent_rows.size()), cfg.latent_dim},
                                   cfg.dtype);
        for (std::size_t i = 0; i < latent_vals.size(); ++i)
            for (std::int64_t j = 0; j < cfg.latent_dim; ++j)
                lat.set(static_cast<std::int64_t>(i) * cfg.latent_dim + j,
                        latent_vals[i][static_cast<std::size_t>(j)]);
        Var patch = g.matmul(g.constant(std::move(lat)), pg(names::patch_proj_in()));
        Var timed = g.matmul(g.constant(time_sinusoid(latent_ts, d, cfg.dtype)),
                             pg(names::time_embed()));
        merge(g.scatter_rows(g.add(patch, timed), latent_rows, rows));
    }
    merge(g.gather_rows(pg(names::pos_embed()), positions));
    return x;
}

}  // namespace

ForwardResult model_forward(Graph& g, ParamGraph& pg, const ModelState& state, const Batch& batch,
                            const DiffusionBatch* diff, bool capture_layers) {
    check(!batch.empty(), "model_forward: empty batch");
    const auto& cfg = state.cfg;
    ForwardResult res;
    res.batch = static_cast<std::int64_t>(batch.size());
    res.n = batch.front().length;

    EmbedPlan plan;
    Var x = embed_batch(g, pg, state, batch, diff, plan);
    res.row_modality = std::move(plan.row_modality);

    auto masks = build_batch_masks(cfg.attention_mode, batch, cfg.dtype);
    for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
        x = mot_layer_forward(g, pg, x, res.row_modality, cfg, l, masks, &res.routing);
        if (capture_layers) res.layer_hidden.push_back(g.value(x));
    }
    res.hidden = x;
    return res;
}

LossGraph build_loss(Graph& g, ParamGraph& pg, const ModelState& state, const Batch& batch,
                     const DiffusionBatch* diff) {
    const auto& cfg = state.cfg;
    ForwardResult fwd = model_forward(g, pg, state, batch, diff);
    const std::int64_t n = fwd.n;
    LossGraph out;
    out.routing = std::move(fwd.routing);

    // Next-token LM: predictor row r = (b, i) scores the target at i+1 when
    // the target is discrete and loss-masked. Image-patch positions never
    // appear as LM targets.
    std::map<int, std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>> lm;  // rows, ids
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const MixedSequence& seq = batch[b];
        for (std::int64_t i = 0; i + 1 < n; ++i) {
            const std::int64_t tgt = i + 1;
            if (!seq.is_discrete(tgt) || !seq.loss_mask[static_cast<std::size_t>(tgt)]) continue;
            const int m = seq.modality_of[static_cast<std::size_t>(tgt)];
            lm[m].first.push_back(static_cast<std::int64_t>(b) * n + i);
            lm[m].second.push_back(seq.discrete_ids[static_cast<std::size_t>(tgt)] -
                                   cfg.vocab_offset(m));
        }
    }

    Var lm_sum;
    std::int64_t lm_total_count = 0;
    for (auto& [m, rows_ids] : lm) {
        MacScope ms(MacCategory::head);
        Var hrows = g.gather_rows(fwd.hidden, rows_ids.first);
        Var logits = g.matmul(hrows, pg(names::head(cfg.modality(m).name)));
        Var nll = g.cross_entropy_logits(logits, rows_ids.second);
        Var sum = g.sum_all(nll);
        const auto count = static_cast<std::int64_t>(rows_ids.first.size());
        out.modality_loss[m] = g.scale(sum, 1.0 / static_cast<double>(count));
        out.modality_count[m] = count;
        lm_total_count += count;
        lm_sum = lm_sum.valid() ? g.add(lm_sum, sum) : sum;
    }
    Var lm_mean = lm_sum.valid() ? g.scale(lm_sum, 1.0 / static_cast<double>(lm_total_count)) : Var{};

    if (!state.is_transfusion()) {
        out.total = lm_mean.valid() ? lm_mean : g.scalar(0.0, cfg.dtype);
        return out;
    }

    // DDPM term: per-image coordinate-mean MSE, then mean over images.
    Var ddpm_sum;
    std::int64_t n_images = 0;
    const int img_modality = *cfg.continuous_modality_id();
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const MixedSequence& seq = batch[b];
        for (std::size_t s = 0; s < seq.image_spans.size(); ++s) {
            const ImageSpan& sp = seq.image_spans[s];
            std::vector<std::int64_t> rows;
            for (std::int64_t i = sp.start; i < sp.end; ++i)
                rows.push_back(static_cast<std::int64_t>(b) * n + i);
            MacScope ms(MacCategory::head);
            Var pred = g.matmul(g.gather_rows(fwd.hidden, rows), pg(names::patch_proj_out()));
            check(diff != nullptr && !diff->eps.empty(), "transfusion loss needs diffusion draws");
            Var mse = g.mse_vs(pred, diff->eps[b][s]);
            ddpm_sum = ddpm_sum.valid() ? g.add(ddpm_sum, mse) : mse;
            ++n_images;
        }
    }
    Var total;
    if (lm_mean.valid()) total = lm_mean;
    if (ddpm_sum.valid()) {
        Var ddpm_mean = g.scale(ddpm_sum, 1.0 / static_cast<double>(n_images));
        out.modality_loss[img_modality] = ddpm_mean;
        out.modality_count[img_modality] = n_images;
        Var weighted = g.scale(ddpm_mean, cfg.diffusion.lambda_coeff);
        total = total.valid() ? g.add(total, weighted) : weighted;
    }
    out.total = total.valid() ? total : g.scalar(0.0, cfg.dtype);
    return out;
}

LossBreakdown eval_loss(const ModelState& state, const Batch& batch, std::uint64_t noise_seed) {
    Graph g(false);
    ParamGraph pg(g, state.params);
    DiffusionBatch diff;
    const DiffusionBatch* dptr = nullptr;
    if (state.is_transfusion()) {
        diff = draw_diffusion_batch(state, batch, noise_seed, 0.0);
        dptr = &diff;
    }
    LossGraph lg = build_loss(g, pg, state, batch, dptr);
    LossBreakdown out;
    out.total = g.value(lg.total).at(0);
    if (!std::isfinite(out.total)) throw NumericError("eval_loss: non-finite loss");
    for (const auto& [m, var] : lg.modality_loss) out.by_modality[m] = g.value(var).at(0);
    out.counts = lg.modality_count;
    return out;
}

Tensor logits_at(const ModelState& state, const MixedSequence& seq, std::int64_t pos,
                 int head_modality, const DiffusionBatch* diff) {
    Graph g(false);
    ParamGraph pg(g, state.params);
    ForwardResult fwd = model_forward(g, pg, state, {seq}, diff);
    MacScope ms(MacCategory::head);
    Var row = g.gather_rows(fwd.hidden, {pos});
    Var logits = g.matmul(row, pg(names::head(state.cfg.modality(head_modality).name)));
    return g.value(logits);
}

Tensor eps_pred_for_span(const ModelState& state, const MixedSequence& seq, int span_index,
                         const DiffusionBatch* diff) {
    Graph g(false);
    ParamGraph pg(g, state.params);
    ForwardResult fwd = model_forward(g, pg, state, {seq}, diff);
    const ImageSpan& sp = seq.image_spans[static_cast<std::size_t>(span_index)];
    std::vector<std::int64_t> rows;
    for (std::int64_t i = sp.start; i < sp.end; ++i) rows.push_back(i);
    MacScope ms(MacCategory::head);
    return g.value(g.matmul(g.gather_rows(fwd.hidden, rows), pg(names::patch_proj_out())));
}

}  // namespace motlab
