#include "generate.hpp"

#include <cmath>

namespace motlab {

namespace {

/// Per-span embedding inputs for a generation forward: the active span sees
/// timestep t_active, completed spans are clean (t = 0); latents come from
/// the sequence itself.
DiffusionBatch gen_embed_inputs(const ModelState& state, const MixedSequence& seq,
                                int active_span, int t_active, bool drop_caption) {
    DiffusionBatch d;
    auto& ts = d.t.emplace_back();
    auto& noised = d.noised.emplace_back();
    const std::int64_t ld = state.cfg.latent_dim;
    for (std::size_t s = 0; s < seq.image_spans.size(); ++s) {
        const ImageSpan& sp = seq.image_spans[s];
        ts.push_back(static_cast<int>(s) == active_span ? t_active : 0);
        Tensor x = Tensor::zeros({sp.len(), ld}, state.cfg.dtype);
        for (std::int64_t i = 0; i < sp.len(); ++i)
            for (std::int64_t j = 0; j < ld; ++j)
                x.set(i * ld + j, seq.latents[static_cast<std::size_t>(sp.start + i)][static_cast<std::size_t>(j)]);
        noised.push_back(std::move(x));
    }
    d.drop_caption.push_back(drop_caption ? 1 : 0);
    return d;
}

void write_span_latents(MixedSequence& seq, const ImageSpan& sp, const Tensor& x) {
    const std::int64_t ld = x.cols();
    for (std::int64_t i = 0; i < sp.len(); ++i) {
        auto& dst = seq.latents[static_cast<std::size_t>(sp.start + i)];
        dst.resize(static_cast<std::size_t>(ld));
        for (std::int64_t j = 0; j < ld; ++j) dst[static_cast<std::size_t>(j)] = x.at(i * ld + j);
    }
}

std::int64_t sample_from_logits(const Tensor& logits, double temperature, Philox& rng) {
    const std::int64_t v = logits.numel();
    if (temperature <= 1e-12) {
        std::int64_t best = 0;
        for (std::int64_t i = 1; i < v; ++i)
            if (logits.at(i) > logits.at(best)) best = i;
        return best;
    }
    double maxl = logits.at(0);
    for (std::int64_t i = 1; i < v; ++i) maxl = std::max(maxl, logits.at(i));
    std::vector<double> p(static_cast<std::size_t>(v));
    double denom = 0;
    for (std::int64_t i = 0; i < v; ++i) {
        p[static_cast<std::size_t>(i)] = std::exp((logits.at(i) - maxl) / temperature);
        denom += p[static_cast<std::size_t>(i)];
    }
    const double u = rng.uniform() * denom;
    double acc = 0;
    for (std::int64_t i = 0; i < v; ++i) {
        acc += p[static_cast<std::size_t>(i)];
        if (u < acc) return i;
    }
    return v - 1;
}

void append_discrete(MixedSequence& seq, int modality, std::int64_t global_id) {
    seq.length += 1;
    seq.modality_of.push_back(modality);
    seq.discrete_ids.push_back(global_id);
    seq.latents.emplace_back();
    seq.loss_mask.push_back(0);
}

}  // namespace

GenerateResult generate(const ModelState& state, const MixedSequence& prompt,
                        const GenOptions& opt, Philox& rng) {
    const ModelConfig& cfg = state.cfg;
    check(state.is_transfusion(), "generate: transfusion mode only");
    require_valid_sequence(prompt, cfg);
    check(prompt.length >= 1, "generate: empty prompt");

    GenerateResult res;
    res.seq = prompt;
    MixedSequence& seq = res.seq;
    const int text_m = cfg.text_modality_id();
    const int img_m = *cfg.continuous_modality_id();
    const double cfg_w = opt.cfg_scale >= 0 ? opt.cfg_scale : cfg.diffusion.cfg_scale;
    std::int64_t appended = 0;
    bool pending_image =
        seq.is_discrete(seq.length - 1) && seq.discrete_ids.back() == cfg.boi_id() &&
        (seq.image_spans.empty() || seq.image_spans.back().boi_pos != seq.length - 1);

    while (appended < opt.max_tokens && seq.length < cfg.seq_len) {
        if (pending_image) {
            const std::int64_t needed = opt.image_patches + 1;  // patches + EOI
            if (appended + needed > opt.max_tokens || seq.length + needed > cfg.seq_len) {
                res.truncated_midspan = true;
                break;
            }
            ImageSpan sp;
            sp.start = seq.length;
            sp.end = sp.start + opt.image_patches;
            sp.boi_pos = sp.start - 1;
            sp.eoi_pos = sp.end;
            Tensor x = Tensor::zeros({opt.image_patches, cfg.latent_dim}, cfg.dtype);
            for (std::int64_t i = 0; i < x.numel(); ++i) x.set(i, rng.normal());
            for (std::int64_t i = 0; i < opt.image_patches; ++i) {
                seq.length += 1;
                seq.modality_of.push_back(img_m);
                seq.discrete_ids.push_back(-1);
                seq.latents.emplace_back(static_cast<std::size_t>(cfg.latent_dim), 0.0);
                seq.loss_mask.push_back(0);
            }
            seq.image_spans.push_back(sp);
            const int active = static_cast<int>(seq.image_spans.size()) - 1;
            write_span_latents(seq, sp, x);

            const auto ts = inference_timesteps(state.sched.T, cfg.diffusion.inference_steps);
            for (std::size_t j = 0; j < ts.size(); ++j) {
                const int t_hi = ts[j];
                const int t_lo = j + 1 < ts.size() ? ts[j + 1] : 0;
                Tensor eps_hat;
                if (opt.eps_override) {
                    eps_hat = opt.eps_override(x, t_hi);
                } else {
                    DiffusionBatch d = gen_embed_inputs(state, seq, active, t_hi, false);
                    eps_hat = eps_pred_for_span(state, seq, active, &d);
                    if (cfg_w > 0 && cfg_w != 1.0) {
                        DiffusionBatch du = gen_embed_inputs(state, seq, active, t_hi, true);
                        Tensor eps_unc = eps_pred_for_span(state, seq, active, &du);
                        eps_hat = cfg_combine(eps_hat, eps_unc, cfg_w);
                    }
                }
                Tensor z = Tensor::zeros(x.shape(), cfg.dtype);
                if (cfg.diffusion.sigma_mode == SigmaMode::ddpm_beta && t_lo >= 1)
                    for (std::int64_t i = 0; i < z.numel(); ++i) z.set(i, rng.normal());
                x = reverse_step_between(x, t_hi, t_lo, eps_hat, z, state.sched,
                                         cfg.diffusion.sigma_mode);
                write_span_latents(seq, sp, x);
            }
            append_discrete(seq, text_m, cfg.eoi_id());
            appended += needed;
            pending_image = false;
            continue;
        }

        const Tensor logits = logits_at(state, seq, seq.length - 1, text_m, nullptr);
        const std::int64_t local = sample_from_logits(logits, opt.temperature, rng);
        const std::int64_t global = local + cfg.vocab_offset(text_m);
        append_discrete(seq, text_m, global);
        ++appended;
        if (global == cfg.boi_id()) pending_image = true;
    }
    return res;
}

}  // namespace motlab
