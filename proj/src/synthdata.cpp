#include "synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rng.hpp"

namespace motlab {

namespace {

constexpr double kRowProbs[4] = {0.45, 0.30, 0.15, 0.10};

std::int64_t plain_text_vocab(const ModelConfig& cfg) {
    const Modality& t = cfg.modality(cfg.text_modality_id());
    return t.vocab_size - 2;  // BOI/EOI reserved at the top
}

std::int64_t block_len(const SynthSpec& spec, const std::string& name) {
    double w = 1.0, w_img = 1.0;
    if (!spec.token_ratio.empty()) {
        auto it = spec.token_ratio.find(name);
        if (it != spec.token_ratio.end()) w = it->second;
        auto im = spec.token_ratio.find("image");
        if (im != spec.token_ratio.end()) w_img = im->second;
    }
    return std::max<std::int64_t>(
        2, std::llround(static_cast<double>(spec.image_patches) * w / w_img));
}

std::int64_t markov_next(const SynthSpec& spec, const ModelConfig& cfg, int modality,
                         std::int64_t state, Philox& rng) {
    const MarkovRow row = markov_row(spec, cfg, modality, state);
    const double u = rng.uniform();
    double acc = 0;
    for (std::size_t i = 0; i < row.probs.size(); ++i) {
        acc += row.probs[i];
        if (u < acc) return row.successors[i];
    }
    return row.successors.back();
}

Philox seq_rng(const SynthSpec& spec, std::uint64_t stream_tag, std::uint64_t index) {
    return Philox(spec.corpus_seed, (stream_tag << 20) ^ index);
}

}  // namespace

MarkovRow markov_row(const SynthSpec& spec, const ModelConfig& cfg, int modality,
                     std::int64_t state) {
    const std::int64_t v = modality == cfg.text_modality_id()
                               ? plain_text_vocab(cfg)
                               : cfg.modality(modality).vocab_size;
    check(state >= 0 && state < v, "markov_row: state out of range");
    MarkovRow row;
    Philox rng(spec.corpus_seed ^ 0x6d61726bull, (static_cast<std::uint64_t>(modality) << 48) ^
                                                     static_cast<std::uint64_t>(state));
    const int fanout = static_cast<int>(std::min<std::int64_t>(4, v));
    for (int i = 0; i < fanout; ++i) {
        std::int64_t s = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(v)));
        while (std::find(row.successors.begin(), row.successors.end(), s) !=
               row.successors.end())
            s = (s + 1) % v;
        row.successors.push_back(s);
        row.probs.push_back(kRowProbs[i]);
    }
    double total = 0;
    for (double p : row.probs) total += p;
    for (double& p : row.probs) p /= total;
    return row;
}

std::vector<std::int64_t> class_support_ids(const SynthSpec& spec, const ModelConfig& cfg,
                                            int modality, int cls) {
    const std::int64_t v = cfg.modality(modality).vocab_size;
    const int support = static_cast<int>(std::min<std::int64_t>(spec.class_support, v));
    std::vector<std::int64_t> ids;
    Philox rng(spec.corpus_seed ^ 0x636c7373ull, (static_cast<std::uint64_t>(modality) << 32) ^
                                                     static_cast<std::uint64_t>(cls));
    for (int i = 0; i < support; ++i) {
        std::int64_t s = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(v)));
        while (std::find(ids.begin(), ids.end(), s) != ids.end()) s = (s + 1) % v;
        ids.push_back(s);
    }
    return ids;
}

std::vector<std::vector<double>> class_means(const SynthSpec& spec, std::int64_t latent_dim) {
    check(latent_dim >= 2, "class_means: latent_dim must be >= 2");
    std::vector<std::vector<double>> mus;
    const int c_total = spec.latent_classes;
    for (int c = 0; c < c_total; ++c) {
        const double theta = 2.0 * std::numbers::pi * static_cast<double>(c) / c_total;
        std::vector<double> mu(static_cast<std::size_t>(latent_dim), 0.0);
        double norm_sq = 0;
        for (std::int64_t j = 0; j + 1 < latent_dim; j += 2) {
            const double harmonic = static_cast<double>(j / 2 + 1);
            mu[static_cast<std::size_t>(j)] = std::cos(harmonic * theta);
            mu[static_cast<std::size_t>(j + 1)] = std::sin(harmonic * theta);
            norm_sq += 1.0;
        }
        const double inv = spec.mu_scale / std::sqrt(norm_sq);
        for (double& x : mu) x *= inv;
        mus.push_back(std::move(mu));
    }
    return mus;
}

double min_mu_distance(const SynthSpec& spec, std::int64_t latent_dim) {
    const auto mus = class_means(spec, latent_dim);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < mus.size(); ++a)
        for (std::size_t b = a + 1; b < mus.size(); ++b) {
            double d = 0;
            for (std::size_t j = 0; j < mus[a].size(); ++j) {
                const double x = mus[a][j] - mus[b][j];
                d += x * x;
            }
            best = std::min(best, std::sqrt(d));
        }
    return best;
}

int nearest_class(const SynthSpec& spec, const std::vector<std::vector<double>>& patches) {
    check(!patches.empty(), "nearest_class: no patches");
    const std::int64_t d = static_cast<std::int64_t>(patches.front().size());
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (const auto& p : patches)
        for (std::int64_t j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += p[static_cast<std::size_t>(j)];
    for (double& x : mean) x /= static_cast<double>(patches.size());
    const auto mus = class_means(spec, d);
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < mus.size(); ++c) {
        double dist = 0;
        for (std::size_t j = 0; j < mus[c].size(); ++j) {
            const double x = mean[j] - mus[c][j];
            dist += x * x;
        }
        if (dist < best_d) {
            best_d = dist;
            best = static_cast<int>(c);
        }
    }
    return best;
}

Batch gen_chameleon_batch(const SynthSpec& spec, const ModelConfig& cfg, int batch,
                          std::int64_t seq_len, std::uint64_t first_index,
                          std::uint64_t stream_tag) {
    check(cfg.objective_mode == ObjectiveMode::chameleon, "gen_chameleon_batch: wrong mode");
    check(spec.latent_classes <= plain_text_vocab(cfg),
          "latent_classes must fit inside the plain text vocab");
    const int text_m = cfg.text_modality_id();
    std::vector<std::pair<int, std::int64_t>> blocks;  // modality, length
    std::int64_t group = 0;
    for (const auto& m : cfg.modalities) {
        const std::int64_t len = block_len(spec, m.name);
        blocks.emplace_back(m.id, len);
        group += len;
    }
    check(group <= seq_len, "seq_len too small for one caption+block group (needs " +
                                std::to_string(group) + ")");

    Batch out;
    for (int b = 0; b < batch; ++b) {
        Philox rng = seq_rng(spec, stream_tag, first_index + static_cast<std::uint64_t>(b));
        MixedSequence seq = MixedSequence::empty(seq_len, cfg.latent_dim);
        std::int64_t pos = 0;
        while (pos + group <= seq_len) {
            const int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.latent_classes)));
            const bool caption_first = rng.uniform() < spec.caption_first_prob;
            auto order = blocks;
            if (!caption_first)
                std::rotate(order.begin(), order.begin() + 1, order.end());  // caption last
            for (const auto& [m, len] : order) {
                if (m == text_m) {
                    std::int64_t state = cls;
                    seq.put_discrete(pos++, m, cfg.vocab_offset(m) + state);
                    for (std::int64_t j = 1; j < len; ++j) {
                        state = markov_next(spec, cfg, m, state, rng);
                        seq.put_discrete(pos++, m, cfg.vocab_offset(m) + state);
                    }
                } else {
                    const auto support = class_support_ids(spec, cfg, m, cls);
                    for (std::int64_t j = 0; j < len; ++j) {
                        const std::int64_t id =
                            support[rng.below(static_cast<std::uint64_t>(support.size()))];
                        seq.put_discrete(pos++, m, cfg.vocab_offset(m) + id);
                    }
                }
            }
        }
        while (pos < seq_len) seq.put_discrete(pos++, text_m, cfg.vocab_offset(text_m), false);
        out.push_back(std::move(seq));
    }
    return out;
}

Batch gen_transfusion_batch(const SynthSpec& spec, const ModelConfig& cfg, int batch,
                            std::int64_t seq_len, std::uint64_t first_index,
                            std::uint64_t stream_tag) {
    check(cfg.objective_mode == ObjectiveMode::transfusion, "gen_transfusion_batch: wrong mode");
    check(spec.latent_classes <= plain_text_vocab(cfg),
          "latent_classes must fit inside the plain text vocab");
    const int text_m = cfg.text_modality_id();
    const int img_m = *cfg.continuous_modality_id();
    const std::int64_t cap_len = block_len(spec, "text");
    const std::int64_t span_len = spec.image_patches + 2;  // BOI + patches + EOI
    const std::int64_t group = cap_len + span_len;
    check(group <= seq_len, "seq_len too small for one caption+image (needs " +
                                std::to_string(group) + ")");
    const auto mus = class_means(spec, cfg.latent_dim);

    Batch out;
    for (int b = 0; b < batch; ++b) {
        Philox rng = seq_rng(spec, stream_tag, first_index + static_cast<std::uint64_t>(b));
        MixedSequence seq = MixedSequence::empty(seq_len, cfg.latent_dim);
        std::int64_t pos = 0;
        while (pos + group <= seq_len) {
            const int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.latent_classes)));
            const bool caption_first = rng.uniform() < spec.caption_first_prob;
            auto emit_caption = [&] {
                std::int64_t state = cls;
                seq.put_discrete(pos++, text_m, cfg.vocab_offset(text_m) + state);
                for (std::int64_t j = 1; j < cap_len; ++j) {
                    state = markov_next(spec, cfg, text_m, state, rng);
                    seq.put_discrete(pos++, text_m, cfg.vocab_offset(text_m) + state);
                }
            };
            auto emit_image = [&] {
                seq.put_discrete(pos++, text_m, cfg.boi_id());
                ImageSpan sp;
                sp.boi_pos = pos - 1;
                sp.start = pos;
                for (std::int64_t j = 0; j < spec.image_patches; ++j) {
                    std::vector<double> patch(static_cast<std::size_t>(cfg.latent_dim));
                    for (std::int64_t k = 0; k < cfg.latent_dim; ++k)
                        patch[static_cast<std::size_t>(k)] =
                            mus[static_cast<std::size_t>(cls)][static_cast<std::size_t>(k)] +
                            spec.latent_noise_std * rng.normal();
                    seq.put_latent(pos++, img_m, std::move(patch));
                }
                sp.end = pos;
                sp.eoi_pos = pos;
                seq.put_discrete(pos++, text_m, cfg.eoi_id());
                seq.image_spans.push_back(sp);
            };
            if (caption_first) {
                emit_caption();
                emit_image();
            } else {
                emit_image();
                emit_caption();
            }
        }
        while (pos < seq_len) seq.put_discrete(pos++, text_m, cfg.vocab_offset(text_m), false);
        out.push_back(std::move(seq));
    }
    return out;
}

Batch gen_batch(const SynthSpec& spec, const ModelConfig& cfg, int batch, std::int64_t seq_len,
                std::uint64_t first_index, std::uint64_t stream_tag) {
    return cfg.objective_mode == ObjectiveMode::chameleon
               ? gen_chameleon_batch(spec, cfg, batch, seq_len, first_index, stream_tag)
               : gen_transfusion_batch(spec, cfg, batch, seq_len, first_index, stream_tag);
}

}  // namespace motlab
