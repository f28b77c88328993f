#include "sequence.hpp"

#include <algorithm>

namespace motlab {

MixedSequence MixedSequence::empty(std::int64_t n, std::int64_t /*latent_dim*/) {
    MixedSequence s;
    s.length = n;
    s.modality_of.assign(static_cast<std::size_t>(n), 0);
    s.discrete_ids.assign(static_cast<std::size_t>(n), -1);
    s.latents.assign(static_cast<std::size_t>(n), {});
    s.loss_mask.assign(static_cast<std::size_t>(n), 0);
    return s;
}

void MixedSequence::put_discrete(std::int64_t pos, int modality, std::int64_t global_id,
                                 bool in_loss) {
    modality_of[static_cast<std::size_t>(pos)] = modality;
    discrete_ids[static_cast<std::size_t>(pos)] = global_id;
    latents[static_cast<std::size_t>(pos)].clear();
    loss_mask[static_cast<std::size_t>(pos)] = in_loss ? 1 : 0;
}

void MixedSequence::put_latent(std::int64_t pos, int modality, std::vector<double> latent,
                               bool in_loss) {
    modality_of[static_cast<std::size_t>(pos)] = modality;
    discrete_ids[static_cast<std::size_t>(pos)] = -1;
    latents[static_cast<std::size_t>(pos)] = std::move(latent);
    loss_mask[static_cast<std::size_t>(pos)] = in_loss ? 1 : 0;
}

int MixedSequence::span_of(std::int64_t pos) const {
    for (std::size_t s = 0; s < image_spans.size(); ++s)
        if (pos >= image_spans[s].start && pos < image_spans[s].end) return static_cast<int>(s);
    return -1;
}

std::vector<std::string> validate_sequence(const MixedSequence& seq, const ModelConfig& cfg) {
    std::vector<std::string> v;
    auto bad = [&](const std::string& m) { v.push_back(m); };
    const std::int64_t n = seq.length;
    const auto sz = static_cast<std::size_t>(n);
    if (seq.modality_of.size() != sz || seq.discrete_ids.size() != sz ||
        seq.latents.size() != sz || seq.loss_mask.size() != sz) {
        bad("array lengths disagree with length field");
        return v;
    }

    for (std::int64_t i = 0; i < n; ++i) {
        const int m = seq.modality_of[static_cast<std::size_t>(i)];
        if (m < 0 || m >= cfg.n_modalities()) {
            bad("position " + std::to_string(i) + ": modality id " + std::to_string(m) +
                " out of range");
            continue;
        }
        const bool has_id = seq.discrete_ids[static_cast<std::size_t>(i)] >= 0;
        const bool has_latent = !seq.latents[static_cast<std::size_t>(i)].empty();
        if (has_id == has_latent)
            bad("position " + std::to_string(i) + ": exactly one of id/latent must be set");
        const Modality& mod = cfg.modality(m);
        if (mod.kind == ModalityKind::discrete) {
            if (!has_id) {
                bad("position " + std::to_string(i) + ": discrete modality without id");
            } else {
                const std::int64_t id = seq.discrete_ids[static_cast<std::size_t>(i)];
                const std::int64_t off = cfg.vocab_offset(m);
                if (id < off || id >= off + mod.vocab_size)
                    bad("position " + std::to_string(i) + ": id " + std::to_string(id) +
                        " outside vocab of modality '" + mod.name + "'");
            }
        } else {
            if (!has_latent)
                bad("position " + std::to_string(i) + ": continuous modality without latent");
            else if (static_cast<std::int64_t>(seq.latents[static_cast<std::size_t>(i)].size()) !=
                     cfg.latent_dim)
                bad("position " + std::to_string(i) + ": latent dim " +
                    std::to_string(seq.latents[static_cast<std::size_t>(i)].size()) + " != " +
                    std::to_string(cfg.latent_dim));
        }
    }

    auto spans = seq.image_spans;
    std::sort(spans.begin(), spans.end(),
              [](const ImageSpan& a, const ImageSpan& b) { return a.start < b.start; });
    std::int64_t prev_end = -1;
    for (const auto& sp : spans) {
        if (sp.start >= sp.end || sp.start < 0 || sp.end > n) {
            bad("span [" + std::to_string(sp.start) + "," + std::to_string(sp.end) + ") malformed");
            continue;
        }
        if (sp.boi_pos < prev_end)
            bad("span at " + std::to_string(sp.start) + " overlaps the previous one");
        prev_end = sp.eoi_pos + 1;
        if (sp.boi_pos != sp.start - 1 || sp.eoi_pos != sp.end)
            bad("span [" + std::to_string(sp.start) + "," + std::to_string(sp.end) +
                ") not directly bracketed by BOI/EOI positions");
        if (sp.boi_pos < 0 || sp.eoi_pos >= n) {
            bad("span brackets outside the sequence");
            continue;
        }
        if (seq.discrete_ids[static_cast<std::size_t>(sp.boi_pos)] != cfg.boi_id())
            bad("position " + std::to_string(sp.boi_pos) + " is not the BOI token");
        if (seq.discrete_ids[static_cast<std::size_t>(sp.eoi_pos)] != cfg.eoi_id())
            bad("position " + std::to_string(sp.eoi_pos) + " is not the EOI token");
        const int m0 = sp.start < n ? seq.modality_of[static_cast<std::size_t>(sp.start)] : -1;
        for (std::int64_t i = sp.start; i < sp.end; ++i) {
            if (seq.modality_of[static_cast<std::size_t>(i)] != m0) {
                bad("span at " + std::to_string(sp.start) + " mixes modalities");
                break;
            }
        }
        if (m0 >= 0 && cfg.modality(m0).kind != ModalityKind::continuous)
            bad("span at " + std::to_string(sp.start) + " does not cover a continuous modality");
    }

    // every continuous position must belong to some span
    for (std::int64_t i = 0; i < n; ++i) {
        const int m = seq.modality_of[static_cast<std::size_t>(i)];
        if (m >= 0 && m < cfg.n_modalities() &&
            cfg.modality(m).kind == ModalityKind::continuous && seq.span_of(i) < 0)
            bad("continuous position " + std::to_string(i) + " outside every image span");
    }
    return v;
}

void require_valid_sequence(const MixedSequence& seq, const ModelConfig& cfg) {
    const auto v = validate_sequence(seq, cfg);
    if (v.empty()) return;
    std::string msg = "invalid sequence:";
    for (const auto& s : v) msg += "\n  - " + s;
    throw ConfigError(msg);
}

}  // namespace motlab
