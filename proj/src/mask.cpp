#include "mask.hpp"

#include <algorithm>

namespace motlab {

Tensor AttnMask::additive(Dtype dt) const {
    Tensor t = Tensor::zeros({n, n}, dt);
    for (std::int64_t i = 0; i < n * n; ++i)
        if (!allowed[static_cast<std::size_t>(i)]) t.set(i, nn::kMaskNegInf);
    return t;
}

AttnMask build_mask(AttentionMode mode, const MixedSequence& seq) {
    const std::int64_t n = seq.length;
    AttnMask mask;
    mask.n = n;
    mask.allowed.assign(static_cast<std::size_t>(n * n), 0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j <= i; ++j) mask.allowed[static_cast<std::size_t>(i * n + j)] = 1;
    if (mode == AttentionMode::causal) return mask;

    auto spans = seq.image_spans;
    std::sort(spans.begin(), spans.end(),
              [](const ImageSpan& a, const ImageSpan& b) { return a.start < b.start; });
    std::int64_t prev_end = -1;
    for (const auto& sp : spans) {
        check(sp.start >= 0 && sp.start < sp.end && sp.end <= n,
              "build_mask: malformed image span");
        check(sp.start >= prev_end, "build_mask: overlapping image spans");
        prev_end = sp.end;
        for (std::int64_t i = sp.start; i < sp.end; ++i)
            for (std::int64_t j = sp.start; j < sp.end; ++j)
                mask.allowed[static_cast<std::size_t>(i * n + j)] = 1;
    }
    return mask;
}

std::shared_ptr<nn::BatchAdditiveMasks> build_batch_masks(AttentionMode mode, const Batch& batch,
                                                          Dtype dt) {
    auto out = std::make_shared<nn::BatchAdditiveMasks>();
    check(!batch.empty(), "build_batch_masks: empty batch");
    out->seq_len = batch.front().length;
    for (const auto& seq : batch) {
        check(seq.length == out->seq_len, "build_batch_masks: unequal sequence lengths");
        out->masks.push_back(build_mask(mode, seq).additive(dt));
    }
    return out;
}

}  // namespace motlab
