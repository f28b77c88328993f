#pragma once

#include <functional>

#include "model.hpp"
#include "rng.hpp"

namespace motlab {

struct GenOptions {
    /// Budget on appended positions (text tokens, patches and EOI all count).
    std::int64_t max_tokens = 64;
    std::int64_t image_patches = 16;
    /// <= 0 is treated as argmax decoding.
    double temperature = 1.0;
    /// < 0 falls back to cfg.diffusion.cfg_scale; 0 and 1 disable guidance
    /// (1 skips the redundant unconditioned forward).
    double cfg_scale = -1.0;
    /// Test hook: replaces the model's epsilon prediction for the active
    /// span: (x_t, t) -> eps. Null uses the model.
    std::function<Tensor(const Tensor&, int)> eps_override;
};

struct GenerateResult {
    MixedSequence seq;
    bool truncated_midspan = false;
};

/// Autoregressive text sampling that switches into iterative denoising when
/// BOI is emitted: image_patches rows of pure noise are appended, the
/// subsampled reverse chain (diffusion.inference_steps) runs with the hybrid
/// mask rebuilt every iteration, EOI is appended, and text sampling resumes.
/// Transfusion mode only.
GenerateResult generate(const ModelState& state, const MixedSequence& prompt,
                        const GenOptions& opt, Philox& rng);

}  // namespace motlab
