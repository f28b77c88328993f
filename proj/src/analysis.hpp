#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "model.hpp"

namespace motlab {

enum class Split { train, valid };
const char* split_name(Split s);
Split split_from_name(const std::string& s);

struct CurvePoint {
    std::int64_t step = 0;
    double loss_total = 0;
    std::map<std::string, double> by_modality;
    double lr = 0;
    double grad_norm = 0;
};

/// Per-split loss records; steps strictly increasing within a split.
struct LossCurve {
    std::vector<CurvePoint> train;
    std::vector<CurvePoint> valid;

    const std::vector<CurvePoint>& points(Split s) const {
        return s == Split::train ? train : valid;
    }
    void append(Split s, CurvePoint p);
};

struct StepMatchRow {
    std::int64_t ref_step = 0;
    std::optional<std::int64_t> matched_step;
    std::optional<double> ratio;
};

/// EMA-smooths both curves (step-aware half-life), then for every reference
/// point (s, L) finds the earliest candidate step whose smoothed loss is
/// <= L. modality "total" uses loss_total.
std::vector<StepMatchRow> step_match(const LossCurve& reference, const LossCurve& candidate,
                                     const std::string& modality, int smoothing_halflife,
                                     Split split);

std::string step_match_csv(const std::vector<StepMatchRow>& rows);

/// Smoothed series helper (exposed for tests): decay 0.5^(dstep/halflife).
std::vector<double> ema_smooth(const std::vector<std::int64_t>& steps,
                               const std::vector<double>& values, int halflife);

/// Loss recomputed per modality on one batch; the weighted recombination
/// ({1, lambda} in transfusion, position counts in chameleon) matches the
/// total within float tolerance.
std::map<std::string, double> modality_losses(const ModelState& state, const Batch& batch,
                                              std::uint64_t noise_seed);

struct ProbeResult {
    std::vector<std::array<double, 2>> coords;  // n x 2 PCA projection
    std::vector<int> labels;                    // modality id per row
    double explained_var1 = 0;
    double explained_var2 = 0;
    std::optional<double> silhouette;  // absent for < 2 modalities or zero variance
};

/// Collects hidden states after the given layer, mean-centers, projects onto
/// the top-2 principal components (power iteration, tol 1e-8) and scores
/// modality separation with the mean Euclidean silhouette.
ProbeResult feature_cluster_probe(const ModelState& state, const Batch& batch, int layer,
                                  std::uint64_t noise_seed = 0);

/// PCA/silhouette over raw row vectors (the probe's computational core;
/// exposed for oracle tests on hand-built states).
ProbeResult pca_silhouette(const Tensor& rows, const std::vector<int>& labels);

}  // namespace motlab
