#include "analysis.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace motlab {

const char* split_name(Split s) { return s == Split::train ? "train" : "valid"; }

Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "valid") return Split::valid;
    throw ConfigError("unknown split '" + s + "'");
}

void LossCurve::append(Split s, CurvePoint p) {
    auto& v = s == Split::train ? train : valid;
    check(v.empty() || p.step > v.back().step, "curve steps must be strictly increasing");
    if (!std::isfinite(p.loss_total)) throw NumericError("curve point with non-finite loss");
    v.push_back(std::move(p));
}

std::vector<double> ema_smooth(const std::vector<std::int64_t>& steps,
                               const std::vector<double>& values, int halflife) {
    std::vector<double> out(values.size());
    double ema = 0;
    bool first = true;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (first) {
            ema = values[i];
            first = false;
        } else {
            const double dstep = static_cast<double>(steps[i] - steps[i - 1]);
            const double decay =
                halflife > 0 ? std::pow(0.5, dstep / static_cast<double>(halflife)) : 0.0;
            ema = decay * ema + (1.0 - decay) * values[i];
        }
        out[i] = ema;
    }
    return out;
}

namespace {

std::pair<std::vector<std::int64_t>, std::vector<double>> series(const LossCurve& c,
                                                                 const std::string& modality,
                                                                 Split split) {
    std::vector<std::int64_t> steps;
    std::vector<double> vals;
    for (const auto& p : c.points(split)) {
        double v;
        if (modality == "total") {
            v = p.loss_total;
        } else {
            auto it = p.by_modality.find(modality);
            if (it == p.by_modality.end()) continue;
            v = it->second;
        }
        steps.push_back(p.step);
        vals.push_back(v);
    }
    return {std::move(steps), std::move(vals)};
}

}  // namespace

std::vector<StepMatchRow> step_match(const LossCurve& reference, const LossCurve& candidate,
                                     const std::string& modality, int smoothing_halflife,
                                     Split split) {
    auto [ref_steps, ref_vals] = series(reference, modality, split);
    auto [cand_steps, cand_vals] = series(candidate, modality, split);
    check(!ref_steps.empty() && !cand_steps.empty(), "step_match: empty curve");
    const auto ref_sm = ema_smooth(ref_steps, ref_vals, smoothing_halflife);
    const auto cand_sm = ema_smooth(cand_steps, cand_vals, smoothing_halflife);

    // running minimum makes "earliest step reaching <= L" a single scan
    std::vector<double> cand_min(cand_sm.size());
    double run = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cand_sm.size(); ++i) {
        run = std::min(run, cand_sm[i]);
        cand_min[i] = run;
    }

    std::vector<StepMatchRow> rows;
    for (std::size_t i = 0; i < ref_sm.size(); ++i) {
        StepMatchRow row;
        row.ref_step = ref_steps[i];
        const double target = ref_sm[i];
        const auto it = std::lower_bound(cand_min.begin(), cand_min.end(), target,
                                         [](double have, double want) { return have > want; });
        if (it != cand_min.end()) {
            const auto j = static_cast<std::size_t>(it - cand_min.begin());
            row.matched_step = cand_steps[j];
            row.ratio = static_cast<double>(cand_steps[j]) / static_cast<double>(ref_steps[i]);
        }
        rows.push_back(row);
    }
    return rows;
}

std::string step_match_csv(const std::vector<StepMatchRow>& rows) {
    std::ostringstream os;
    os << "ref_step,matched_step,ratio\n";
    for (const auto& r : rows) {
        os << r.ref_step << ",";
        if (r.matched_step) os << *r.matched_step;
        os << ",";
        if (r.ratio) os << *r.ratio;
        os << "\n";
    }
    return os.str();
}

std::map<std::string, double> modality_losses(const ModelState& state, const Batch& batch,
                                              std::uint64_t noise_seed) {
    const LossBreakdown b = eval_loss(state, batch, noise_seed);
    std::map<std::string, double> out;
    for (const auto& [m, v] : b.by_modality) out[state.cfg.modality(m).name] = v;
    return out;
}

namespace {

/// Power iteration for the top eigenvector of X^T X (X mean-centered rows).
std::vector<double> top_component(const std::vector<std::vector<double>>& rows,
                                  const std::vector<double>* deflate, double tol, double* eigval) {
    const std::size_t d = rows.front().size();
    std::vector<double> v(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) v[j] = 1.0 / std::sqrt(static_cast<double>(d) + static_cast<double>(j));
    double norm = 0;
    for (double x : v) norm += x * x;
    for (double& x : v) x /= std::sqrt(norm);

    double prev_ev = 0;
    for (int iter = 0; iter < 1000; ++iter) {
        if (deflate) {
            double dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += v[j] * (*deflate)[j];
            for (std::size_t j = 0; j < d; ++j) v[j] -= dot * (*deflate)[j];
        }
        std::vector<double> next(d, 0.0);
        for (const auto& r : rows) {
            double dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += r[j] * v[j];
            for (std::size_t j = 0; j < d; ++j) next[j] += dot * r[j];
        }
        if (deflate) {
            double dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += next[j] * (*deflate)[j];
            for (std::size_t j = 0; j < d; ++j) next[j] -= dot * (*deflate)[j];
        }
        double ev = 0;
        for (double x : next) ev += x * x;
        ev = std::sqrt(ev);
        if (ev <= 1e-30) {  // zero variance along every remaining direction
            *eigval = 0;
            return v;
        }
        for (std::size_t j = 0; j < d; ++j) next[j] /= ev;
        double diff = 0;
        for (std::size_t j = 0; j < d; ++j) diff = std::max(diff, std::abs(next[j] - v[j]));
        v = std::move(next);
        if (std::abs(ev - prev_ev) <= tol * std::max(1.0, ev) && diff <= tol) {
            prev_ev = ev;
            break;
        }
        prev_ev = ev;
    }
    *eigval = prev_ev;
    return v;
}

}  // namespace

ProbeResult pca_silhouette(const Tensor& rows_t, const std::vector<int>& labels) {
    const std::int64_t n = rows_t.rows(), d = rows_t.cols();
    check(static_cast<std::int64_t>(labels.size()) == n, "pca: label count mismatch");
    check(n >= 2, "pca: need at least 2 rows");
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += rows_t.at(i * d + j);
    for (double& m : mean) m /= static_cast<double>(n);
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(n),
                                          std::vector<double>(static_cast<std::size_t>(d)));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j)
            rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                rows_t.at(i * d + j) - mean[static_cast<std::size_t>(j)];

    ProbeResult res;
    res.labels = labels;
    double ev1 = 0, ev2 = 0;
    const auto pc1 = top_component(rows, nullptr, 1e-8, &ev1);
    const auto pc2 = top_component(rows, &pc1, 1e-8, &ev2);
    res.explained_var1 = ev1;
    res.explained_var2 = ev2;
    res.coords.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        double a = 0, b = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            a += rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * pc1[static_cast<std::size_t>(j)];
            b += rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * pc2[static_cast<std::size_t>(j)];
        }
        res.coords[static_cast<std::size_t>(i)] = {a, b};
    }

    std::set<int> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2 || ev1 <= 1e-30) return res;  // silhouette undefined

    // mean silhouette in PCA-2 space
    auto dist = [&](std::size_t a, std::size_t b) {
        const double dx = res.coords[a][0] - res.coords[b][0];
        const double dy = res.coords[a][1] - res.coords[b][1];
        return std::sqrt(dx * dx + dy * dy);
    };
    double total = 0;
    std::int64_t counted = 0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
        double intra = 0;
        std::int64_t intra_n = 0;
        std::map<int, std::pair<double, std::int64_t>> inter;
        for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j) {
            if (i == j) continue;
            if (labels[j] == labels[i]) {
                intra += dist(i, j);
                ++intra_n;
            } else {
                auto& acc = inter[labels[j]];
                acc.first += dist(i, j);
                acc.second += 1;
            }
        }
        if (intra_n == 0 || inter.empty()) continue;
        const double a = intra / static_cast<double>(intra_n);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [lbl, acc] : inter) b = std::min(b, acc.first / static_cast<double>(acc.second));
        const double denom = std::max(a, b);
        total += denom > 0 ? (b - a) / denom : 0.0;
        ++counted;
    }
    if (counted > 0) res.silhouette = total / static_cast<double>(counted);
    return res;
}

ProbeResult feature_cluster_probe(const ModelState& state, const Batch& batch, int layer,
                                  std::uint64_t noise_seed) {
    check(layer >= 0 && layer < state.cfg.n_layers,
          "probe: layer " + std::to_string(layer) + " outside a " +
              std::to_string(state.cfg.n_layers) + "-layer stack");
    nn::Graph g(false);
    ParamGraph pg(g, state.params);
    DiffusionBatch diff;
    const DiffusionBatch* dptr = nullptr;
    if (state.is_transfusion()) {
        diff = draw_diffusion_batch(state, batch, noise_seed, 0.0);
        dptr = &diff;
    }
    ForwardResult fwd = model_forward(g, pg, state, batch, dptr, true);
    return pca_silhouette(fwd.layer_hidden[static_cast<std::size_t>(layer)], fwd.row_modality);
}

}  // namespace motlab
