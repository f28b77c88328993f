#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "rng.hpp"

namespace motlab {

std::vector<GradReport> check_gradients(const LossFn& loss_fn, ParamStore& params, double h,
                                        double tol_rel, int probes_per_tensor,
                                        std::uint64_t seed) {
    check(h > 0, "check_gradients: h must be positive");
    (void)tol_rel;  // recorded by callers; the check itself just reports

    std::map<std::string, Tensor> grads;
    const double base = loss_fn(params, &grads);
    if (!std::isfinite(base)) throw NumericError("check_gradients: base loss is not finite");

    std::vector<GradReport> reports;
    params.for_each([&](const std::string& name, Tensor& t) {
        GradReport rep;
        rep.param_name = name;
        auto git = grads.find(name);
        Philox rng(seed, fnv1a64(name.data(), name.size()));
        const int probes =
            static_cast<int>(std::min<std::int64_t>(probes_per_tensor, t.numel()));
        for (int p = 0; p < probes; ++p) {
            const std::int64_t idx = static_cast<std::int64_t>(
                rng.below(static_cast<std::uint64_t>(t.numel())));
            const double orig = t.at(idx);
            t.set(idx, orig + h);
            const double plus = loss_fn(params, nullptr);
            t.set(idx, orig - h);
            const double minus = loss_fn(params, nullptr);
            t.set(idx, orig);
            if (!std::isfinite(plus) || !std::isfinite(minus))
                throw NumericError("check_gradients: non-finite loss while probing '" + name +
                                   "'");
            const double numeric = (plus - minus) / (2.0 * h);
            const double analytic = git != grads.end() ? git->second.at(idx) : 0.0;
            const double abs_err = std::abs(analytic - numeric);
            const double rel_err =
                abs_err / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
            rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
            rep.max_rel_err = std::max(rep.max_rel_err, rel_err);
            ++rep.n_probed;
        }
        reports.push_back(std::move(rep));
    });
    return reports;
}

bool all_within(const std::vector<GradReport>& reports, double tol_rel) {
    return std::all_of(reports.begin(), reports.end(),
                       [&](const GradReport& r) { return r.max_rel_err < tol_rel; });
}

std::string report_table(const std::vector<GradReport>& reports, double tol_rel) {
    std::ostringstream os;
    os << std::left << std::setw(40) << "parameter" << std::setw(14) << "max_rel_err"
       << std::setw(14) << "max_abs_err" << std::setw(8) << "probes" << "status\n";
    for (const auto& r : reports) {
        os << std::left << std::setw(40) << r.param_name << std::setw(14) << std::scientific
           << std::setprecision(3) << r.max_rel_err << std::setw(14) << r.max_abs_err
           << std::setw(8) << r.n_probed << (r.max_rel_err < tol_rel ? "ok" : "FAIL") << "\n";
    }
    return os.str();
}

}  // namespace motlab
