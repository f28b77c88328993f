#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "params.hpp"

namespace motlab {

struct GradReport {
    std::string param_name;
    double max_rel_err = 0;
    double max_abs_err = 0;
    int n_probed = 0;
};

/// loss(params, grads_out): returns the scalar loss; when grads_out is
/// non-null, also fills d(loss)/d(param) per tensor name. Must be
/// deterministic in params.
using LossFn = std::function<double(const ParamStore&, std::map<std::string, Tensor>*)>;

/// Compares the analytic gradient of loss_fn against central differences
/// (f(th+h e) - f(th-h e)) / 2h at probes_per_tensor random coordinates of
/// every tensor. Relative error uses denominator max(|analytic|, |numeric|,
/// 1e-12). A non-finite loss aborts with the parameter being probed.
std::vector<GradReport> check_gradients(const LossFn& loss_fn, ParamStore& params, double h,
                                        double tol_rel, int probes_per_tensor,
                                        std::uint64_t seed);

bool all_within(const std::vector<GradReport>& reports, double tol_rel);
std::string report_table(const std::vector<GradReport>& reports, double tol_rel);

}  // namespace motlab
