#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "disen/params.hpp"

namespace disen {

struct GradCheckEntry {
    std::string param;
    std::size_t index = 0;
    double analytic = 0;
    double numeric = 0;
    double rel_err = 0;
};

struct GradCheckReport {
    bool ok = true;
    double max_rel_err = 0;
    std::size_t checked = 0;
    std::vector<GradCheckEntry> failures;
    GradCheckEntry worst;
};

// Central-difference check of analytic gradients. `loss` must rebuild the
// graph from the current parameter values on every call. Run at double
// precision; float does not have the headroom for h = 1e-5.
inline GradCheckReport grad_check(ParamStore<double>& params,
                                  const std::function<Value<double>()>& loss,
                                  double h = 1e-5, double tol = 1e-4,
                                  std::size_t max_entries_per_param = 0) {
    params.zero_grad();
    auto root = loss();
    backward(root);

    // Snapshot analytic gradients before perturbing anything.
    std::vector<Tensor<double>> analytic;
    for (auto& [name, v] : params) analytic.push_back(v.grad());

    GradCheckReport report;
    std::size_t pi = 0;
    for (auto& [name, v] : params) {
        auto& val = v.node().value;
        std::size_t n = val.numel();
        std::size_t limit = max_entries_per_param > 0 ? std::min(n, max_entries_per_param) : n;
        // Stride so a capped check still touches entries across the tensor.
        std::size_t stride = limit < n ? n / limit : 1;
        for (std::size_t s = 0; s < limit; ++s) {
            std::size_t i = s * stride;
            double keep = val.data[i];
            val.data[i] = keep + h;
            double fp = loss().scalar();
            val.data[i] = keep - h;
            double fm = loss().scalar();
            val.data[i] = keep;

            double numeric = (fp - fm) / (2.0 * h);
            double a = analytic[pi].data[i];
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-3});
            double rel = std::fabs(a - numeric) / denom;

            ++report.checked;
            GradCheckEntry e{name, i, a, numeric, rel};
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = e;
            }
            if (rel > tol) {
                report.ok = false;
                if (report.failures.size() < 16) report.failures.push_back(e);
            }
        }
        ++pi;
    }
    return report;
}

}  // namespace disen
