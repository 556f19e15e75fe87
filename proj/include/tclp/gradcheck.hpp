#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tclp/tensor.hpp"

namespace tclp {

struct GradCheckReport {
    bool pass = true;
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t worst_index = -1;
    double worst_autodiff = 0.0;
    double worst_fd = 0.0;
    int64_t checked = 0;
};

// Compares reverse-mode gradients against central finite differences,
// coordinate by coordinate. `run(with_grad)` must rebuild the forward pass
// from the current parameter values and return the scalar loss; when
// with_grad is true it must also run backward so param.grad is filled.
// Error metric: |ad - fd| / max(|ad|, |fd|, 1), checked against tol.
template <typename T, typename F>
GradCheckReport grad_check(F&& run, const std::vector<std::pair<std::string, TensorT<T>*>>& params, T h,
                           double tol) {
    for (auto& [name, p] : params) {
        p->requires_grad = true;
        p->ensure_grad();
        p->zero_grad();
    }
    run(true);
    std::vector<std::vector<T>> autodiff;
    autodiff.reserve(params.size());
    for (auto& [name, p] : params) autodiff.push_back(p->grad);

    GradCheckReport report;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        TensorT<T>* p = params[pi].second;
        for (size_t i = 0; i < p->data.size(); ++i) {
            T saved = p->data[i];
            p->data[i] = saved + h;
            double f_plus = double(run(false));
            p->data[i] = saved - h;
            double f_minus = double(run(false));
            p->data[i] = saved;
            double fd = (f_plus - f_minus) / (2.0 * double(h));
            double ad = double(autodiff[pi][i]);
            double denom = std::max({std::abs(ad), std::abs(fd), 1.0});
            double err = std::abs(ad - fd) / denom;
            ++report.checked;
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst_param = params[pi].first;
                report.worst_index = int64_t(i);
                report.worst_autodiff = ad;
                report.worst_fd = fd;
            }
        }
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace tclp
