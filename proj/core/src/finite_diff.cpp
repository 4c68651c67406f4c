// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "adamoe/errors.hpp"
#include "adamoe/tensor.hpp"

namespace adamoe {

FiniteDiffReport finite_diff_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                                   double step, double tol, double magnitude_floor) {
    if (!(step > 0.0)) {
        throw ContractError("finite_diff_check: step must be positive");
    }
    for (Tensor& p : params) {
        p.zero_grad();
    }
    {
        const Tensor loss = loss_fn();
        if (!std::isfinite(loss.item())) {
            throw NumericalError("finite_diff_check: non-finite loss at the base point");
        }
        loss.backward();
    }

    FiniteDiffReport report;
    NoGradGuard no_grad;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        const std::vector<double> tape(p.grad().begin(), p.grad().end());
        auto values = p.mutable_data();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double orig = values[j];
            values[j] = orig + step;
            const double plus = loss_fn().item();
            values[j] = orig - step;
            const double minus = loss_fn().item();
            values[j] = orig;
            if (!std::isfinite(plus) || !std::isfinite(minus)) {
                throw NumericalError("finite_diff_check: non-finite loss perturbing parameter " +
                                     std::to_string(pi) + " element " + std::to_string(j));
            }
            const double fd = (plus - minus) / (2.0 * step);
            const double abs_err = std::abs(tape[j] - fd);
            const double rel_err = abs_err / std::max({std::abs(tape[j]), std::abs(fd), magnitude_floor});
            report.max_abs_error = std::max(report.max_abs_error, abs_err);
            if (rel_err > report.max_rel_error) {
                report.max_rel_error = rel_err;
                report.worst_param = pi;
                report.worst_index = j;
            }
            ++report.checked;
        }
    }
    report.passed = report.max_rel_error <= tol;
    return report;
}

FiniteDiffReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step,
                                   double tol, double magnitude_floor) {
    Tensor leaf = x.clone(true);
    Tensor params[] = {leaf};
    return finite_diff_check([&] { return f(leaf); }, std::span<Tensor>(params), step, tol, magnitude_floor);
}

}  // namespace adamoe
