#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cb/tensor.hpp"

namespace cb {

struct GradCheckReport {
    std::string parameter_name;
    double max_relative_error = 0.0;
    bool passed = false;
};

constexpr double kGradCheckTolerance = 1e-4;
constexpr double kGradCheckEpsilon = 1e-5;

// Central-difference gradient of a scalar-valued function, element by element.
// fn must be deterministic; a non-scalar result is an invalid-input error.
Tensor finite_difference_grad(const std::function<Tensor(const Tensor&)>& fn, const Tensor& input,
                              double epsilon = kGradCheckEpsilon);

// Relative error between an analytic and a finite-difference gradient:
// max_i |a_i - f_i| / max(|a_i|, |f_i|, 1e-3).
double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& fd);

// Checks the analytic gradient of `loss_fn` w.r.t. `target` (a leaf used inside
// loss_fn). The analytic side runs backward once; the finite-difference side
// perturbs target's data in place and re-evaluates.
GradCheckReport check_gradient(const std::function<Tensor()>& loss_fn, Tensor target,
                               const std::string& name, double epsilon = kGradCheckEpsilon,
                               double tolerance = kGradCheckTolerance);

// Gradient checks for every trainable block in the pipeline at toy widths.
// Implemented alongside the model code; declared here so the CLI and the
// acceptance suite share it.
std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed);

}  // namespace cb
